"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime error. The one-line result
goes to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import math
import os
import re
import sys
from dataclasses import dataclass
from typing import Optional
from xml.sax.saxutils import escape

from kuht import calibration as cal
from kuht import harness
from kuht import large_deviations as ld
from kuht.errors import InvalidInputError, KuhtError
from kuht.kernels import parse_kernel
from kuht.targets import RngStream, finite, kld, parse_model

KIND_ALIASES = {
    "simple": "simple_mmd",
    "two": "two_sample_mmd",
    "ksd": "ksd_v",
    "ksd_v": "ksd_v",
    "ksd_u": "ksd_u",
    "sup": "sup_family",
    "lr": "lr_oracle",
}

FINITE_DEMO = ((0.5, 0.5), (0.9, 0.1))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _alpha(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("need one or more positive integers")
    return values


def _float_list(text):
    try:
        return [float(v) for v in text.split(";") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ';'-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kuht", description="Kernel hypothesis tests and exact error analysis.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=42, help="master seed (default 42)")

    def test_flags(p):
        p.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES))
        p.add_argument("--model", required=True, help="model P, e.g. gauss:mu=0,sigma2=1")
        p.add_argument("--kernel", help="e.g. gaussian:w=1 (not used by lr)")
        p.add_argument("--alt", help="alternative model Q (lr test only)")
        p.add_argument("--alpha", type=_alpha, default=0.1)
        p.add_argument("--n", type=_positive_int, required=True)
        p.add_argument("--m", type=_positive_int, help="model sample size for two-sample kinds")
        p.add_argument("--m-rule", default="pow15", help="pow15, equal or ratio:c (when --m is absent)")
        p.add_argument("--threshold", default="dfree",
                       help="dfree, mc:B=500, perm:B=500, wild:B=500 or min:<rule>")
        p.add_argument("--unbiased", action="store_true", help="unbiased MMD statistic")
        common(p)

    p = sub.add_parser("test", help="run one test on a simulated sample")
    test_flags(p)
    p.add_argument("--data-model", help="model that generates the observations (default: --model)")

    p = sub.add_parser("calibrate", help="print a threshold for the given test")
    test_flags(p)

    p = sub.add_parser("experiment", help="error-rate curves of a preset experiment")
    p.add_argument("--preset", required=True, choices=harness.PRESETS)
    p.add_argument("--out", default="results", help="output directory (default results/)")
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--grid", type=_int_list, help="comma-separated sample sizes")
    p.add_argument("--tests", help="comma-separated subset of simple,two,ksd,lr")
    p.add_argument("--perturbation", type=float, default=1.0, help="gauss_mixture mean shift scale")
    p.add_argument("--bandwidth", default="median", help="gauss_mixture bandwidth: median or a number")
    common(p)

    p = sub.add_parser("sanov", help="finite-n Sanov sandwich report on a finite alphabet")
    p.add_argument("--p", required=True, type=_float_list)
    p.add_argument("--q", required=True, type=_float_list)
    p.add_argument("--gamma", required=True, type=float)
    p.add_argument("--n", required=True, type=_int_list)
    p.add_argument("--m", type=_positive_int, help="also run the two-sample check with this m")
    p.add_argument("--out", default="sanov_report.json")
    common(p)

    p = sub.add_parser("exponent", help="fit a type-II error exponent")
    p.add_argument("--preset", required=True, choices=["finite-demo"])
    p.add_argument("--mode", choices=["exact", "lr"], default="exact")
    p.add_argument("--grid", type=_int_list, help="sample sizes (default 20..60 step 10 exact, 5..20 step 5 lr)")
    p.add_argument("--trials", type=_positive_int, default=2000)
    p.add_argument("--alpha", type=_alpha, default=0.1)
    common(p)
    return parser


@dataclass
class CliConfig:
    subcommand: str
    seed: int
    args: argparse.Namespace
    out: Optional[str] = None
    experiment: Optional[harness.ExperimentConfig] = None


def _flag_error(flag, exc):
    return UsageError(f"{flag}: {exc}")


def _test_config(args) -> harness.ExperimentConfig:
    kind = KIND_ALIASES[args.kind]
    try:
        model = parse_model(args.model)
    except InvalidInputError as exc:
        raise _flag_error("--model", exc) from exc
    alt = model
    if args.alt is not None:
        try:
            alt = parse_model(args.alt)
        except InvalidInputError as exc:
            raise _flag_error("--alt", exc) from exc
    elif kind == "lr_oracle":
        raise UsageError("--alt is required for the lr test")
    spec = None
    if kind != "lr_oracle":
        if args.kernel is None:
            raise UsageError(f"--kernel is required for the {args.kind} test")
        try:
            spec = parse_kernel(args.kernel)
        except (InvalidInputError, TypeError) as exc:
            raise _flag_error("--kernel", exc) from exc
    try:
        rule = cal.parse_rule(args.threshold, args.alpha)
    except InvalidInputError as exc:
        raise _flag_error("--threshold", exc) from exc
    m_rule = args.m_rule
    try:
        return harness.ExperimentConfig(
            kind=kind, model_p=model, model_q=alt, kernel=spec, rule=rule, n_grid=(args.n,),
            m_rule=m_rule, trials=1, seed=args.seed, unbiased=args.unbiased,
        )
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc


def parse_args(argv) -> CliConfig:
    args = build_parser().parse_args(argv)
    cfg = CliConfig(args.subcommand, args.seed, args, getattr(args, "out", None))
    if args.subcommand in ("test", "calibrate"):
        cfg.experiment = _test_config(args)
        if args.subcommand == "test" and args.data_model is not None:
            try:
                parse_model(args.data_model)
            except InvalidInputError as exc:
                raise _flag_error("--data-model", exc) from exc
    elif args.subcommand == "experiment":
        if args.tests:
            unknown = set(args.tests.split(",")) - {"simple", "two", "ksd", "lr"}
            if unknown:
                raise UsageError(f"--tests: unknown test(s) {sorted(unknown)}")
        if args.bandwidth != "median":
            try:
                float(args.bandwidth)
            except ValueError:
                raise UsageError(f"--bandwidth: expected 'median' or a number, got {args.bandwidth!r}") from None
    elif args.subcommand == "sanov":
        if not args.gamma > 0:
            raise UsageError("--gamma must be positive")
    return cfg


# SVG -----------------------------------------------------------------------

_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 150, 40, 50
_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _num(v: float) -> str:
    return "%.17g" % v


def emit_svg(series: dict, path, column: str = "type2_hat", log_y: bool = False,
             title: str = "", ylabel: Optional[str] = None) -> str:
    """Write a line chart with one polyline per curve in ``series`` (label -> ErrorCurve).

    Each polyline carries ``data-values="n:value;..."`` with the exact plotted
    values so the chart can be checked against the CSV. With ``log_y`` zero
    values are drawn at the lower edge of the axis.
    """
    if not series:
        raise InvalidInputError("nothing to plot")
    for label, curve in series.items():
        if len(curve.rows) < 2:
            raise InvalidInputError(f"series {label!r} needs at least 2 rows")
    xs = [r.n for c in series.values() for r in c.rows]
    ys = [getattr(r, column) for c in series.values() for r in c.rows]
    x_lo, x_hi = math.log(min(xs)), math.log(max(xs))
    if log_y:
        positive = [y for y in ys if y > 0]
        y_floor = min(positive) / 2 if positive else 1e-3
        y_lo, y_hi = math.log10(y_floor), math.log10(max(max(ys), y_floor * 10))
    else:
        y_lo, y_hi = min(0.0, min(ys)), max(ys) if max(ys) > min(0.0, min(ys)) else 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    plot_w, plot_h = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(x):
        return _LEFT + (math.log(x) - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        if log_y:
            y = math.log10(max(y, 10 ** y_lo))
        return _TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{_LEFT}" y1="{_TOP + plot_h}" x2="{_LEFT + plot_w}" y2="{_TOP + plot_h}" stroke="black"/>',
        f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_TOP + plot_h}" stroke="black"/>',
    ]
    for n in sorted(set(xs)):
        x = px(n)
        out.append(f'<line x1="{x:.3f}" y1="{_TOP + plot_h}" x2="{x:.3f}" y2="{_TOP + plot_h + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.3f}" y="{_TOP + plot_h + 18}" text-anchor="middle">{n}</text>')
    for k in range(5):
        frac = k / 4
        yv = y_lo + frac * (y_hi - y_lo)
        label = f"{10 ** yv:.3g}" if log_y else f"{yv:.3g}"
        y = _TOP + plot_h - frac * plot_h
        out.append(f'<line x1="{_LEFT - 5}" y1="{y:.3f}" x2="{_LEFT}" y2="{y:.3f}" stroke="black"/>')
        out.append(f'<text x="{_LEFT - 8}" y="{y + 4:.3f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{_LEFT + plot_w / 2:.1f}" y="{_H - 10}" text-anchor="middle">sample size n (log scale)</text>')
    ytitle = escape(ylabel or column) + (" (log scale)" if log_y else "")
    out.append(f'<text x="16" y="{_TOP + plot_h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_TOP + plot_h / 2:.1f})">{ytitle}</text>')
    for idx, (label, curve) in enumerate(series.items()):
        colour = _COLOURS[idx % len(_COLOURS)]
        points = " ".join(f"{px(r.n):.3f},{py(getattr(r, column)):.3f}" for r in curve.rows)
        values = ";".join(f"{r.n}:{_num(getattr(r, column))}" for r in curve.rows)
        out.append(f'<polyline data-series="{escape(label)}" data-values="{values}" points="{points}" '
                   f'fill="none" stroke="{colour}" stroke-width="2"/>')
        ly = _TOP + 10 + 18 * idx
        lx = _LEFT + plot_w + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return text


def parse_svg_values(text: str) -> dict:
    """Recover ``label -> [(n, value), ...]`` from an SVG written by :func:`emit_svg`."""
    out = {}
    for label, values in re.findall(r'<polyline data-series="([^"]*)" data-values="([^"]*)"', text):
        out[label] = [(int(a), float(b)) for a, b in (item.split(":") for item in values.split(";"))]
    return out


# subcommands ---------------------------------------------------------------

_TEST_NAMES = {"simple": "simple_mmd", "two": "two_sample_mmd", "ksd": "ksd_v", "lr": "lr_oracle"}


def _model_size(args, exp) -> int:
    return args.m if args.m is not None else harness.m_rule(args.n, exp.m_rule)


def _cmd_test(cfg: CliConfig) -> str:
    args, exp = cfg.args, cfg.experiment
    rng = RngStream(cfg.seed, 0)
    source = parse_model(args.data_model) if args.data_model else exp.model_p
    gen = rng.generator
    X = source.draw(args.n, gen)
    data = X
    if exp.two_sample:
        data = (exp.model_p.draw(_model_size(args, exp), gen), X)
    report = harness.run_test(exp, data, rng)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return (f"{report.decision} statistic={_num(report.statistic)} "
            f"threshold={_num(report.threshold)} rule={report.rule}")


def _cmd_calibrate(cfg: CliConfig) -> str:
    args, exp = cfg.args, cfg.experiment
    rng = RngStream(cfg.seed, 0)
    gen = rng.generator
    data = exp.model_p.draw(args.n, gen)
    m = None
    if exp.two_sample:
        m = _model_size(args, exp)
        data = (exp.model_p.draw(m, gen), data)
    report = harness.run_test(exp, data, rng)
    parts = [f"threshold={_num(report.threshold)}", f"rule={report.rule}", f"n={args.n}"]
    if m is not None:
        parts.append(f"m={m}")
    if report.dfree_threshold is not None:
        parts.append(f"dfree={_num(report.dfree_threshold)}")
    return " ".join(parts)


def run_experiment(preset: str, seed: int, out: str, tests=None, **options):
    """Run the listed tests of a preset, write their CSVs and plots under ``out``.

    Returns ``(curves, paths)`` with curves keyed by short test name.
    """
    names = list(tests) if tests else list(_TEST_NAMES)
    os.makedirs(out, exist_ok=True)
    curves, paths = {}, []
    for short in names:
        exp = harness.preset(preset, _TEST_NAMES[short], seed, **options)
        print(f"running {exp.name} over n={list(exp.n_grid)} with {exp.trials} trials",
              file=sys.stderr)
        curve = harness.estimate_error_rates(exp)
        path = os.path.join(out, f"{exp.name}.csv")
        curve.to_csv(path)
        paths.append(path)
        curves[short] = curve
    if all(len(c.rows) >= 2 for c in curves.values()):
        for column, log_y, label in (("type2_hat", True, "type-II error"),
                                     ("type1_hat", False, "type-I error")):
            path = os.path.join(out, f"{preset}_{column.split('_')[0]}.svg")
            emit_svg(curves, path, column, log_y, f"{preset} (seed {seed})", label)
            paths.append(path)
    else:
        print("single grid point: no plots written", file=sys.stderr)
    return curves, paths


def _cmd_experiment(cfg: CliConfig) -> str:
    args = cfg.args
    options = {"perturbation": args.perturbation, "bandwidth": args.bandwidth}
    if args.trials is not None:
        options["trials"] = args.trials
    if args.grid is not None:
        options["n_grid"] = args.grid
    tests = args.tests.split(",") if args.tests else None
    _, paths = run_experiment(args.preset, cfg.seed, args.out, tests, **options)
    return " ".join(paths)


def _cmd_sanov(cfg: CliConfig) -> str:
    args = cfg.args
    report = ld.sanov_sandwich_check(args.p, args.q, args.gamma, args.n)
    text = report.to_json()
    if args.m is not None:
        ext = ld.extended_sanov_check(args.p, args.q, args.gamma, args.m, args.n[0])
        text = "[\n" + text.rstrip("\n") + ",\n" + ext.to_json().rstrip("\n") + "\n]\n"
        ok = report.holds and ext.holds
    else:
        ok = report.holds
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    if not ok:
        print("sandwich inequalities violated; see report", file=sys.stderr)
    return args.out


def _cmd_exponent(cfg: CliConfig) -> str:
    args = cfg.args
    P, Q = FINITE_DEMO
    reference = kld(finite(P), finite(Q))
    if args.mode == "exact":
        grid = args.grid or [20, 30, 40, 50, 60]
        curve = harness.exact_delta_curve(P, Q, grid, args.alpha)
    else:
        grid = args.grid or [5, 10, 15, 20]
        exp = harness.ExperimentConfig(
            kind="lr_oracle", model_p=finite(P), model_q=finite(Q), kernel=None,
            rule=cal.ThresholdRule(cal.MONTE_CARLO, args.alpha, B=args.trials),
            n_grid=tuple(grid), trials=args.trials, seed=cfg.seed,
        )
        curve = harness.estimate_error_rates(exp)
    fit = harness.fit_exponent(curve)
    return (f"slope={fit.slope:.6f} r2={fit.r2:.6f} rows_used={fit.used} dropped={fit.dropped} "
            f"D(P||Q)={reference:.6f}")


_COMMANDS = {
    "test": _cmd_test,
    "calibrate": _cmd_calibrate,
    "experiment": _cmd_experiment,
    "sanov": _cmd_sanov,
    "exponent": _cmd_exponent,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        line = _COMMANDS[cfg.subcommand](cfg)
    except (KuhtError, ValueError, TypeError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
