"""Running tests, estimating error rates over repeated trials, fitting exponents.

Every random draw in an experiment comes from an :class:`RngStream` keyed by
the master seed and a stream id built from (size index, hypothesis, trial),
so an error curve is a pure function of its config. Per-trial results are
stored by index and reduced with ``math.fsum``, which makes the output
independent of how trials are scheduled across workers.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats as _stats

from kuht import calibration as cal
from kuht import ksd as _ksd
from kuht import large_deviations as ld
from kuht import mmd as _mmd
from kuht.errors import InsufficientDataError, InvalidInputError
from kuht.kernels import KernelSpec, as_samples, gaussian, median_bandwidth
from kuht.targets import RngStream, TargetModel, gauss, kld, laplace, mixture

ACCEPT = "accept_H0"
REJECT = "reject_H0"

KIND_STATISTIC = {
    "simple_mmd": "mmd_biased_model",
    "two_sample_mmd": "mmd_biased_two",
    "ksd_v": "ksd_vstat",
    "ksd_u": "ksd_ustat",
    "sup_family": "sup_family",
    "lr_oracle": "lr",
}
_UNBIASED_STATISTIC = {"simple_mmd": "mmd_unbiased_model", "two_sample_mmd": "mmd_unbiased_two"}
TWO_SAMPLE_KINDS = ("two_sample_mmd", "sup_family")

# hypothesis slot of the stream id: 0 and 1 are H0/H1 data, the rest are reserved
_H_CALIBRATION = 2
_H_PRESET = 3

CSV_HEADER = ("n", "m", "trials", "type1_hat", "type2_hat", "mean_stat_h0",
              "mean_stat_h1", "threshold_mean", "seed")


def stream_id(size_index: int, hypothesis: int, trial: int) -> int:
    return (size_index << 40) | (hypothesis << 32) | trial


@dataclass
class TestReport:
    statistic: float
    threshold: float
    rule: cal.ThresholdRule
    decision: str
    warnings: list = field(default_factory=list)
    seeds: tuple = (None, None)
    dfree_threshold: Optional[float] = None
    data_threshold: Optional[float] = None

    __test__ = False  # keep pytest from collecting this class

    @property
    def rejected(self) -> bool:
        return self.decision == REJECT


def decide(statistic: float, threshold: float) -> str:
    return REJECT if statistic > threshold else ACCEPT


@dataclass
class ExperimentConfig:
    kind: str
    model_p: TargetModel
    model_q: TargetModel
    kernel: Optional[KernelSpec]
    rule: cal.ThresholdRule
    n_grid: tuple = (25, 50, 100, 200, 400)
    m_rule: str = "pow15"
    trials: int = 500
    seed: int = 42
    unbiased: bool = False
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KIND_STATISTIC:
            raise InvalidInputError(f"unknown test kind {self.kind!r}")
        self.n_grid = tuple(int(n) for n in self.n_grid)
        if not self.n_grid or min(self.n_grid) < 2:
            raise InvalidInputError("n grid must be nonempty with every n >= 2")
        if self.trials < 1:
            raise InvalidInputError("need at least one trial")
        if self.kind != "lr_oracle" and self.kernel is None:
            raise InvalidInputError(f"{self.kind} needs a kernel")
        if self.unbiased and self.kind not in _UNBIASED_STATISTIC:
            raise InvalidInputError(f"{self.kind} has no unbiased variant")
        m_rule(self.n_grid[0], self.m_rule)

    @property
    def alpha(self) -> float:
        return self.rule.alpha

    @property
    def statistic(self) -> str:
        if self.unbiased:
            return _UNBIASED_STATISTIC[self.kind]
        return KIND_STATISTIC[self.kind]

    @property
    def two_sample(self) -> bool:
        return self.kind in TWO_SAMPLE_KINDS


def m_rule(n: int, rule: str) -> int:
    """Model-sample size for a two-sample test with ``n`` observations.

    ``pow15`` gives ``ceil(n^1.5)``, ``equal`` gives ``n`` and ``ratio:c``
    (``0 < c < 1``) gives ``ceil(n c / (1 - c))`` so that ``m/(m+n)`` tends to ``c``.
    """
    if n < 1:
        raise InvalidInputError("n must be positive")
    if rule == "pow15":
        cube = n ** 3
        m = math.isqrt(cube)
        return m if m * m == cube else m + 1
    if rule == "equal":
        return n
    name, _, value = rule.partition(":")
    if name == "ratio":
        value = value.removeprefix("c=")
        try:
            c = float(value)
        except ValueError:
            raise InvalidInputError(f"bad ratio in m rule {rule!r}") from None
        if not 0.0 < c < 1.0:
            raise InvalidInputError("ratio c must lie in (0, 1)")
        return max(1, math.ceil(n * c / (1.0 - c) - 1e-9))
    raise InvalidInputError(f"unknown m rule {rule!r}")


@dataclass
class TrialData:
    X: np.ndarray
    Y: Optional[np.ndarray] = None


def _as_trial_data(data) -> TrialData:
    if isinstance(data, TrialData):
        return data
    if isinstance(data, tuple) and len(data) == 2:
        return TrialData(as_samples(data[1]), as_samples(data[0]))
    return TrialData(as_samples(data))


def run_test(config: ExperimentConfig, data, rng=None, mc_cache: Optional[dict] = None) -> TestReport:
    """One test decision on ``data``.

    ``data`` is the observed sample, or a ``(Y, X)`` pair (model sample first)
    for two-sample kinds. Data-driven thresholds draw from ``rng.child(1)``.
    ``mc_cache`` maps a sample size to a precomputed Monte Carlo threshold.
    """
    data = _as_trial_data(data)
    rng = rng if isinstance(rng, RngStream) else RngStream(config.seed if rng is None else rng)
    X = data.X
    n = X.shape[0]
    m = None
    stat_name = config.statistic
    rule = config.rule
    alpha = config.alpha
    spec = config.kernel
    warnings: list[str] = []
    H_p = None
    inner = rule.data_driven
    boot = rng.child(1)

    if config.two_sample:
        if data.Y is None:
            raise InvalidInputError("two-sample test needs a model sample Y")
        Y = data.Y
        m = Y.shape[0]
        factors = [_mmd.PooledFactor(k, Y, X) for k in spec.members()]
        if config.kind == "sup_family":
            statistic = max(math.sqrt(f.observed(_mmd.BIASED)) for f in factors)
        else:
            kind = _mmd.UNBIASED if config.unbiased else _mmd.BIASED
            statistic = factors[0].observed(kind)
    elif config.kind in ("ksd_v", "ksd_u"):
        ctx = _ksd.SteinContext(config.model_p, spec)
        warnings.extend(_ksd.stein_warnings(ctx))
        H = _ksd.stein_gram(ctx, X)
        H_p = float(np.max(np.diag(H)))
        fn = _ksd.ksd2_vstat if config.kind == "ksd_v" else _ksd.ksd2_ustat
        statistic = fn(ctx, X, H)
    else:
        statistic = cal.model_statistic(stat_name, config.model_p, spec, config.model_q)(X)

    dfree = None
    if cal.STATISTICS[stat_name][1] is not None:
        K = spec.K
        dfree = cal.dfree_for_statistic(stat_name, K, n, m, alpha, H_p)

    data_thr = None
    if inner is not None:
        if inner.kind == cal.MONTE_CARLO:
            if config.two_sample:
                raise InvalidInputError("Monte Carlo thresholds are for one-sample tests")
            if mc_cache is not None and n in mc_cache:
                data_thr = mc_cache[n]
            else:
                data_thr = cal.mc_threshold(config.model_p, spec, stat_name, n, alpha, inner.B,
                                            boot, config.model_q)
        elif inner.kind == cal.PERMUTATION:
            if not config.two_sample:
                raise InvalidInputError("permutation thresholds are for two-sample tests")
            data_thr = cal.permutation_threshold(spec, Y, X, stat_name, alpha, inner.B, boot, factors)
        elif inner.kind == cal.WILD:
            if config.kind not in ("ksd_v", "ksd_u"):
                raise InvalidInputError("wild bootstrap thresholds are for Stein statistics")
            data_thr = cal.wild_threshold(ctx, X, stat_name, alpha, inner.B, boot, H)

    if rule.kind == cal.DFREE:
        if dfree is None:
            raise InvalidInputError(f"{stat_name} has no distribution-free threshold")
        threshold = dfree
    elif rule.kind == cal.MIN_COMBO:
        if dfree is None:
            raise InvalidInputError(f"{stat_name} has no distribution-free threshold")
        threshold = cal.combine_min(data_thr, dfree)
    else:
        threshold = data_thr

    return TestReport(float(statistic), float(threshold), rule, decide(statistic, threshold),
                      warnings, rng.seeds, dfree, data_thr)


def lr_oracle(model_p: TargetModel, model_q: TargetModel, X, alpha: float = 0.1,
              B: int = 500, rng=None) -> TestReport:
    """Likelihood-ratio test with both models known, calibrated by Monte Carlo under ``model_p``."""
    rng = rng if isinstance(rng, RngStream) else RngStream(42 if rng is None else rng)
    X = as_samples(X)
    statistic = cal.lr_statistic(model_p, model_q, X)
    threshold = cal.mc_threshold(model_p, None, "lr", X.shape[0], alpha, B, rng.child(1), model_q)
    rule = cal.ThresholdRule(cal.MONTE_CARLO, alpha, B=B)
    return TestReport(statistic, threshold, rule, decide(statistic, threshold), [], rng.seeds,
                      None, threshold)


@dataclass
class ErrorRow:
    n: int
    m: Optional[int]
    trials: int
    type1_hat: float
    type2_hat: float
    mean_stat_h0: float
    mean_stat_h1: float
    threshold_mean: float
    seed: int
    # share of trials whose data-driven threshold undercut the distribution-free one
    frac_below_dfree: float = math.nan


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


@dataclass
class ErrorCurve:
    rows: list = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        for r in self.rows:
            if r.trials < 1:
                raise InvalidInputError("trials must be >= 1")
            if not (0.0 <= r.type1_hat <= 1.0 and 0.0 <= r.type2_hat <= 1.0):
                raise InvalidInputError("error rates must lie in [0, 1]")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self, path=None) -> str:
        lines = [",".join(CSV_HEADER)]
        for r in self.rows:
            lines.append(",".join(_fmt(getattr(r, c)) for c in CSV_HEADER))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str, label: str = "") -> ErrorCurve:
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise InvalidInputError(f"unexpected CSV header {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append(ErrorRow(
                n=int(rec["n"]), m=int(rec["m"]) if rec["m"] else None,
                trials=int(rec["trials"]), type1_hat=float(rec["type1_hat"]),
                type2_hat=float(rec["type2_hat"]), mean_stat_h0=float(rec["mean_stat_h0"]),
                mean_stat_h1=float(rec["mean_stat_h1"]),
                threshold_mean=float(rec["threshold_mean"]), seed=int(rec["seed"]),
            ))
        return cls(rows, label)


def worker_count() -> int:
    """Worker cap from ``KUHT_THREADS`` (unset or 0 means one per CPU)."""
    raw = os.environ.get("KUHT_THREADS", "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError:
        raise InvalidInputError(f"KUHT_THREADS must be an integer, got {raw!r}") from None
    if value < 0:
        raise InvalidInputError("KUHT_THREADS must be >= 0")
    return value if value > 0 else (os.cpu_count() or 1)


def draw_trial(config: ExperimentConfig, n: int, m: Optional[int], rng: RngStream,
               hypothesis: int) -> TrialData:
    """Observed sample from P (H0) or Q (H1); for two-sample kinds also m model points."""
    gen = rng.generator
    source = config.model_p if hypothesis == 0 else config.model_q
    X = source.draw(n, gen)
    Y = config.model_p.draw(m, gen) if m is not None else None
    return TrialData(X, Y)


def _one_trial(config, j, h, i, n, m, mc_cache):
    rng = RngStream(config.seed, stream_id(j, h, i))
    data = draw_trial(config, n, m, rng, h)
    rep = run_test(config, data, rng, mc_cache)
    return rep.statistic, rep.threshold, rep.rejected, rep.dfree_threshold, rep.data_threshold


def calibration_threshold(config: ExperimentConfig, j: int, n: int) -> Optional[float]:
    """Shared Monte Carlo threshold for grid point ``j``; None for other rules."""
    inner = config.rule.data_driven
    if inner is None or inner.kind != cal.MONTE_CARLO:
        return None
    rng = RngStream(config.seed, stream_id(j, _H_CALIBRATION, 0))
    return cal.mc_threshold(config.model_p, config.kernel, config.statistic, n, config.alpha,
                            inner.B, rng, config.model_q)


def estimate_error_rates(config: ExperimentConfig, workers: Optional[int] = None) -> ErrorCurve:
    workers = worker_count() if workers is None else max(1, int(workers))
    rows = []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for j, n in enumerate(config.n_grid):
            m = m_rule(n, config.m_rule) if config.two_sample else None
            cache = {}
            shared = calibration_threshold(config, j, n)
            if shared is not None:
                cache[n] = shared
            jobs = [(h, i) for h in (0, 1) for i in range(config.trials)]

            def task(job, n=n, m=m, j=j, cache=cache):
                return _one_trial(config, j, job[0], job[1], n, m, cache)

            results = list(pool.map(task, jobs)) if pool else [task(job) for job in jobs]
            rows.append(_summarise(config, n, m, results))
    finally:
        if pool is not None:
            pool.shutdown()
    return ErrorCurve(rows, config.name or config.kind)


def _summarise(config, n, m, results) -> ErrorRow:
    T = config.trials
    h0, h1 = results[:T], results[T:]
    type1 = sum(r[2] for r in h0) / T
    type2 = sum(not r[2] for r in h1) / T
    pairs = [(r[4], r[3]) for r in results if r[3] is not None and r[4] is not None]
    frac = sum(d < f for d, f in pairs) / len(pairs) if pairs else math.nan
    return ErrorRow(
        n=n, m=m, trials=T, type1_hat=type1, type2_hat=type2,
        mean_stat_h0=math.fsum(r[0] for r in h0) / T,
        mean_stat_h1=math.fsum(r[0] for r in h1) / T,
        threshold_mean=math.fsum(r[1] for r in results) / len(results),
        seed=config.seed, frac_below_dfree=frac,
    )


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    r2: float
    used: int
    dropped: int


def fit_exponent(curve: ErrorCurve, against: str = "n") -> ExponentFit:
    """OLS of ``-log(type2_hat)`` on ``n`` or ``m + n``; rows with rate 0 or 1 are dropped."""
    if against not in ("n", "m_plus_n"):
        raise InvalidInputError(f"unknown size variable {against!r}")
    xs, ys = [], []
    for r in curve.rows:
        if 0.0 < r.type2_hat < 1.0:
            size = r.n if against == "n" else r.n + (r.m or 0)
            xs.append(float(size))
            ys.append(-math.log(r.type2_hat))
    dropped = len(curve.rows) - len(xs)
    if len(xs) < 3:
        raise InsufficientDataError(f"need >= 3 rows with 0 < type2 < 1, have {len(xs)}")
    res = _stats.linregress(xs, ys)
    r2 = float(res.rvalue ** 2) if np.isfinite(res.rvalue) else 1.0
    return ExponentFit(float(res.slope), float(res.intercept), r2, len(xs), dropped)


def exact_delta_curve(P, Q, ns, alpha: float = 0.1) -> ErrorCurve:
    """Exact error rates of the delta-kernel simple test with its distribution-free threshold.

    Rows carry ``trials = 1`` (nothing was simulated) and the threshold in
    ``threshold_mean``; statistic means are not defined and left NaN.
    """
    rows = []
    for n in ns:
        gamma = cal.dfree_threshold("simple", 1.0, int(n), alpha=alpha)
        t1, t2 = ld.exact_error_probs(P, Q, gamma, int(n))
        rows.append(ErrorRow(int(n), None, 1, t1, t2, math.nan, math.nan, gamma, 0))
    return ErrorCurve(rows, "exact_delta")


# presets -------------------------------------------------------------------

PRESETS = ("gauss_vs_laplace", "gauss_mixture")

_SUITE_RULES = {
    "simple_mmd": "mc:B=500",
    "two_sample_mmd": "perm:B=500",
    "ksd_v": "wild:B=500",
    "lr_oracle": "mc:B=500",
}


def _mixture_models(seed: int, perturbation: float):
    gen = RngStream(seed, stream_id(0, _H_PRESET, 0)).generator
    means = gen.uniform(0.0, 10.0, size=5)
    noise = gen.standard_normal(5)
    weights = np.full(5, 0.2)
    model_q = mixture(weights, means, 1.0)
    model_p = mixture(weights, means + perturbation * noise, 1.0)
    return model_p, model_q


def preset(name: str, kind: str = "simple_mmd", seed: int = 42, *, rule: Optional[str] = None,
           n_grid=None, trials: Optional[int] = None, perturbation: float = 1.0,
           bandwidth="median", m_rule_name: str = "pow15") -> ExperimentConfig:
    """Configuration of one test in a named experiment.

    ``gauss_vs_laplace``: P = N(0, 8), Q = Laplace(0, 2) (equal means and
    variances), Gaussian kernel w = 1. ``gauss_mixture``: Q is an equal-weight
    five-component unit-variance mixture with seeded Uniform[0, 10] means and
    P shifts each mean by ``perturbation`` times a seeded standard normal;
    the bandwidth is a number or ``"median"`` (median heuristic on a seeded
    1000-point pilot sample from P).
    """
    if kind not in _SUITE_RULES and rule is None:
        raise InvalidInputError(f"no default threshold rule for {kind!r}; pass one")
    rule_text = rule or _SUITE_RULES[kind]
    alpha = 0.1
    meta = {"preset": name}
    if name == "gauss_vs_laplace":
        model_p, model_q = gauss(0.0, 8.0), laplace(0.0, 2.0)
        spec = gaussian(1.0)
        meta["kld"] = kld(model_p, model_q)
        grid = (25, 50, 100, 200, 400)
    elif name == "gauss_mixture":
        model_p, model_q = _mixture_models(seed, perturbation)
        if bandwidth == "median":
            pilot = model_p.draw(1000, RngStream(seed, stream_id(1, _H_PRESET, 0)).generator)
            w = median_bandwidth(pilot)
        else:
            w = float(bandwidth)
        spec = gaussian(w)
        meta.update(bandwidth=w, perturbation=perturbation,
                    means_q=model_q.means.ravel().tolist(), means_p=model_p.means.ravel().tolist())
        grid = (25, 50, 100, 200)
    else:
        raise InvalidInputError(f"unknown preset {name!r}; choose from {PRESETS}")
    return ExperimentConfig(
        kind=kind, model_p=model_p, model_q=model_q,
        kernel=None if kind == "lr_oracle" else spec,
        rule=cal.parse_rule(rule_text, alpha),
        n_grid=tuple(n_grid) if n_grid is not None else grid,
        m_rule=m_rule_name, trials=500 if trials is None else trials, seed=seed,
        name=f"{name}_{kind}", metadata=meta,
    )


def preset_suite(name: str, seed: int = 42, **options) -> list[ExperimentConfig]:
    """The simple, two-sample, KSD and likelihood-ratio tests of a preset."""
    return [preset(name, kind, seed, **options) for kind in _SUITE_RULES]


def bandwidth_sweep(config: ExperimentConfig, widths, n: int = 50) -> list[tuple[float, ErrorRow]]:
    """Error rates at a single ``n`` for each Gaussian bandwidth in ``widths``."""
    out = []
    for w in widths:
        cfg = replace(config, kernel=gaussian(float(w)), n_grid=(n,))
        out.append((float(w), estimate_error_rates(cfg).rows[0]))
    return out
