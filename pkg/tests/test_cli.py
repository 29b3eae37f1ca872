import json
import os
import re
import subprocess
import sys

import pytest

from kuht import cli
from kuht.harness import ErrorCurve, ErrorRow


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_args_examples():
    cfg = cli.parse_args(["test", "--kind", "simple", "--model", "gauss:mu=0,sigma2=1", "--kernel",
                          "gaussian:w=1", "--alpha", "0.1", "--n", "100", "--threshold", "dfree",
                          "--seed", "7"])
    assert (cfg.subcommand, cfg.seed) == ("test", 7)
    assert cfg.experiment.kind == "simple_mmd" and cfg.experiment.alpha == 0.1
    cfg = cli.parse_args(["experiment", "--preset", "gauss_vs_laplace", "--out", "results/"])
    assert (cfg.seed, cfg.out, cfg.args.preset) == (42, "results/", "gauss_vs_laplace")


@pytest.mark.parametrize("argv,flag", [
    (["test", "--kind", "simple", "--model", "gauss:mu=0,sigma2=1", "--kernel", "gaussian:w=1",
      "--n", "10", "--alpha", "1.5"], "--alpha"),
    (["test", "--kind", "simple", "--model", "cauchy:x=1", "--kernel", "gaussian:w=1", "--n", "10"], "--model"),
    (["test", "--kind", "simple", "--model", "gauss:mu=0,sigma2=1", "--kernel", "rbf", "--n", "10"], "--kernel"),
    (["calibrate", "--kind", "simple", "--model", "gauss:mu=0,sigma2=1", "--kernel", "gaussian:w=1",
      "--n", "10", "--threshold", "mc:B=10"], "--threshold"),
    (["experiment", "--preset", "gauss_vs_laplace", "--tests", "simple,bogus"], "--tests"),
    (["experiment", "--preset", "nope"], "--preset"),
    (["sanov", "--p", "0.5;0.5", "--q", "0.9;0.1", "--gamma", "0", "--n", "20"], "--gamma"),
])
def test_usage_errors_name_the_flag(capsys, argv, flag):
    code, out, err = run(capsys, *argv)
    assert code == 1 and out == ""
    assert flag in err


def test_unknown_subcommand_and_flag(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "sanov", "--p", "0.5;0.5", "--q", "0.9;0.1", "--gamma", "0.2", "--n", "20",
               "--colour", "red")[0] == 1
    assert run(capsys, "--help")[0] == 0


def test_runtime_error_exit_code(capsys, tmp_path):
    # a file where the output directory should go
    blocker = tmp_path / "blocked"
    blocker.write_text("x")
    code, out, err = run(capsys, "sanov", "--p", "0.5;0.5", "--q", "0.9;0.1", "--gamma", "0.2",
                         "--n", "20", "--out", str(blocker / "r.json"))
    assert code == 2 and err.startswith("error:")
    # Laplace has no closed-form embedding for the simple statistic
    code, _, err = run(capsys, "test", "--kind", "simple", "--model", "laplace:mu=0,b=1",
                       "--kernel", "gaussian:w=1", "--n", "10")
    assert code == 2


def test_test_subcommand(capsys):
    base = ["test", "--kind", "simple", "--model", "gauss:mu=0,sigma2=1", "--kernel", "gaussian:w=1",
            "--n", "200", "--seed", "7"]
    code, out, _ = run(capsys, *base)
    assert code == 0
    m = re.fullmatch(r"(accept_H0|reject_H0) statistic=(\S+) threshold=(\S+) rule=dfree\n", out)
    assert m and m.group(1) == "accept_H0"
    assert (float(m.group(2)) > float(m.group(3))) == (m.group(1) == "reject_H0")
    code, out, _ = run(capsys, *base, "--data-model", "gauss:mu=3,sigma2=1")
    assert out.startswith("reject_H0")
    assert run(capsys, *base)[1] == run(capsys, *base)[1]
    code, out, _ = run(capsys, "test", "--kind", "two", "--model", "gauss:mu=0,sigma2=1", "--kernel",
                       "gaussian:w=1", "--n", "30", "--m", "45", "--threshold", "perm:B=100")
    assert code == 0 and "rule=perm:B=100" in out
    code, out, _ = run(capsys, "test", "--kind", "lr", "--model", "gauss:mu=0,sigma2=1",
                       "--alt", "gauss:mu=1,sigma2=1", "--n", "30", "--threshold", "mc:B=100")
    assert code == 0
    code, out, err = run(capsys, "test", "--kind", "ksd", "--model", "gauss:mu=0,sigma2=1",
                         "--kernel", "imq:c=1,eta=-0.5", "--n", "40", "--threshold", "wild:B=100")
    assert code == 0 and err == ""


def test_calibrate_subcommand(capsys):
    code, out, _ = run(capsys, "calibrate", "--kind", "simple", "--model", "gauss:mu=0,sigma2=1",
                       "--kernel", "gaussian:w=1", "--n", "100")
    assert code == 0
    assert float(re.search(r"threshold=(\S+)", out).group(1)) == pytest.approx(0.3560180 ** 2, abs=1e-7)
    code, out, _ = run(capsys, "calibrate", "--kind", "two", "--model", "gauss:mu=0,sigma2=1",
                       "--kernel", "gaussian:w=1", "--n", "100", "--threshold", "dfree")
    assert "m=1000" in out
    assert float(re.search(r"threshold=(\S+)", out).group(1)) == pytest.approx(0.5854248 ** 2, abs=1e-7)


def test_sanov_subcommand(capsys, tmp_path):
    path = tmp_path / "rep.json"
    code, out, _ = run(capsys, "sanov", "--p", ".5;.5", "--q", ".9;.1", "--gamma", "0.2",
                       "--n", "20,40,60", "--out", str(path))
    assert code == 0 and out.strip() == str(path)
    data = json.loads(path.read_text())
    assert data["holds"] is True and [r["n"] for r in data["rows"]] == [20, 40, 60]
    code, out, _ = run(capsys, "sanov", "--p", ".5;.5", "--q", ".9;.1", "--gamma", "0.2",
                       "--n", "20", "--m", "20", "--out", str(path))
    data = json.loads(path.read_text())
    assert [d["kind"] for d in data] == ["sanov", "extended_sanov"]
    assert all(d["holds"] for d in data)


def test_exponent_subcommand(capsys):
    code, out, _ = run(capsys, "exponent", "--preset", "finite-demo")
    assert code == 0
    vals = dict(item.split("=") for item in out.split())
    assert vals["D(P||Q)"] == "0.510826"
    assert 0 < float(vals["slope"]) <= 0.510826 + 0.02
    assert (vals["rows_used"], vals["dropped"]) == ("4", "1")
    code, out, _ = run(capsys, "exponent", "--preset", "finite-demo", "--mode", "lr", "--trials", "200",
                       "--grid", "2,4,6,8")
    assert code == 0 and float(dict(i.split("=") for i in out.split())["slope"]) > 0


def test_experiment_subcommand_outputs(capsys, tmp_path):
    out_dir = tmp_path / "res"
    argv = ["experiment", "--preset", "gauss_vs_laplace", "--out", str(out_dir), "--trials", "6",
            "--grid", "10,20", "--tests", "simple,two,lr"]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    paths = out.split()
    assert sorted(os.path.basename(p) for p in paths) == sorted([
        "gauss_vs_laplace_simple_mmd.csv", "gauss_vs_laplace_two_sample_mmd.csv",
        "gauss_vs_laplace_lr_oracle.csv", "gauss_vs_laplace_type2.svg", "gauss_vs_laplace_type1.svg"])
    curves = {}
    for p in paths:
        if p.endswith(".csv"):
            curve = ErrorCurve.from_csv(open(p, encoding="utf-8").read())
            assert [r.n for r in curve.rows] == [10, 20] and all(r.trials == 6 for r in curve.rows)
            curves[os.path.basename(p)] = curve
    assert [r.m for r in curves["gauss_vs_laplace_two_sample_mmd.csv"].rows] == [32, 90]
    svg = (out_dir / "gauss_vs_laplace_type2.svg").read_text()
    assert svg.count("<polyline") == 3
    plotted = cli.parse_svg_values(svg)
    for short, name in (("simple", "simple_mmd"), ("two", "two_sample_mmd"), ("lr", "lr_oracle")):
        rows = curves[f"gauss_vs_laplace_{name}.csv"].rows
        assert plotted[short] == [(r.n, r.type2_hat) for r in rows]
    first = {p: open(p, "rb").read() for p in paths}
    run(capsys, *argv)
    assert {p: open(p, "rb").read() for p in paths} == first


def test_experiment_single_point_skips_plots(capsys, tmp_path):
    code, out, err = run(capsys, "experiment", "--preset", "gauss_mixture", "--out", str(tmp_path),
                         "--trials", "3", "--grid", "10", "--tests", "simple", "--bandwidth", "1.5")
    assert code == 0 and len(out.split()) == 1 and "no plots" in err


def make_curve(values):
    return ErrorCurve([ErrorRow(n, None, 10, 0.0, v, 0, 0, 0, 0) for n, v in values])


def test_emit_svg(tmp_path):
    series = {"a": make_curve([(10, 0.5), (20, 0.25)]), "b<&>": make_curve([(10, 0.9), (20, 0.0)])}
    p1, p2 = tmp_path / "1.svg", tmp_path / "2.svg"
    text = cli.emit_svg(series, p1, log_y=True, title="t")
    cli.emit_svg(series, p2, log_y=True, title="t")
    assert p1.read_bytes() == p2.read_bytes() == text.encode()
    assert text.count("<polyline") == 2
    assert cli.parse_svg_values(text)["a"] == [(10, 0.5), (20, 0.25)]
    assert "b&lt;&amp;&gt;" in text
    # x coordinates increase with n, and lower error is drawn lower on the chart (larger y)
    pts = re.search(r'data-series="a" [^>]*points="([^"]*)"', text).group(1).split()
    (x1, y1), (x2, y2) = (tuple(map(float, p.split(","))) for p in pts)
    assert x2 > x1 and y2 > y1
    with pytest.raises(Exception):
        cli.emit_svg({"a": make_curve([(10, 0.5)])}, tmp_path / "3.svg")


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "kuht", "sanov", "--p", "0.5;0.5", "--q", "0.9;0.1",
                          "--gamma", "0.2", "--n", "20", "--out", str(tmp_path / "r.json")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == str(tmp_path / "r.json")
    res = subprocess.run([sys.executable, "-m", "kuht", "nope"], capture_output=True, text=True)
    assert res.returncode == 1
