"""A reduced Gaussian-vs-Laplace error-curve run (50 trials) that finishes in well under a minute.

The full experiment is `kuht experiment --preset gauss_vs_laplace`.

Run: python3 demos/gauss_vs_laplace_small.py [outdir]
"""

import sys

from kuht.cli import run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else "demo_results"
curves, paths = run_experiment("gauss_vs_laplace", 42, out, trials=50, n_grid=(25, 50, 100, 200))
print("n     " + "".join(f"{k:>8s}" for k in curves))
for i, n in enumerate(curves["simple"].column("n")):
    print(f"{int(n):<6d}" + "".join(f"{c.rows[i].type2_hat:8.3f}" for c in curves.values()))
print("type-II error per test; files:", *paths, sep="\n  ")
