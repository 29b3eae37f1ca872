"""Test whether a sample came from N(0, 1) with three statistics.

Run: python3 demos/goodness_of_fit.py
"""

import numpy as np

from kuht import harness
from kuht.calibration import parse_rule
from kuht.kernels import gaussian, imq
from kuht.targets import RngStream, gauss, laplace

model = gauss(0.0, 1.0)
gen = np.random.default_rng(0)

samples = {
    "N(0,1) sample": model.draw(200, gen),
    "Laplace(0,1/sqrt2) sample": laplace(0.0, 1 / np.sqrt(2)).draw(200, gen),
    "N(0.4,1) sample": gauss(0.4, 1.0).draw(200, gen),
}

tests = [
    ("MMD, distribution-free", "simple_mmd", gaussian(1.0), "dfree"),
    ("MMD, Monte Carlo", "simple_mmd", gaussian(1.0), "mc:B=300"),
    ("KSD, wild bootstrap", "ksd_v", imq(1.0, -0.5), "wild:B=300"),
]

for label, X in samples.items():
    print(label)
    for name, kind, spec, rule in tests:
        cfg = harness.ExperimentConfig(kind, model, model, spec, parse_rule(rule), n_grid=(len(X),), trials=1)
        rep = harness.run_test(cfg, X, RngStream(1, 0))
        print(f"  {name:24s} stat={rep.statistic:.5f} threshold={rep.threshold:.5f} -> {rep.decision}")
