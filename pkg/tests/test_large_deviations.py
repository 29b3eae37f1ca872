import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom, entropy, multinomial

from kuht.calibration import dfree_threshold
from kuht.errors import InvalidInputError, TooLargeError
from kuht.large_deviations import (
    dstar,
    dstar_grid,
    enumerate_types,
    exact_error_probs,
    extended_sanov_check,
    finite_dist,
    kl,
    n_types,
    pair_infimum,
    sanov_sandwich_check,
    type_log_prob,
    type_log_sandwich,
    type_prob_sandwich,
)

P0, Q0 = (0.5, 0.5), (0.9, 0.1)


def random_dist(gen, t, floor=0.05):
    p = gen.dirichlet(np.ones(t)) + floor
    return p / p.sum()


def test_enumeration_examples():
    assert enumerate_types(3, 2).tolist() == [[0, 3], [1, 2], [2, 1], [3, 0]]
    assert len(enumerate_types(3, 2)) <= 4 ** 2
    assert enumerate_types(0, 4).tolist() == [[0, 0, 0, 0]]
    T = enumerate_types(7, 3)
    assert len(T) == n_types(7, 3) == math.comb(9, 2)
    assert np.all(T.sum(axis=1) == 7)
    assert [tuple(r) for r in T] == sorted(tuple(r) for r in T)
    assert len({tuple(r) for r in T}) == len(T)
    with pytest.raises(TooLargeError):
        enumerate_types(400, 5)
    with pytest.raises(InvalidInputError):
        enumerate_types(3, 1)


def test_type_log_prob_examples():
    assert type_log_prob([1, 2], [0.5, 0.5]) == pytest.approx(math.log(0.375), abs=1e-14)
    assert type_log_prob([3, 0], [0.0, 1.0]) == -np.inf
    gen = np.random.default_rng(0)
    R = random_dist(gen, 3)
    T = enumerate_types(12, 3)
    assert np.exp(type_log_prob(T, R)).sum() == pytest.approx(1.0, abs=1e-10)
    for row in T[::7]:
        assert type_log_prob(row, R) == pytest.approx(multinomial.logpmf(row, 12, R), abs=1e-10)


def test_kl_against_scipy():
    gen = np.random.default_rng(1)
    for _ in range(50):
        p, q = random_dist(gen, 4, 0.0), random_dist(gen, 4)
        assert kl(p, q) == pytest.approx(entropy(p, q), abs=1e-12)
    assert kl([0.5, 0.5], [1.0, 0.0]) == np.inf
    assert kl(P0, Q0) == pytest.approx(0.510826, abs=1e-6)


def test_sandwich_examples():
    s = type_prob_sandwich([1, 2], [0.5, 0.5])
    # e^{-3 D} with D = ln 2 - H(1/3) is exactly 27/32
    assert (s.lower, s.exact, s.upper) == pytest.approx((27 / 512, 0.375, 27 / 32), abs=1e-14)
    assert (s.lower, s.exact, s.upper) == pytest.approx((0.052736, 0.375, 0.843800), abs=6e-5)
    assert kl([1 / 3, 2 / 3], [0.5, 0.5]) == pytest.approx(0.056633, abs=1e-6)
    assert s.holds
    assert type_prob_sandwich([2, 2], [0.5, 0.5]).upper == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(InvalidInputError):
        type_prob_sandwich([3, 0], [0.0, 1.0])


def test_sandwich_exhaustive():
    gen = np.random.default_rng(2)
    violations = 0
    for _ in range(20):
        R = random_dist(gen, 3, 0.0)
        for m in range(16):
            lo, ex, up = type_log_sandwich(enumerate_types(m, 3), R)
            violations += int(np.sum(~((lo <= ex + 1e-12) & (ex <= up + 1e-12))))
    assert violations == 0


def binomial_errors(P, Q, gamma, n):
    """Two-symbol oracle: the type is (k, n-k) with k ~ Binomial(n, p_0)."""
    k = np.arange(n + 1)
    accept = 2 * (P[0] - k / n) ** 2 <= gamma ** 2
    return binom.pmf(k[~accept], n, P[0]).sum(), binom.pmf(k[accept], n, Q[0]).sum()


def test_exact_error_examples():
    assert exact_error_probs(P0, Q0, math.sqrt(2), 15) == (0.0, 1.0)
    assert exact_error_probs((0.3, 0.3, 0.4), (0.2, 0.2, 0.6), 2.0, 9) == (0.0, 1.0)
    assert exact_error_probs((1 / 3, 2 / 3), Q0, 0.0, 10)[0] == 1.0
    g = dfree_threshold("simple", 1.0, 20, alpha=0.1)
    t1, t2 = exact_error_probs(P0, Q0, g, 20)
    assert t1 <= 0.1
    assert 0 <= t2 <= 1
    gen = np.random.default_rng(3)
    for _ in range(20):
        P, Q = random_dist(gen, 2), random_dist(gen, 2)
        gamma, n = float(gen.uniform(0, 0.8)), int(gen.integers(5, 80))
        assert exact_error_probs(P, Q, gamma, n) == pytest.approx(binomial_errors(P, Q, gamma, n), abs=1e-12)


def test_exact_errors_three_symbols_against_multinomial():
    P, Q = (0.2, 0.3, 0.5), (0.5, 0.25, 0.25)
    n, gamma = 10, 0.3
    t1 = t2 = 0.0
    for T in enumerate_types(n, 3):
        inside = np.sum((np.array(P) - T / n) ** 2) <= gamma ** 2
        if inside:
            t2 += multinomial.pmf(T, n, Q)
        else:
            t1 += multinomial.pmf(T, n, P)
    assert exact_error_probs(P, Q, gamma, n) == pytest.approx((t1, t2), abs=1e-12)


def test_level_guarantee_on_finite_alphabets():
    gen = np.random.default_rng(4)
    for n in range(10, 61):
        P = random_dist(gen, 3, 0.0)
        t1, _ = exact_error_probs(P, P, dfree_threshold("simple", 1.0, n, alpha=0.1), n)
        assert t1 <= 0.1


def brute_dstar(P, Q, c, step=1e-3):
    # min over the simplex of c D(R||P) + (1-c) D(R||Q), two symbols only
    r = np.arange(step, 1, step)
    R = np.stack([r, 1 - r], axis=1)
    return float(np.min(c * np.sum(R * np.log(R / P), axis=1) + (1 - c) * np.sum(R * np.log(R / Q), axis=1)))


def test_dstar_examples():
    assert dstar(P0, P0, 0.3) == pytest.approx(0.0, abs=1e-15)
    assert dstar(P0, Q0, 0.5) == pytest.approx(-math.log(math.sqrt(0.45) + math.sqrt(0.05)), abs=1e-12)
    assert dstar(P0, Q0, 0.5) == pytest.approx(0.111572, abs=1e-6)
    assert dstar(P0, Q0, 0.5) == pytest.approx(brute_dstar(np.array(P0), np.array(Q0), 0.5), abs=1e-3)
    assert dstar((1.0, 0.0), (0.0, 1.0), 0.5) == np.inf
    gen = np.random.default_rng(5)
    for _ in range(10):
        P, Q, c = random_dist(gen, 3), random_dist(gen, 3), float(gen.uniform(0.05, 0.95))
        assert dstar(P, Q, c) <= (1 - c) * kl(P, Q) + 1e-12
        assert dstar(P, Q, c) <= c * kl(Q, P) + 1e-12


def test_dstar_grid_agreement():
    gen = np.random.default_rng(6)
    for i in range(25):
        t = 2 + i % 2
        P, Q, c = random_dist(gen, t), random_dist(gen, t), float(gen.uniform(0.1, 0.9))
        assert abs(dstar(P, Q, c) - dstar_grid(P, Q, c)) <= 1e-3
        if t == 2:
            assert abs(dstar(P, Q, c) - brute_dstar(P, Q, c)) <= 1e-3


def test_sanov_examples():
    rep = sanov_sandwich_check(P0, Q0, 0.2, [20, 40, 60])
    assert rep.holds
    assert all(r.lower_ok and r.upper_ok and not r.vacuous for r in rep.rows)
    rates = [r.rate for r in rep.rows]
    assert all(b <= a + 1e-2 for a, b in zip(rates, rates[1:]))
    assert all(r >= rep.rows[0].inf_grid - 1e-2 for r in rates)
    # I_min is the KL from Q to the ball boundary point closest to Q: R_0 = 0.5 + 0.2/sqrt(2)
    r0 = 0.5 + 0.2 / math.sqrt(2)
    assert rep.rows[0].inf_grid == pytest.approx(entropy([r0, 1 - r0], Q0), abs=2e-3)
    # Q inside the ball
    rep = sanov_sandwich_check(P0, Q0, 0.7, [20, 40])
    assert rep.holds
    assert rep.rows[0].inf_grid == 0.0
    assert all(abs(r.rate) < 0.05 for r in rep.rows)


def test_sanov_report_json_and_vacuity():
    rep = sanov_sandwich_check((1 / 3, 2 / 3), Q0, 0.01, [4])
    assert rep.rows[0].vacuous
    assert rep.holds
    data = json.loads(rep.to_json())
    assert data["rows"][0]["rate"] == "inf"
    assert data["kind"] == "sanov"
    assert rep.to_json() == sanov_sandwich_check((1 / 3, 2 / 3), Q0, 0.01, [4]).to_json()


def test_extended_sanov_examples():
    rep = extended_sanov_check(P0, Q0, 0.2, 20, 20)
    assert rep.holds
    row = rep.rows[0]
    assert (row.m, row.n) == (20, 20)
    assert row.inf_grid <= row.inf_types
    rep = extended_sanov_check(P0, P0, 0.3, 15, 15)
    assert rep.holds
    assert rep.rows[0].rate < 0.05
    rep = extended_sanov_check((0.2, 0.3, 0.5), (0.4, 0.4, 0.2), 0.25, 6, 8)
    assert rep.holds


def test_pair_infimum_limit():
    target = dstar(P0, Q0, 0.5)
    vals = [pair_infimum(P0, Q0, g, 0.5) for g in (0.2, 0.1, 0.05, 0.01)]
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= target + 1e-9
    assert target - vals[-1] <= 0.02


def test_pair_enumeration_guard():
    with pytest.raises(TooLargeError):
        extended_sanov_check((0.2, 0.2, 0.2, 0.4), (0.25,) * 4, 0.1, 200, 200)


def test_finite_dist_validation():
    with pytest.raises(InvalidInputError):
        finite_dist([1.0])
    with pytest.raises(InvalidInputError):
        finite_dist([0.5, 0.6])
    with pytest.raises(InvalidInputError):
        finite_dist([-0.1, 1.1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 4), st.integers(1, 12))
def test_type_probabilities_sum_to_one(seed, t, m):
    R = random_dist(np.random.default_rng(seed), t, 0.0)
    assert math.fsum(np.exp(type_log_prob(enumerate_types(m, t), R))) == pytest.approx(1.0, abs=1e-10)
