"""Test thresholds.

Distribution-free thresholds come from concentration bounds and hold for
every sample size. Data-driven thresholds (Monte Carlo under the model,
permutation of the pooled sample, wild bootstrap of the Stein matrix) are
tighter but only asymptotically exact. Taking the minimum of the two keeps
the threshold vanishing while inheriting the tightness.

Every data-driven rule returns the order statistic of rank
``ceil((1 - alpha)(B + 1))`` (capped at ``B``) of its ``B`` replicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from kuht import ksd as _ksd
from kuht import mmd as _mmd
from kuht.errors import InvalidInputError, SupportError
from kuht.kernels import KernelSpec, as_samples
from kuht.targets import TargetModel, _as_rng

DFREE = "dfree"
MONTE_CARLO = "mc"
PERMUTATION = "perm"
WILD = "wild"
MIN_COMBO = "min"

# statistic name -> (compared on squared scale?, matching distribution-free kind)
STATISTICS = {
    "mmd_biased_model": (True, "simple"),
    "mmd_unbiased_model": (True, "simple_u"),
    "mmd_biased_two": (True, "two"),
    "mmd_unbiased_two": (True, "two_u"),
    "sup_family": (False, "two"),
    "ksd_vstat": (True, "ksd"),
    "ksd_ustat": (True, "ksd_u"),
    "lr": (False, None),
}

# distribution-free kind -> is the formula value already on the squared scale?
DFREE_SQUARED = {
    "simple": False,
    "simple_u": True,
    "two": False,
    "two_u": True,
    "two_tight": True,
    "ksd": True,
    "ksd_u": True,
}


@dataclass(frozen=True)
class ThresholdRule:
    kind: str
    alpha: float = 0.1
    B: Optional[int] = None
    inner: Optional["ThresholdRule"] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.kind in (MONTE_CARLO, PERMUTATION, WILD):
            if self.B is None or self.B < 50:
                raise InvalidInputError(f"{self.kind} threshold needs B >= 50, got {self.B}")
        elif self.kind == MIN_COMBO:
            if self.inner is None or self.inner.kind not in (MONTE_CARLO, PERMUTATION, WILD):
                raise InvalidInputError("min rule needs a data-driven inner rule")
        elif self.kind != DFREE:
            raise InvalidInputError(f"unknown threshold rule {self.kind!r}")

    @property
    def data_driven(self) -> Optional["ThresholdRule"]:
        if self.kind == MIN_COMBO:
            return self.inner
        return None if self.kind == DFREE else self

    def __str__(self):
        if self.kind == DFREE:
            return DFREE
        if self.kind == MIN_COMBO:
            return f"min:{self.inner}"
        return f"{self.kind}:B={self.B}"


def parse_rule(text: str, alpha: float = 0.1) -> ThresholdRule:
    """Parse ``dfree``, ``mc:B=500``, ``perm:B=500``, ``wild:B=500`` or ``min:mc:B=500``."""
    text = text.strip()
    if text == DFREE:
        return ThresholdRule(DFREE, alpha)
    name, sep, body = text.partition(":")
    if name == MIN_COMBO and sep:
        return ThresholdRule(MIN_COMBO, alpha, inner=parse_rule(body, alpha))
    if name in (MONTE_CARLO, PERMUTATION, WILD):
        key, eq, value = body.partition("=")
        if key != "B" or not eq:
            raise InvalidInputError(f"expected B=<replicates> in {text!r}")
        try:
            B = int(value)
        except ValueError as exc:
            raise InvalidInputError(f"bad replicate count in {text!r}") from exc
        return ThresholdRule(name, alpha, B=B)
    raise InvalidInputError(f"unknown threshold rule {text!r}")


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")


def dfree_threshold(kind: str, K: float = 1.0, n: int = 1, m: Optional[int] = None,
                    alpha: float = 0.1, H_p: Optional[float] = None) -> float:
    """Closed-form threshold.

    ``simple`` and ``two`` bound the unsquared MMD; every other kind bounds a
    squared-scale statistic directly (see ``DFREE_SQUARED``).
    """
    _check_alpha(alpha)
    if n < 1:
        raise InvalidInputError("n must be positive")
    log_inv = -math.log(alpha)
    if kind in ("simple", "simple_u"):
        g = math.sqrt(2.0 * K / n) * (1.0 + math.sqrt(log_inv))
        return g if kind == "simple" else g * g + K / n
    if kind in ("ksd", "ksd_u"):
        g = math.sqrt(1.0 / n) * (1.0 + math.sqrt(log_inv))
        if kind == "ksd":
            return g
        if H_p is None:
            raise InvalidInputError("ksd_u threshold needs the Stein kernel bound H_p")
        return g + H_p / n
    if kind in ("two", "two_u", "two_tight"):
        if m is None or m < 1:
            raise InvalidInputError(f"{kind} threshold needs the model sample size m")
        if kind == "two_tight":
            if m != n:
                raise InvalidInputError("two_tight threshold requires m == n")
            return 4.0 * K / math.sqrt(n) * math.sqrt(log_inv)
        g = (math.sqrt(K / m) + math.sqrt(K / n)) * (2.0 + math.sqrt(-2.0 * math.log(alpha / 2.0)))
        return g if kind == "two" else g * g + K / m + K / n
    raise InvalidInputError(f"unknown distribution-free kind {kind!r}")


def dfree_for_statistic(statistic: str, K: float, n: int, m: Optional[int] = None,
                        alpha: float = 0.1, H_p: Optional[float] = None) -> float:
    """Distribution-free threshold expressed on the statistic's own scale."""
    try:
        squared, kind = STATISTICS[statistic]
    except KeyError:
        raise InvalidInputError(f"unknown statistic {statistic!r}") from None
    if kind is None:
        raise InvalidInputError(f"{statistic} has no distribution-free threshold")
    value = dfree_threshold(kind, K, n, m, alpha, H_p)
    if squared and not DFREE_SQUARED[kind]:
        value = value * value
    return value


def quantile_rank(alpha: float, B: int) -> int:
    """1-based rank ``ceil((1 - alpha)(B + 1))`` capped at ``B``."""
    return min(B, math.ceil((1.0 - alpha) * (B + 1) - 1e-9))


def order_statistic(values, alpha: float) -> float:
    values = np.sort(np.asarray(values, dtype=float))
    return float(values[quantile_rank(alpha, values.shape[0]) - 1])


def model_statistic(statistic: Union[str, Callable], model: TargetModel,
                    spec: Optional[KernelSpec] = None,
                    model_q: Optional[TargetModel] = None) -> Callable:
    """Return ``X -> value`` for a one-sample statistic against ``model``."""
    if callable(statistic):
        return statistic
    if statistic == "mmd_biased_model":
        return lambda X: _mmd.mmd2_biased_model(model, spec, X).value
    if statistic == "mmd_unbiased_model":
        return lambda X: _mmd.mmd2_unbiased_model(model, spec, X).value
    if statistic in ("ksd_vstat", "ksd_ustat"):
        ctx = _ksd.SteinContext(model, spec)
        fn = _ksd.ksd2_vstat if statistic == "ksd_vstat" else _ksd.ksd2_ustat
        return lambda X: fn(ctx, X)
    if statistic == "lr":
        if model_q is None:
            raise InvalidInputError("the likelihood-ratio statistic needs the alternative model")
        return lambda X: lr_statistic(model, model_q, X)
    raise InvalidInputError(f"{statistic!r} is not a one-sample statistic")


def lr_statistic(model_p: TargetModel, model_q: TargetModel, X) -> float:
    """Average log-likelihood ratio ``(1/n) sum log q(x_i)/p(x_i)``."""
    lp = model_p.logpdf(X)
    lq = model_q.logpdf(X)
    if np.any(np.isneginf(lp)) or np.any(np.isneginf(lq)):
        raise SupportError("a data point has zero density under one of the models")
    return float(np.mean(lq - lp))


def mc_replicates(model: TargetModel, spec: Optional[KernelSpec], statistic, n: int, B: int,
                  rng, model_q: Optional[TargetModel] = None) -> np.ndarray:
    fn = model_statistic(statistic, model, spec, model_q)
    gen = _as_rng(rng).generator
    return np.array([fn(model.draw(n, gen)) for _ in range(B)])


def mc_threshold(model: TargetModel, spec: Optional[KernelSpec], statistic, n: int,
                 alpha: float, B: int, rng, model_q: Optional[TargetModel] = None) -> float:
    """Monte Carlo threshold from ``B`` fresh size-``n`` samples of the model."""
    _check_alpha(alpha)
    if B < 50:
        raise InvalidInputError(f"need B >= 50 replicates, got {B}")
    return order_statistic(mc_replicates(model, spec, statistic, n, B, rng, model_q), alpha)


def random_splits(N: int, n: int, B: int, rng) -> np.ndarray:
    """``B`` uniformly random size-``n`` subsets of ``range(N)``, one per row."""
    gen = _as_rng(rng).generator
    return np.stack([gen.choice(N, size=n, replace=False) for _ in range(B)])


def permutation_replicates(spec: KernelSpec, Y, X, statistic: str, B: int, rng,
                           factors: Optional[list] = None) -> np.ndarray:
    Y, X = as_samples(Y), as_samples(X)
    m, n = Y.shape[0], X.shape[0]
    if m + n < 4:
        raise InvalidInputError("permutation calibration needs m + n >= 4")
    if statistic not in ("mmd_biased_two", "mmd_unbiased_two", "sup_family"):
        raise InvalidInputError(f"{statistic!r} is not a two-sample statistic")
    if factors is None:
        factors = [_mmd.PooledFactor(k, Y, X) for k in spec.members()]
    splits = random_splits(m + n, n, B, rng)
    if statistic == "sup_family":
        return np.max([np.sqrt(f.statistics(splits, _mmd.BIASED)) for f in factors], axis=0)
    kind = _mmd.BIASED if statistic == "mmd_biased_two" else _mmd.UNBIASED
    return factors[0].statistics(splits, kind)


def permutation_threshold(spec: KernelSpec, Y, X, statistic: str, alpha: float, B: int,
                          rng, factors: Optional[list] = None) -> float:
    """Permutation threshold for a two-sample statistic of ``Y`` (model) vs ``X`` (data)."""
    _check_alpha(alpha)
    if B < 50:
        raise InvalidInputError(f"need B >= 50 replicates, got {B}")
    return order_statistic(permutation_replicates(spec, Y, X, statistic, B, rng, factors), alpha)


def wild_replicates(H: np.ndarray, statistic: str, B: int, rng) -> np.ndarray:
    """Rademacher-multiplier replicates of a Stein V- or U-statistic."""
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    if n < 2:
        raise InvalidInputError("wild bootstrap needs n >= 2")
    if statistic == "ksd_vstat":
        M, scale = H, 1.0 / n ** 2
    elif statistic == "ksd_ustat":
        M, scale = H - np.diag(np.diag(H)), 1.0 / (n * (n - 1))
    else:
        raise InvalidInputError(f"{statistic!r} is not a Stein statistic")
    gen = _as_rng(rng).generator
    W = 2.0 * gen.integers(0, 2, size=(B, n)) - 1.0
    return np.einsum("bi,bi->b", W @ M, W) * scale


def wild_threshold(ctx: _ksd.SteinContext, X, statistic: str, alpha: float, B: int, rng,
                   H: Optional[np.ndarray] = None) -> float:
    _check_alpha(alpha)
    if B < 50:
        raise InvalidInputError(f"need B >= 50 replicates, got {B}")
    if H is None:
        H = _ksd.stein_gram(ctx, X)
    return order_statistic(wild_replicates(H, statistic, B, rng), alpha)


def combine_min(data_driven: float, dfree: float) -> float:
    """Smaller of a data-driven and a distribution-free threshold on the same scale."""
    if not (math.isfinite(data_driven) and math.isfinite(dfree)):
        raise InvalidInputError("thresholds must be finite")
    return min(data_driven, dfree)

