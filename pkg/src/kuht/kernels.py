"""Kernels, Gram matrices and kernel derivatives.

Four kernel variants are supported:

* ``gaussian``: ``k(x, y) = exp(-||x - y||^2 / (2 w))``, bounded by 1;
* ``imq``: inverse multiquadric ``k(x, y) = (c^2 + ||x - y||^2)^eta`` with
  ``c > 0`` and ``-1 < eta < 0``, bounded by ``c^(2 eta)``;
* ``delta``: ``k(i, j) = 1{i == j}`` on the alphabet ``{0, ..., t-1}``;
* ``family``: a finite set of Gaussian bandwidths. Statistics over a family
  take the supremum over member *statistics*, so a family cannot be
  evaluated pointwise.

Points are 1-d arrays of length ``d``; samples are ``(n, d)`` arrays or
:class:`Sample` instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from kuht.errors import (
    DegenerateSampleError,
    InvalidInputError,
    UnsupportedKernelError,
)

GAUSSIAN = "gaussian"
IMQ = "imq"
DELTA = "delta"
FAMILY = "family"

_DIFFERENTIABLE = (GAUSSIAN, IMQ)


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel descriptor.

    Build instances with :func:`gaussian`, :func:`imq`, :func:`delta`,
    :func:`family` or :func:`parse_kernel` rather than directly.
    """

    kind: str
    w: float = 1.0
    c: float = 1.0
    eta: float = -0.5
    t: int = 2
    widths: tuple = ()

    def __post_init__(self):
        if self.kind == GAUSSIAN:
            if not (np.isfinite(self.w) and self.w > 0):
                raise InvalidInputError(f"gaussian bandwidth must be > 0, got {self.w}")
        elif self.kind == IMQ:
            if not self.c > 0:
                raise InvalidInputError(f"imq scale c must be > 0, got {self.c}")
            if not -1.0 < self.eta < 0.0:
                raise InvalidInputError(f"imq exponent must lie in (-1, 0), got {self.eta}")
        elif self.kind == DELTA:
            if int(self.t) != self.t or self.t < 2:
                raise InvalidInputError(f"delta alphabet size must be an integer >= 2, got {self.t}")
        elif self.kind == FAMILY:
            if len(self.widths) == 0:
                raise InvalidInputError("kernel family is empty")
            if any(not w > 0 for w in self.widths):
                raise InvalidInputError("family bandwidths must be > 0")
        else:
            raise InvalidInputError(f"unknown kernel kind {self.kind!r}")

    @property
    def K(self) -> float:
        """Uniform upper bound on ``k(., .)``."""
        if self.kind == IMQ:
            return float(self.c ** (2.0 * self.eta))
        return 1.0

    @property
    def differentiable(self) -> bool:
        return self.kind in _DIFFERENTIABLE

    def members(self) -> list[KernelSpec]:
        """Member kernels of a family; a non-family spec is its own single member."""
        if self.kind == FAMILY:
            return [KernelSpec(GAUSSIAN, w=float(w)) for w in self.widths]
        return [self]

    def __str__(self) -> str:
        if self.kind == GAUSSIAN:
            return f"gaussian:w={self.w:g}"
        if self.kind == IMQ:
            return f"imq:c={self.c:g},eta={self.eta:g}"
        if self.kind == DELTA:
            return f"delta:t={self.t}"
        return "family:gaussian:w=" + ";".join(f"{w:g}" for w in self.widths)


def gaussian(w: float = 1.0) -> KernelSpec:
    return KernelSpec(GAUSSIAN, w=float(w))


def imq(c: float = 1.0, eta: float = -0.5) -> KernelSpec:
    return KernelSpec(IMQ, c=float(c), eta=float(eta))


def delta(t: int) -> KernelSpec:
    return KernelSpec(DELTA, t=int(t))


def family(widths) -> KernelSpec:
    return KernelSpec(FAMILY, widths=tuple(float(w) for w in widths))


def _parse_pairs(body: str, what: str) -> dict[str, str]:
    pairs = {}
    for item in body.split(","):
        if "=" not in item:
            raise InvalidInputError(f"malformed {what} parameter {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def parse_kernel(text: str) -> KernelSpec:
    """Parse a descriptor such as ``gaussian:w=1.0`` or ``family:gaussian:w=0.5;1;2``."""
    name, sep, body = text.strip().partition(":")
    if not sep:
        raise InvalidInputError(f"kernel descriptor {text!r} lacks a ':'")
    try:
        if name == FAMILY:
            inner, sep, rest = body.partition(":")
            if inner != GAUSSIAN or not sep:
                raise InvalidInputError("only gaussian families are supported")
            pairs = _parse_pairs(rest, "family")
            return family(float(v) for v in pairs["w"].split(";"))
        pairs = _parse_pairs(body, "kernel")
        if name == GAUSSIAN:
            return gaussian(float(pairs.pop("w")))
        if name == IMQ:
            return imq(float(pairs.pop("c", 1.0)), float(pairs.pop("eta", -0.5)))
        if name == DELTA:
            return delta(int(pairs.pop("t")))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"cannot parse kernel descriptor {text!r}: {exc}") from exc
    raise InvalidInputError(f"unknown kernel {name!r}")


@dataclass(frozen=True)
class Sample:
    """An ``(n, d)`` block of observations plus the seeds that produced it."""

    data: np.ndarray
    seed: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        arr = as_samples(self.data)
        if arr.shape[0] < 1:
            raise InvalidInputError("a sample needs at least one point")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("sample contains non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self):
        return self.n


def as_samples(X) -> np.ndarray:
    """Coerce to a float ``(n, d)`` array; a flat array is read as ``n`` scalars."""
    if isinstance(X, Sample):
        return X.data
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise InvalidInputError(f"samples must be 1-d or 2-d, got shape {arr.shape}")
    return arr


def as_point(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise InvalidInputError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def _require_pointwise(spec: KernelSpec):
    if spec.kind == FAMILY:
        raise UnsupportedKernelError(
            "a kernel family has no pointwise value; evaluate members or use mmd.sup_family"
        )


def radial_profile(spec: KernelSpec, r2):
    """Return ``(f, f', f'')`` of the radial profile ``k = f(||x - y||^2)``."""
    r2 = np.asarray(r2, dtype=float)
    if spec.kind == GAUSSIAN:
        f = np.exp(-r2 / (2.0 * spec.w))
        return f, -f / (2.0 * spec.w), f / (4.0 * spec.w ** 2)
    if spec.kind == IMQ:
        base = spec.c ** 2 + r2
        f = base ** spec.eta
        f1 = spec.eta * base ** (spec.eta - 1.0)
        f2 = spec.eta * (spec.eta - 1.0) * base ** (spec.eta - 2.0)
        return f, f1, f2
    raise UnsupportedKernelError(f"{spec.kind} kernel is not differentiable")


def eval_kernel(spec: KernelSpec, x, y) -> float:
    _require_pointwise(spec)
    x, y = as_point(x), as_point(y)
    _check_dims(x, y)
    if spec.kind == DELTA:
        return 1.0 if np.array_equal(x, y) else 0.0
    r2 = float(np.sum((x - y) ** 2))
    if spec.kind == GAUSSIAN:
        return float(np.exp(-r2 / (2.0 * spec.w)))
    return float((spec.c ** 2 + r2) ** spec.eta)


def kernel_from_sqdist(spec: KernelSpec, r2):
    """Apply a stationary kernel to an array of squared distances."""
    if spec.kind == GAUSSIAN:
        return np.exp(-np.asarray(r2) / (2.0 * spec.w))
    if spec.kind == IMQ:
        return (spec.c ** 2 + np.asarray(r2)) ** spec.eta
    raise UnsupportedKernelError(f"{spec.kind} kernel is not a function of distance")


def gram(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Kernel matrix with entries ``k(X_i, Y_j)``; ``Y`` defaults to ``X``."""
    _require_pointwise(spec)
    X = as_samples(X)
    Y = X if Y is None else as_samples(Y)
    _check_dims(X, Y)
    if spec.kind == DELTA:
        return (X[:, None, :] == Y[None, :, :]).all(axis=2).astype(float)
    return kernel_from_sqdist(spec, cdist(X, Y, "sqeuclidean"))


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    """Values ``k(x_i, x_i)``."""
    _require_pointwise(spec)
    n = as_samples(X).shape[0]
    return np.full(n, 1.0 if spec.kind != IMQ else spec.K)


def kernel_grad_x(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of ``k(x, y)`` with respect to ``x``."""
    if not spec.differentiable:
        raise UnsupportedKernelError(f"{spec.kind} kernel has no gradient")
    x, y = as_point(x), as_point(y)
    _check_dims(x, y)
    diff = x - y
    _, f1, _ = radial_profile(spec, np.sum(diff ** 2))
    return 2.0 * f1 * diff


def kernel_trace_grad_xy(spec: KernelSpec, x, y) -> float:
    """Trace of the cross Hessian ``d^2 k / dx_i dy_i`` summed over ``i``."""
    if not spec.differentiable:
        raise UnsupportedKernelError(f"{spec.kind} kernel has no gradient")
    x, y = as_point(x), as_point(y)
    _check_dims(x, y)
    r2 = float(np.sum((x - y) ** 2))
    _, f1, f2 = radial_profile(spec, r2)
    return float(-4.0 * f2 * r2 - 2.0 * x.shape[0] * f1)


def median_bandwidth(X) -> float:
    """Median heuristic: half the median pairwise squared distance.

    With this convention the Gaussian kernel equals ``exp(-1)`` at the median
    distance. Falls back to half the smallest positive squared distance when
    more than half of the pairs coincide.
    """
    X = as_samples(X)
    if X.shape[0] < 2:
        raise InvalidInputError("median heuristic needs at least two points")
    d2 = pdist(X, "sqeuclidean")
    med = float(np.median(d2))
    if med > 0:
        return med / 2.0
    positive = d2[d2 > 0]
    if positive.size == 0:
        raise DegenerateSampleError("all points are identical")
    return float(positive.min()) / 2.0
