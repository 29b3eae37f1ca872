"""Model and data distributions.

Each model exposes sampling, exact log densities and scores; Gaussian-type
models additionally expose closed-form Gaussian-kernel embeddings, and
finite models expose closed-form delta-kernel embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import logsumexp, xlogy

from kuht.errors import (
    InvalidInputError,
    NoClosedFormError,
    QuadratureError,
    UnsupportedModelError,
)
from kuht.kernels import DELTA, GAUSSIAN, KernelSpec, Sample, as_point, as_samples

_MASK64 = (1 << 64) - 1
_LOG_2PI = np.log(2.0 * np.pi)


class RngStream:
    """Reproducible random stream keyed by ``(master_seed, stream_id)``.

    Both keys are mixed through :class:`numpy.random.SeedSequence`, so
    distinct stream ids give independent generators and equal keys give
    identical draws.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        seq = np.random.SeedSequence([self.master_seed, self.stream_id])
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, salt: int) -> RngStream:
        """A stream derived from this one; does not consume draws from it."""
        mixed = np.random.SeedSequence([self.stream_id, int(salt) & _MASK64])
        return RngStream(self.master_seed, int(mixed.generate_state(1, np.uint64)[0]))

    @property
    def seeds(self) -> tuple[int, int]:
        return (self.master_seed, self.stream_id)

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


def _as_rng(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(42, 0)
    return RngStream(int(rng), 0)


def _check_probs(p, name="probs") -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.size < 1 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidInputError(f"{name} must be nonnegative and finite")
    if abs(p.sum() - 1.0) > 1e-12:
        raise InvalidInputError(f"{name} must sum to 1 (got {p.sum()!r})")
    return p


class TargetModel:
    """Common interface; see the concrete variants below."""

    continuous = True

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def draw(self, n: int, gen: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def logpdf(self, X) -> np.ndarray:
        raise NotImplementedError

    def score_batch(self, X) -> np.ndarray:
        raise NotImplementedError

    def gaussian_components(self):
        """``(weights, means, sigma2)`` for Gaussian-type models."""
        raise NoClosedFormError(f"{type(self).__name__} has no Gaussian components")

    def support_box(self) -> tuple[float, float]:
        """Finite 1-d integration range carrying all but negligible mass."""
        raise UnsupportedModelError(f"{type(self).__name__} has no 1-d integration range")

    def breakpoints(self) -> list[float]:
        return []


@dataclass(frozen=True, eq=False)
class GaussianDiag(TargetModel):
    """Isotropic Gaussian ``N(mu, sigma2 I)``."""

    mu: np.ndarray
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "mu", as_point(self.mu))
        if not self.sigma2 > 0:
            raise InvalidInputError("sigma2 must be > 0")

    def __eq__(self, other):
        return (type(other) is GaussianDiag and np.array_equal(self.mu, other.mu)
                and self.sigma2 == other.sigma2)

    __hash__ = None

    @property
    def dim(self):
        return self.mu.shape[0]

    def draw(self, n, gen):
        return self.mu + np.sqrt(self.sigma2) * gen.standard_normal((n, self.dim))

    def logpdf(self, X):
        X = as_samples(X)
        r2 = np.sum((X - self.mu) ** 2, axis=1)
        return -0.5 * self.dim * (_LOG_2PI + np.log(self.sigma2)) - r2 / (2.0 * self.sigma2)

    def score_batch(self, X):
        return -(as_samples(X) - self.mu) / self.sigma2

    def gaussian_components(self):
        return np.ones(1), self.mu[None, :], self.sigma2

    def support_box(self):
        s = np.sqrt(self.sigma2)
        return float(self.mu[0] - 12 * s), float(self.mu[0] + 12 * s)

    def breakpoints(self):
        return [float(self.mu[0])]


@dataclass(frozen=True, eq=False)
class GaussianMixture(TargetModel):
    """Mixture of isotropic Gaussians with a shared variance."""

    weights: np.ndarray
    means: np.ndarray
    sigma2: float

    def __post_init__(self):
        w = _check_probs(self.weights, "mixture weights")
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if means.shape[0] != w.shape[0]:
            raise InvalidInputError("one mean per mixture weight is required")
        if not self.sigma2 > 0:
            raise InvalidInputError("sigma2 must be > 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)

    def __eq__(self, other):
        return (type(other) is GaussianMixture and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.means, other.means) and self.sigma2 == other.sigma2)

    __hash__ = None

    @property
    def dim(self):
        return self.means.shape[1]

    def draw(self, n, gen):
        comp = gen.choice(self.weights.shape[0], size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.sigma2) * gen.standard_normal((n, self.dim))

    def _component_logpdf(self, X):
        X = as_samples(X)
        r2 = ((X[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        return (np.log(self.weights)[None, :]
                - 0.5 * self.dim * (_LOG_2PI + np.log(self.sigma2)) - r2 / (2.0 * self.sigma2))

    def logpdf(self, X):
        with np.errstate(divide="ignore"):
            return logsumexp(self._component_logpdf(X), axis=1)

    def score_batch(self, X):
        X = as_samples(X)
        with np.errstate(divide="ignore"):
            lc = self._component_logpdf(X)
        resp = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
        return (resp @ self.means - X) / self.sigma2

    def gaussian_components(self):
        return self.weights, self.means, self.sigma2

    def support_box(self):
        s = np.sqrt(self.sigma2)
        return float(self.means[:, 0].min() - 12 * s), float(self.means[:, 0].max() + 12 * s)

    def breakpoints(self):
        return sorted(float(m) for m in self.means[:, 0])


@dataclass(frozen=True)
class Laplace1D(TargetModel):
    """Laplace distribution with location ``mu`` and scale ``b``."""

    mu: float
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise InvalidInputError("Laplace scale b must be > 0")

    @property
    def dim(self):
        return 1

    def draw(self, n, gen):
        return gen.laplace(self.mu, self.b, size=(n, 1))

    def logpdf(self, X):
        X = as_samples(X)
        return -np.log(2.0 * self.b) - np.abs(X[:, 0] - self.mu) / self.b

    def score_batch(self, X):
        # the kink at mu gets score 0
        return -np.sign(as_samples(X) - self.mu) / self.b

    def support_box(self):
        s = self.b * np.sqrt(2.0)
        return float(self.mu - 12 * s), float(self.mu + 12 * s)

    def breakpoints(self):
        return [float(self.mu)]


@dataclass(frozen=True, eq=False)
class Finite(TargetModel):
    """Distribution on the alphabet ``{0, ..., t-1}``; samples hold symbol indices."""

    probs: np.ndarray
    continuous = False

    def __post_init__(self):
        p = _check_probs(self.probs)
        if p.size < 2:
            raise InvalidInputError("finite alphabet needs at least two symbols")
        object.__setattr__(self, "probs", p)

    def __eq__(self, other):
        return type(other) is Finite and np.array_equal(self.probs, other.probs)

    __hash__ = None

    @property
    def t(self):
        return self.probs.shape[0]

    @property
    def dim(self):
        return 1

    def draw(self, n, gen):
        return gen.choice(self.t, size=n, p=self.probs).astype(float)[:, None]

    def _symbols(self, X):
        s = as_samples(X)[:, 0]
        idx = s.astype(int)
        if np.any(idx != s) or np.any(idx < 0) or np.any(idx >= self.t):
            raise InvalidInputError(f"symbols must be integers in [0, {self.t})")
        return idx

    def logpdf(self, X):
        with np.errstate(divide="ignore"):
            return np.log(self.probs[self._symbols(X)])

    def score_batch(self, X):
        raise UnsupportedModelError("finite models have no Lebesgue density, hence no score")


class Unnormalized(TargetModel):
    """A model whose log density is shifted by an unknown constant.

    Sampling and the score are delegated unchanged, which is all the Stein
    statistics ever touch.
    """

    def __init__(self, base: TargetModel, log_const: float):
        self.base = base
        self.log_const = float(log_const)
        self.continuous = base.continuous

    @property
    def dim(self):
        return self.base.dim

    def draw(self, n, gen):
        return self.base.draw(n, gen)

    def logpdf(self, X):
        return self.base.logpdf(X) + self.log_const

    def score_batch(self, X):
        return self.base.score_batch(X)


def gauss(mu=0.0, sigma2=1.0) -> GaussianDiag:
    return GaussianDiag(mu, float(sigma2))


def mixture(weights, means, sigma2=1.0) -> GaussianMixture:
    return GaussianMixture(weights, means, float(sigma2))


def laplace(mu=0.0, b=1.0) -> Laplace1D:
    return Laplace1D(float(mu), float(b))


def finite(probs) -> Finite:
    return Finite(probs)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(";") if v != ""]


def parse_model(text: str) -> TargetModel:
    """Parse descriptors like ``gauss:mu=0,sigma2=8`` or ``finite:p=.5;.5``."""
    name, sep, body = text.strip().partition(":")
    if not sep:
        raise InvalidInputError(f"model descriptor {text!r} lacks a ':'")
    pairs = {}
    for item in body.split(","):
        key, eq, value = item.partition("=")
        if not eq:
            raise InvalidInputError(f"malformed model parameter {item!r}")
        pairs[key.strip()] = value.strip()
    try:
        if name == "gauss":
            return gauss(_floats(pairs.get("mu", "0")), float(pairs.get("sigma2", "1")))
        if name == "laplace":
            return laplace(float(pairs.get("mu", "0")), float(pairs.get("b", "1")))
        if name == "mix":
            return mixture(_floats(pairs["w"]), _floats(pairs["mu"]), float(pairs.get("sigma2", "1")))
        if name == "finite":
            return finite(_floats(pairs["p"]))
    except KeyError as exc:
        raise InvalidInputError(f"model {name!r} is missing parameter {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"cannot parse model descriptor {text!r}: {exc}") from exc
    raise InvalidInputError(f"unknown model {name!r}")


def sample(model: TargetModel, n: int, rng) -> Sample:
    """Draw ``n`` i.i.d. points; deterministic given the stream."""
    if int(n) != n or n < 1:
        raise InvalidInputError(f"sample size must be a positive integer, got {n}")
    rng = _as_rng(rng)
    return Sample(model.draw(int(n), rng.generator), seed=rng.seeds)


def log_density(model: TargetModel, x) -> float:
    """Exact log density at one point; ``-inf`` off the support of a finite model."""
    return float(model.logpdf(as_point(x)[None, :])[0])


def score(model: TargetModel, x) -> np.ndarray:
    """Gradient of the log density at one point."""
    return model.score_batch(as_point(x)[None, :])[0]


def _embedding_parts(model: TargetModel, spec: KernelSpec):
    if spec.kind == GAUSSIAN:
        try:
            return model.gaussian_components()
        except NoClosedFormError:
            pass
    raise NoClosedFormError(f"no closed-form embedding for {type(model).__name__} with {spec}")


def mean_embedding(model: TargetModel, spec: KernelSpec, X) -> np.ndarray:
    """``E_{y~P} k(x_i, y)`` for each row of ``X``."""
    X = as_samples(X)
    if spec.kind == DELTA and isinstance(model, Finite):
        return model.probs[model._symbols(X)]
    weights, means, s2 = _embedding_parts(model, spec)
    if X.shape[1] != means.shape[1]:
        raise InvalidInputError("dimension mismatch between points and model")
    v = spec.w + s2
    r2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return (spec.w / v) ** (X.shape[1] / 2.0) * (np.exp(-r2 / (2.0 * v)) @ weights)


def mean_embedding_dot(model: TargetModel, spec: KernelSpec, x) -> float:
    return float(mean_embedding(model, spec, as_point(x)[None, :])[0])


def embedding_inner(model_a: TargetModel, model_b: TargetModel, spec: KernelSpec) -> float:
    """``E k(a, b)`` with ``a ~ model_a`` and ``b ~ model_b`` independent."""
    if spec.kind == DELTA and isinstance(model_a, Finite) and isinstance(model_b, Finite):
        if model_a.t != model_b.t:
            raise InvalidInputError("alphabet sizes differ")
        return float(model_a.probs @ model_b.probs)
    wa, ma, sa = _embedding_parts(model_a, spec)
    wb, mb, sb = _embedding_parts(model_b, spec)
    if ma.shape[1] != mb.shape[1]:
        raise InvalidInputError("dimension mismatch between models")
    v = spec.w + sa + sb
    r2 = ((ma[:, None, :] - mb[None, :, :]) ** 2).sum(axis=2)
    return float((spec.w / v) ** (ma.shape[1] / 2.0) * (wa @ np.exp(-r2 / (2.0 * v)) @ wb))


def embedding_norm_sq(model: TargetModel, spec: KernelSpec) -> float:
    """``E k(y, y')`` for ``y, y'`` i.i.d. from the model."""
    return embedding_inner(model, model, spec)


def quad_1d(fn, lo: float, hi: float, points: Sequence[float] = (), tol: float = 1e-6) -> float:
    """Adaptive Gauss-Kronrod integral of ``fn`` over ``[lo, hi]``."""
    pts = sorted({p for p in points if lo < p < hi})
    value, err = integrate.quad(fn, lo, hi, points=pts or None, limit=400,
                                epsabs=tol * 1e-3, epsrel=1e-10)
    if not err <= tol:
        raise QuadratureError(f"quadrature error estimate {err:g} exceeds {tol:g}")
    return float(value)


def integrate_density(model: TargetModel) -> float:
    lo, hi = model.support_box()
    return quad_1d(lambda x: float(np.exp(model.logpdf([x])[0])), lo, hi, model.breakpoints())


def kld(model_p: TargetModel, model_q: TargetModel) -> float:
    """Kullback-Leibler divergence ``D(P || Q)`` in nats."""
    if isinstance(model_p, Finite) or isinstance(model_q, Finite):
        if not (isinstance(model_p, Finite) and isinstance(model_q, Finite)):
            raise UnsupportedModelError("cannot mix finite and continuous models")
        if model_p.t != model_q.t:
            raise InvalidInputError("alphabet sizes differ")
        p, q = model_p.probs, model_q.probs
        if np.any((p > 0) & (q == 0)):
            return float("inf")
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.sum(xlogy(p, p) - xlogy(p, q)))
    if type(model_p) is GaussianDiag and type(model_q) is GaussianDiag:
        d = model_p.dim
        if model_q.dim != d:
            raise InvalidInputError("dimension mismatch between models")
        r = model_p.sigma2 / model_q.sigma2
        shift = float(np.sum((model_p.mu - model_q.mu) ** 2)) / model_q.sigma2
        return 0.5 * (d * r + shift - d - d * np.log(r))
    if model_p.dim != 1 or model_q.dim != 1:
        raise UnsupportedModelError("quadrature KLD is only available in one dimension")
    lo, hi = model_p.support_box()

    def integrand(x):
        lp = model_p.logpdf([x])[0]
        if lp == -np.inf:
            return 0.0
        return float(np.exp(lp) * (lp - model_q.logpdf([x])[0]))

    return max(0.0, quad_1d(integrand, lo, hi, model_p.breakpoints() + model_q.breakpoints()))
