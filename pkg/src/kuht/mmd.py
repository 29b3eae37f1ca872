"""Squared maximum mean discrepancy statistics.

Model-vs-sample statistics need the closed-form embeddings from
:mod:`kuht.targets`; two-sample statistics need only the kernel. The
within-sample sums of the biased two-sample statistic carry their
``1/m^2`` and ``1/n^2`` normalisations.

:class:`PooledFactor` is the fast route used for permutation calibration
and large two-sample problems: a pivoted Cholesky factor of the pooled Gram
matrix, accurate entrywise to ``tol``, from which any split of the pooled
points can be scored in ``O(n r)`` time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from kuht.errors import InternalConsistencyError, InvalidInputError
from kuht.kernels import (
    FAMILY,
    KernelSpec,
    as_samples,
    gram,
    kernel_diag,
)
from kuht.targets import TargetModel, embedding_inner, embedding_norm_sq, mean_embedding

BIASED = "biased"
UNBIASED = "unbiased"

_CLAMP = 1e-12
_BLOCK = 2048


@dataclass(frozen=True)
class MmdValue:
    """A squared-MMD estimate; unbiased values may be negative."""

    value: float
    kind: str
    n: int
    m: Optional[int] = None

    def __float__(self):
        return float(self.value)


def clamp_nonnegative(value: float, tol: float = _CLAMP) -> float:
    """Map ``[-tol, 0)`` to 0; anything more negative signals a bug."""
    if value >= 0:
        return float(value)
    if value >= -tol:
        return 0.0
    raise InternalConsistencyError(f"biased statistic is negative: {value!r}")


def gram_sum(spec: KernelSpec, A, B=None) -> float:
    """Sum of all kernel entries between rows of ``A`` and ``B``, in fixed blocks."""
    A = as_samples(A)
    B = A if B is None else as_samples(B)
    if A.shape[0] * B.shape[0] <= _BLOCK * _BLOCK:
        return float(gram(spec, A, B).sum())
    partial = [
        gram(spec, A[i:i + _BLOCK], B[j:j + _BLOCK]).sum()
        for i in range(0, A.shape[0], _BLOCK)
        for j in range(0, B.shape[0], _BLOCK)
    ]
    return float(np.sum(partial))


def _model_terms(model: TargetModel, spec: KernelSpec, X: np.ndarray):
    if X.shape[1] != model.dim:
        raise InvalidInputError("dimension mismatch between sample and model")
    return embedding_norm_sq(model, spec), float(mean_embedding(model, spec, X).mean())


def mmd2_biased_model(model: TargetModel, spec: KernelSpec, X) -> MmdValue:
    X = as_samples(X)
    n = X.shape[0]
    e_yy, e_xy = _model_terms(model, spec, X)
    value = gram_sum(spec, X) / n ** 2 + e_yy - 2.0 * e_xy
    return MmdValue(clamp_nonnegative(value), BIASED, n)


def mmd2_unbiased_model(model: TargetModel, spec: KernelSpec, X) -> MmdValue:
    X = as_samples(X)
    n = X.shape[0]
    if n < 2:
        raise InvalidInputError("unbiased statistic needs n >= 2")
    e_yy, e_xy = _model_terms(model, spec, X)
    within = gram_sum(spec, X) - kernel_diag(spec, X).sum()
    return MmdValue(within / (n * (n - 1)) + e_yy - 2.0 * e_xy, UNBIASED, n)


def _two_sample_sums(spec, Y, X):
    Y, X = as_samples(Y), as_samples(X)
    if Y.shape[1] != X.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {Y.shape[1]} vs {X.shape[1]}")
    return Y, X, gram_sum(spec, Y), gram_sum(spec, X), gram_sum(spec, X, Y)


def mmd2_biased_two(spec: KernelSpec, Y, X) -> MmdValue:
    Y, X, s_yy, s_xx, s_xy = _two_sample_sums(spec, Y, X)
    m, n = Y.shape[0], X.shape[0]
    value = s_yy / m ** 2 + s_xx / n ** 2 - 2.0 * s_xy / (m * n)
    return MmdValue(clamp_nonnegative(value), BIASED, n, m)


def mmd2_unbiased_two(spec: KernelSpec, Y, X) -> MmdValue:
    Y, X, s_yy, s_xx, s_xy = _two_sample_sums(spec, Y, X)
    m, n = Y.shape[0], X.shape[0]
    if m < 2 or n < 2:
        raise InvalidInputError("unbiased two-sample statistic needs m, n >= 2")
    s_yy -= kernel_diag(spec, Y).sum()
    s_xx -= kernel_diag(spec, X).sum()
    value = s_yy / (m * (m - 1)) + s_xx / (n * (n - 1)) - 2.0 * s_xy / (m * n)
    return MmdValue(value, UNBIASED, n, m)


def population_mmd2(model_p: TargetModel, model_q: TargetModel, spec: KernelSpec) -> float:
    """Closed-form squared MMD between two models."""
    value = (embedding_norm_sq(model_p, spec) + embedding_norm_sq(model_q, spec)
             - 2.0 * embedding_inner(model_p, model_q, spec))
    return clamp_nonnegative(value)


def sup_family(specs: KernelSpec, Y, X) -> float:
    """Largest unsquared biased two-sample MMD over the members of a family."""
    members = specs.members() if isinstance(specs, KernelSpec) else list(specs)
    if not members:
        raise InvalidInputError("kernel family is empty")
    return max(np.sqrt(mmd2_biased_two(k, Y, X).value) for k in members)


def pivoted_cholesky(spec: KernelSpec, Z, tol: float = 1e-12, max_rank: Optional[int] = None):
    """Greedy pivoted Cholesky factor ``F`` with ``|G - F F^T| <= tol`` entrywise.

    The residual ``G - F F^T`` is positive semidefinite, so its largest entry
    is bounded by its largest diagonal entry, which is the stopping rule.
    """
    Z = as_samples(Z)
    N = Z.shape[0]
    max_rank = N if max_rank is None else min(max_rank, N)
    resid = kernel_diag(spec, Z).astype(float)
    cols = []
    F = np.zeros((N, min(64, max_rank)))
    for j in range(max_rank):
        p = int(np.argmax(resid))
        if resid[p] <= tol:
            break
        if j == F.shape[1]:
            F = np.hstack([F, np.zeros((N, min(F.shape[1], max_rank - j)))])
        col = gram(spec, Z, Z[p:p + 1])[:, 0] - F[:, :j] @ F[p, :j]
        F[:, j] = col / np.sqrt(resid[p])
        resid -= F[:, j] ** 2
        resid[p] = 0.0
        cols.append(p)
    return F[:, :len(cols)]


class PooledFactor:
    """Low-rank view of the pooled Gram matrix of ``Y`` (first) and ``X`` (last)."""

    def __init__(self, spec: KernelSpec, Y, X, tol: float = 1e-12):
        Y, X = as_samples(Y), as_samples(X)
        if Y.shape[1] != X.shape[1]:
            raise InvalidInputError(f"dimension mismatch: {Y.shape[1]} vs {X.shape[1]}")
        if spec.kind == FAMILY:
            raise InvalidInputError("factor one family member at a time")
        self.spec = spec
        self.m, self.n = Y.shape[0], X.shape[0]
        self.tol = tol
        Z = np.vstack([Y, X])
        self.F = pivoted_cholesky(spec, Z, tol)
        self.diag = kernel_diag(spec, Z)
        self.u = self.F.sum(axis=0)
        self.total = float(self.u @ self.u)
        self.trace = float(self.diag.sum())

    @property
    def rank(self) -> int:
        return self.F.shape[1]

    def observed_index(self) -> np.ndarray:
        return np.arange(self.m, self.m + self.n)

    def statistics(self, x_idx, kind: str = BIASED) -> np.ndarray:
        """Statistic for each row of ``x_idx`` (indices of the pooled points labelled X)."""
        x_idx = np.atleast_2d(np.asarray(x_idx))
        m, n = self.m, self.n
        if x_idx.shape[1] != n:
            raise InvalidInputError(f"expected {n} indices per split, got {x_idx.shape[1]}")
        out = np.empty(x_idx.shape[0])
        for start in range(0, x_idx.shape[0], 64):
            idx = x_idx[start:start + 64]
            v = self.F[idx].sum(axis=1)
            s_xx = np.einsum("ij,ij->i", v, v)
            uv = v @ self.u
            s_xy = uv - s_xx
            s_yy = self.total - 2.0 * uv + s_xx
            if kind == BIASED:
                vals = s_yy / m ** 2 + s_xx / n ** 2 - 2.0 * s_xy / (m * n)
                # factor error is at most 4 tol on this scale
                vals = np.where((vals < 0) & (vals >= -4 * self.tol - _CLAMP), 0.0, vals)
                if np.any(vals < 0):
                    raise InternalConsistencyError("biased statistic is negative")
            elif kind == UNBIASED:
                tr_x = self.diag[idx].sum(axis=1)
                tr_y = self.trace - tr_x
                vals = ((s_yy - tr_y) / (m * (m - 1)) + (s_xx - tr_x) / (n * (n - 1))
                        - 2.0 * s_xy / (m * n))
            else:
                raise InvalidInputError(f"unknown statistic kind {kind!r}")
            out[start:start + idx.shape[0]] = vals
        return out

    def observed(self, kind: str = BIASED) -> float:
        return float(self.statistics(self.observed_index()[None, :], kind)[0])
