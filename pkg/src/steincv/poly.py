"""Polynomial control variates: multi-index enumeration, the score-weighted basis
obtained by pushing monomials through the Langevin operator, and the exact
ridge-regularized least-squares solve."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import ScoredSampleSet

__all__ = [
    "MultiIndexSet",
    "PolynomialCV",
    "PolynomialFamily",
    "enumerate_multi_indices",
    "stein_poly_basis",
    "fit_poly_exact",
]

# Refuse to enumerate bases whose size would exhaust memory long before any
# solve could run.
_MAX_BASIS_SIZE = 2_000_000


@dataclass(frozen=True)
class MultiIndexSet:
    """All d-dimensional multi-indices with total degree between 1 and k,
    in graded-lexicographic order (ascending degree, then ascending lex)."""

    alpha: np.ndarray
    degree: int

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=np.int64))

    @property
    def p(self) -> int:
        return self.alpha.shape[0]

    @property
    def d(self) -> int:
        return self.alpha.shape[1]


def _compositions(total: int, d: int):
    """All ways to write ``total`` as d ordered non-negative parts, lex ascending."""
    if d == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, d - 1):
            yield (first,) + rest


def enumerate_multi_indices(d: int, k: int) -> MultiIndexSet:
    """Enumerate the p = C(d+k, d) - 1 multi-indices with 1 <= |alpha| <= k."""
    if d < 1 or k < 1:
        raise ValueError("need dimension d >= 1 and degree k >= 1")
    p = math.comb(d + k, d) - 1
    if p > _MAX_BASIS_SIZE:
        raise ValueError(
            f"basis size C({d + k},{d}) - 1 = {p} exceeds the supported limit {_MAX_BASIS_SIZE}"
        )
    rows = []
    for total in range(1, k + 1):
        rows.extend(_compositions(total, d))
    alpha = np.asarray(rows, dtype=np.int64)
    assert alpha.shape[0] == p
    return MultiIndexSet(alpha, k)


def stein_poly_basis(
    states: np.ndarray, scores: np.ndarray, mi: MultiIndexSet
) -> np.ndarray:
    """Evaluate the length-p basis vector b at each sample row.

    Each b_j is the Langevin operator applied to the monomial x^alpha_j:

        b_j(x) = sum_l [ a_l x_l^{a_l-1} score_l + a_l (a_l - 1) x_l^{a_l-2} ]
                 * prod_{z != l} x_z^{a_z}

    with the conventions x^0 = 1 and vanishing terms for a_l = 0 (first term)
    and a_l <= 1 (second term), so negative powers are never formed.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n, d = states.shape
    if mi.d != d:
        raise ValueError(f"multi-index dimension {mi.d} != state dimension {d}")
    k = int(mi.alpha.max(initial=1))
    # pows[z, e] = states[:, z] ** e for e in 0..k
    pows = np.empty((d, k + 1, n))
    pows[:, 0] = 1.0
    for e in range(1, k + 1):
        pows[:, e] = pows[:, e - 1] * states.T
    out = np.empty((n, mi.p))
    for j in range(mi.p):
        a = mi.alpha[j]
        # prefix/suffix products give prod_{z != l} x_z^{a_z} without division
        prefix = np.ones((d + 1, n))
        for z in range(d):
            prefix[z + 1] = prefix[z] * pows[z, a[z]]
        suffix = np.ones((d + 1, n))
        for z in range(d - 1, -1, -1):
            suffix[z] = suffix[z + 1] * pows[z, a[z]]
        acc = np.zeros(n)
        for l in range(d):
            al = int(a[l])
            if al == 0:
                continue
            rest = prefix[l] * suffix[l + 1]
            acc += al * pows[l, al - 1] * scores[:, l] * rest
            if al >= 2:
                acc += al * (al - 1) * pows[l, al - 2] * rest
        out[:, j] = acc
    return out


@dataclass(frozen=True)
class PolynomialCV:
    """Zero-mean polynomial control variate g(x) = theta . b(x)."""

    multi_indices: MultiIndexSet
    theta: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.shape[0] != self.multi_indices.p:
            raise ValueError("theta length must equal the basis size p")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "theta", theta)

    def __call__(self, states: np.ndarray, scores: np.ndarray) -> np.ndarray:
        return stein_poly_basis(states, scores, self.multi_indices) @ self.theta


class PolynomialFamily:
    """Linear-in-theta view of the polynomial family for SGD training."""

    def __init__(self, multi_indices: MultiIndexSet):
        self.multi_indices = multi_indices
        self.n_params = multi_indices.p

    def feature_matrix(self, states: np.ndarray, scores: np.ndarray) -> np.ndarray:
        return stein_poly_basis(states, scores, self.multi_indices)

    def build_cv(self, theta: np.ndarray, offset: float) -> PolynomialCV:
        return PolynomialCV(self.multi_indices, theta, offset)


def fit_poly_exact(
    train: ScoredSampleSet, mi: MultiIndexSet, ridge: float = 0.0
) -> PolynomialCV:
    """Exact solve of the least-squares objective over the polynomial family.

    Builds the centered second-moment matrix V and cross-moment vector C of the
    basis over the training set and solves (V + ridge*I) theta = C by Cholesky
    factorization. The offset is the training mean of f - theta . b.
    """
    if train.f_values is None:
        raise ValueError("training set must carry f_values")
    if train.n < 2:
        raise ValueError("exact solve needs at least 2 training samples")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    basis = stein_poly_basis(train.states, train.scores, mi)
    f = train.f_values
    bc = basis - basis.mean(axis=0)
    fc = f - f.mean()
    denom = train.n - 1
    v_hat = (bc.T @ bc) / denom
    c_hat = (bc.T @ fc) / denom
    try:
        factor = linalg.cho_factor(v_hat + ridge * np.eye(mi.p))
    except np.linalg.LinAlgError:
        if ridge == 0.0:
            raise ValueError(
                "singular basis moment matrix; increase the training size m or "
                "use ridge > 0"
            ) from None
        raise
    theta = linalg.cho_solve(factor, c_hat)
    offset = float(np.mean(f - basis @ theta))
    return PolynomialCV(mi, theta, offset)
