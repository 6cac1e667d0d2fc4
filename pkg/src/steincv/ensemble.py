"""Additive ensembles of a polynomial and one or more kernel control variates,
with the closed-form saddle-point solve that interpolates the data while staying
exact on the polynomial span."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .core import ScoredSampleSet
from .kernels import (
    BaseKernelParams,
    KernelCV,
    default_jitter,
    median_heuristic,
    stein_kernel_gram,
)
from .poly import MultiIndexSet, PolynomialCV, stein_poly_basis

__all__ = [
    "EnsembleCV",
    "EnsembleFamily",
    "fit_semi_exact",
    "build_multi_kernel_params",
]


@dataclass(frozen=True)
class EnsembleCV:
    """Sum of a polynomial part and kernel parts sharing the same centers."""

    poly_part: PolynomialCV
    kernel_parts: tuple
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kernel_parts", tuple(self.kernel_parts))
        for part in self.kernel_parts:
            if part.centers.d != self.poly_part.multi_indices.d:
                raise ValueError("all ensemble parts must share the dimension d")

    def __call__(self, states: np.ndarray, scores: np.ndarray) -> np.ndarray:
        out = self.poly_part(states, scores)
        for part in self.kernel_parts:
            out = out + part(states, scores)
        return out


class EnsembleFamily:
    """Linear-in-theta view of the ensemble: concatenated polynomial basis and
    kernel features against shared centers."""

    def __init__(
        self,
        multi_indices: MultiIndexSet,
        kernel_params: tuple,
        centers: ScoredSampleSet,
    ):
        self.multi_indices = multi_indices
        self.kernel_params = tuple(kernel_params)
        self.centers = centers
        self.n_params = multi_indices.p + centers.n * len(self.kernel_params)

    def feature_matrix(self, states: np.ndarray, scores: np.ndarray) -> np.ndarray:
        blocks = [stein_poly_basis(states, scores, self.multi_indices)]
        for params in self.kernel_params:
            blocks.append(
                stein_kernel_gram(
                    states, scores, self.centers.states, self.centers.scores, params
                )
            )
        return np.concatenate(blocks, axis=1)

    def batch_feature_fn(self, train: ScoredSampleSet):
        def rows(idx: np.ndarray) -> np.ndarray:
            return self.feature_matrix(train.states[idx], train.scores[idx])

        return rows

    def build_cv(self, theta: np.ndarray, offset: float) -> EnsembleCV:
        p = self.multi_indices.p
        m = self.centers.n
        poly = PolynomialCV(self.multi_indices, theta[:p])
        parts = []
        for i, params in enumerate(self.kernel_params):
            parts.append(KernelCV(params, self.centers, theta[p + i * m : p + (i + 1) * m]))
        return EnsembleCV(poly, tuple(parts), offset)


def _check_full_rank(b_mat: np.ndarray) -> None:
    svals = np.linalg.svd(b_mat, compute_uv=False)
    if svals[-1] > 1e-10 * svals[0]:
        return
    # identify which basis columns load on the (near) null space
    _, _, vt = np.linalg.svd(b_mat)
    null = vt[svals <= 1e-10 * svals[0]]
    loaded = sorted(set(np.where(np.abs(null) > 0.3)[1].tolist()))
    names = ["constant" if j == 0 else f"b_{j}" for j in loaded]
    raise ValueError(
        "polynomial block is rank-deficient on the training points; dependent "
        f"columns: {', '.join(names)}"
    )


def fit_semi_exact(
    train: ScoredSampleSet,
    mi: MultiIndexSet,
    params: BaseKernelParams,
    jitter: Optional[float] = None,
) -> EnsembleCV:
    """Closed-form ensemble solve via the saddle-point system

        [K + eps*I   B] [theta_k]   [f]
        [B^T         0] [beta   ] = [0]

    where K is the zero-mean kernel matrix over the training points and B has a
    leading ones column followed by the polynomial basis columns. The solution
    interpolates f at every training point and reproduces f exactly whenever f
    lies in the span of {1, b_1, ..., b_p}; beta[0] is the constant offset.
    """
    if train.f_values is None:
        raise ValueError("training set must carry f_values")
    m = train.n
    p = mi.p
    if m < p + 2:
        raise ValueError(f"need m >= p + 2 training samples (m={m}, p={p})")
    basis = stein_poly_basis(train.states, train.scores, mi)
    b_mat = np.concatenate([np.ones((m, 1)), basis], axis=1)
    _check_full_rank(b_mat)
    gram = stein_kernel_gram(train.states, train.scores, train.states, train.scores, params)
    eps = default_jitter(gram) if jitter is None else float(jitter)
    size = m + p + 1
    sys = np.zeros((size, size))
    sys[:m, :m] = gram + eps * np.eye(m)
    sys[:m, m:] = b_mat
    sys[m:, :m] = b_mat.T
    rhs = np.zeros(size)
    rhs[:m] = train.f_values
    lu, piv = linalg.lu_factor(sys)
    sol = linalg.lu_solve((lu, piv), rhs)
    # one round of iterative refinement keeps the exactness constraints tight
    sol += linalg.lu_solve((lu, piv), rhs - sys @ sol)
    theta_k = sol[:m]
    offset = float(sol[m])
    theta_p = sol[m + 1 :]
    poly = PolynomialCV(mi, theta_p)
    kernel = KernelCV(params, ScoredSampleSet(train.states, train.scores), theta_k)
    return EnsembleCV(poly, (kernel,), offset)


def build_multi_kernel_params(
    states: np.ndarray, alpha1: float = 0.01
) -> tuple[BaseKernelParams, BaseKernelParams]:
    """Two length-scales from the median heuristic: (l, sqrt(2) * l), shared alpha1."""
    ell = median_heuristic(states)
    return (
        BaseKernelParams(alpha1, ell),
        BaseKernelParams(alpha1, float(np.sqrt(2.0) * ell)),
    )
