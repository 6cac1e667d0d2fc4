"""Kernel control variates: the inverse-quadratic-weighted Gaussian base kernel,
its analytic derivatives, the zero-mean kernel obtained by applying the Langevin
operator to both arguments, the closed-form interpolation solve, and the median
heuristic for length-scales."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist

from .core import ScoredSampleSet

__all__ = [
    "ALPHA1_GRID",
    "BaseKernelParams",
    "KernelCV",
    "KernelFamily",
    "base_kernel",
    "base_kernel_derivatives",
    "stein_kernel",
    "stein_kernel_gram",
    "median_heuristic",
    "fit_control_functional",
]

# default cross-validation grid for the prefactor strength alpha1
ALPHA1_GRID = (1e6, 1e5, 1e4, 1e3, 1e2, 1e1, 1.0, 1e-1, 1e-2)


@dataclass(frozen=True)
class BaseKernelParams:
    """Hyperparameters of k(x, y) = (1 + a1|x|^2 + a1|y|^2)^{-1} exp(-|x-y|^2 / (2 a2^2))."""

    alpha1: float
    alpha2: float

    def __post_init__(self):
        if self.alpha1 < 0:
            raise ValueError("alpha1 must be >= 0")
        if self.alpha2 <= 0:
            raise ValueError("alpha2 (length-scale) must be > 0")


def base_kernel(x: np.ndarray, y: np.ndarray, params: BaseKernelParams) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    a1, a2 = params.alpha1, params.alpha2
    pref = 1.0 / (1.0 + a1 * (x @ x) + a1 * (y @ y))
    diff = x - y
    return float(pref * np.exp(-(diff @ diff) / (2.0 * a2 * a2)))


def base_kernel_derivatives(
    x: np.ndarray, y: np.ndarray, params: BaseKernelParams
) -> tuple[np.ndarray, np.ndarray, float]:
    """Analytic (grad_x k, grad_y k, div_x grad_y k) of the base kernel.

    Derived by the product rule on the inverse-quadratic prefactor
    p = (1 + a1|x|^2 + a1|y|^2)^{-1} and the Gaussian factor
    q = exp(-|x-y|^2 / (2 a2^2)):

        grad_x k = -p q (2 a1 p x + (x - y) / a2^2)
        grad_y k = -p q (2 a1 p y - (x - y) / a2^2)
        div      = 8 a1^2 (x.y) p^3 q - 2 a1 p^2 q |x-y|^2 / a2^2
                   + p q (d / a2^2 - |x-y|^2 / a2^4)
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = x.shape[0]
    a1, a2 = params.alpha1, params.alpha2
    inv_a2sq = 1.0 / (a2 * a2)
    p = 1.0 / (1.0 + a1 * (x @ x) + a1 * (y @ y))
    diff = x - y
    r2 = diff @ diff
    q = np.exp(-0.5 * r2 * inv_a2sq)
    pq = p * q
    grad_x = -pq * (2.0 * a1 * p * x + diff * inv_a2sq)
    grad_y = -pq * (2.0 * a1 * p * y - diff * inv_a2sq)
    div = (
        8.0 * a1 * a1 * (x @ y) * p**3 * q
        - 2.0 * a1 * p * pq * r2 * inv_a2sq
        + pq * (d * inv_a2sq - r2 * inv_a2sq * inv_a2sq)
    )
    return grad_x, grad_y, float(div)


def stein_kernel(
    x: np.ndarray,
    y: np.ndarray,
    score_x: np.ndarray,
    score_y: np.ndarray,
    params: BaseKernelParams,
) -> float:
    """Zero-mean kernel: div_x grad_y k + grad_x k . score_y + grad_y k . score_x
    + k(x, y) score_x . score_y."""
    return float(
        stein_kernel_gram(
            np.atleast_2d(x), np.atleast_2d(score_x), np.atleast_2d(y), np.atleast_2d(score_y), params
        )[0, 0]
    )


def _gram_block(xa, sa, xb, sb, params: BaseKernelParams) -> np.ndarray:
    a1, a2 = params.alpha1, params.alpha2
    inv_a2sq = 1.0 / (a2 * a2)
    d = xa.shape[1]
    sqa = np.einsum("id,id->i", xa, xa)
    sqb = np.einsum("id,id->i", xb, xb)
    cross = xa @ xb.T
    r2 = np.maximum(sqa[:, None] + sqb[None, :] - 2.0 * cross, 0.0)
    p = 1.0 / (1.0 + a1 * sqa[:, None] + a1 * sqb[None, :])
    q = np.exp(-0.5 * r2 * inv_a2sq)
    pq = p * q
    x_dot_sb = xa @ sb.T
    y_dot_sa = sa @ xb.T
    diff_dot_sb = x_dot_sb - np.einsum("id,id->i", xb, sb)[None, :]
    diff_dot_sa = np.einsum("id,id->i", xa, sa)[:, None] - y_dot_sa
    div = (
        8.0 * a1 * a1 * cross * p**3 * q
        - 2.0 * a1 * p * pq * r2 * inv_a2sq
        + pq * (d * inv_a2sq - r2 * inv_a2sq * inv_a2sq)
    )
    gx_dot_sb = -pq * (2.0 * a1 * p * x_dot_sb + diff_dot_sb * inv_a2sq)
    gy_dot_sa = -pq * (2.0 * a1 * p * y_dot_sa - diff_dot_sa * inv_a2sq)
    return div + gx_dot_sb + gy_dot_sa + pq * (sa @ sb.T)


def stein_kernel_gram(
    xa: np.ndarray,
    sa: np.ndarray,
    xb: np.ndarray,
    sb: np.ndarray,
    params: BaseKernelParams,
    row_chunk: int = 2048,
) -> np.ndarray:
    """Pairwise zero-mean kernel matrix, assembled in row blocks to bound the
    temporary memory at O(row_chunk * nb)."""
    xa = np.atleast_2d(np.asarray(xa, dtype=np.float64))
    sa = np.atleast_2d(np.asarray(sa, dtype=np.float64))
    xb = np.atleast_2d(np.asarray(xb, dtype=np.float64))
    sb = np.atleast_2d(np.asarray(sb, dtype=np.float64))
    na, nb = xa.shape[0], xb.shape[0]
    out = np.empty((na, nb))
    for start in range(0, na, row_chunk):
        stop = min(start + row_chunk, na)
        out[start:stop] = _gram_block(xa[start:stop], sa[start:stop], xb, sb, params)
    return out


def median_heuristic(states: np.ndarray) -> float:
    """Length-scale sqrt(median{|x_i - x_j|^2 : i < j} / 2)."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    sq = pdist(states, "sqeuclidean")
    med = float(np.median(sq))
    if med <= 0.0:
        raise ValueError("all points coincide; median heuristic undefined")
    return float(np.sqrt(0.5 * med))


@dataclass(frozen=True)
class KernelCV:
    """Kernel control variate g(x) = sum_i theta_i k0(x, x_i) over stored centers."""

    params: BaseKernelParams
    centers: ScoredSampleSet
    theta: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.shape[0] != self.centers.n:
            raise ValueError("theta length must equal the number of centers")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "theta", theta)

    def __call__(self, states: np.ndarray, scores: np.ndarray) -> np.ndarray:
        gram = stein_kernel_gram(
            states, scores, self.centers.states, self.centers.scores, self.params
        )
        return gram @ self.theta


class KernelFamily:
    """Linear-in-theta view of the kernel family for SGD training.

    Feature rows are kernel evaluations against the stored centers, computed on
    the fly per batch so one SGD step costs O(batch * centers) and no quadratic
    Gram matrix is ever materialized.
    """

    def __init__(self, params: BaseKernelParams, centers: ScoredSampleSet):
        self.params = params
        self.centers = centers
        self.n_params = centers.n

    def feature_matrix(self, states: np.ndarray, scores: np.ndarray) -> np.ndarray:
        return stein_kernel_gram(
            states, scores, self.centers.states, self.centers.scores, self.params
        )

    def batch_feature_fn(self, train: ScoredSampleSet):
        def rows(idx: np.ndarray) -> np.ndarray:
            return stein_kernel_gram(
                train.states[idx],
                train.scores[idx],
                self.centers.states,
                self.centers.scores,
                self.params,
            )

        return rows

    def build_cv(self, theta: np.ndarray, offset: float) -> KernelCV:
        return KernelCV(self.params, self.centers, theta, offset)


def default_jitter(gram: np.ndarray) -> float:
    """Scale-aware stabilization: 1e-10 times the mean diagonal."""
    return 1e-10 * float(np.mean(np.diag(gram)))


def fit_control_functional(
    train: ScoredSampleSet,
    params: BaseKernelParams,
    jitter: Optional[float] = None,
) -> KernelCV:
    """Closed-form kernel interpolant control variate.

    Solves K theta = f - c 1 with c = (1^T K^{-1} f) / (1^T K^{-1} 1), where K is
    the zero-mean kernel matrix over the training points with ``jitter * I``
    added before the Cholesky factorization (default 1e-10 times the mean
    diagonal).
    """
    if train.f_values is None:
        raise ValueError("training set must carry f_values")
    if train.n < 2:
        raise ValueError("control functional needs at least 2 training samples")
    if train.n > 20_000:
        raise ValueError(
            "closed-form solve is quadratic in memory; use SGD training beyond m = 20000"
        )
    gram = stein_kernel_gram(
        train.states, train.scores, train.states, train.scores, params
    )
    eps = default_jitter(gram) if jitter is None else float(jitter)
    try:
        factor = linalg.cho_factor(gram + eps * np.eye(train.n), lower=True)
    except np.linalg.LinAlgError:
        raise ValueError(
            f"kernel matrix factorization failed at jitter={eps:g}; "
            "increase the jitter"
        ) from None
    f = train.f_values
    ones = np.ones(train.n)
    k_inv_f = linalg.cho_solve(factor, f)
    k_inv_1 = linalg.cho_solve(factor, ones)
    c = float(ones @ k_inv_f) / float(ones @ k_inv_1)
    theta = k_inv_f - c * k_inv_1
    return KernelCV(params, ScoredSampleSet(train.states, train.scores), theta, c)
