"""Synthetic integration problems with analytically known answers: polynomial
integrands against a Gaussian, the six Genz test functions pushed to R^d through
the normal CDF, and integrands drawn jointly with their integral from a Gaussian
process."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .core import ProblemInstance
from .targets import GaussianTarget, MixtureTarget, mixture_from_json, random_mixture

__all__ = [
    "GENZ_KINDS",
    "PolynomialIntegrand",
    "GenzProblem",
    "GpProblem",
    "standard_normal_cdf",
    "double_factorial",
    "sample_gp_problem",
    "gp_mean_embedding",
    "gp_double_integral",
    "problem_instance_from_spec",
]

GENZ_KINDS = (
    "continuous",
    "corner_peak",
    "discontinuous",
    "gaussian_peak",
    "oscillatory",
    "product_peak",
)

_MAX_SUBSET_DIM = 20


def standard_normal_cdf(x: np.ndarray) -> np.ndarray:
    """Standard normal CDF via the error function."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))


def double_factorial(k: int) -> int:
    """Product of integers of matching parity down to 1, with (-1)!! = 0!! = 1."""
    if k < -1:
        raise ValueError("double factorial defined here for k >= -1")
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


@dataclass(frozen=True)
class PolynomialIntegrand:
    """f(x) = sum_j prod_i coeffs[j,i] * x_i^exponents[j,i] against N(0, sigma2 I)."""

    coeffs: np.ndarray
    exponents: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=np.float64))
        exps = np.atleast_2d(np.asarray(self.exponents))
        if coeffs.shape != exps.shape:
            raise ValueError("coeffs and exponents must have equal shapes")
        if np.any(exps < 0) or not np.issubdtype(exps.dtype, np.integer):
            exps_int = exps.astype(np.int64)
            if np.any(exps_int != exps) or np.any(exps_int < 0):
                raise ValueError("exponents must be non-negative integers")
            exps = exps_int
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be > 0")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "exponents", exps.astype(np.int64))

    @property
    def d(self) -> int:
        return self.coeffs.shape[1]

    def __call__(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        terms = np.prod(
            self.coeffs[None, :, :] * states[:, None, :] ** self.exponents[None, :, :],
            axis=2,
        )
        return terms.sum(axis=1)

    def integral(self) -> float:
        """Exact Gaussian integral via the even-moment double-factorial identity."""
        sigma = math.sqrt(self.sigma2)
        total = 0.0
        for j in range(self.coeffs.shape[0]):
            term = 1.0
            for i in range(self.d):
                beta = int(self.exponents[j, i])
                if beta % 2 == 1:
                    term = 0.0
                    break
                term *= self.coeffs[j, i] * sigma**beta * double_factorial(beta - 1)
            total += term
        return total


def _signed_subset_sum(terms) -> float:
    """Exact compensated summation of the signed subset-sum terms."""
    return math.fsum(terms)


@dataclass(frozen=True)
class GenzProblem:
    """One of the six Genz test functions on [0,1]^d with its exact integral."""

    kind: str
    a: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if self.kind not in GENZ_KINDS:
            raise ValueError(f"unknown Genz kind {self.kind!r}; choose from {GENZ_KINDS}")
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        if a.shape != u.shape:
            raise ValueError("a and u must have the same length")
        if np.any(a <= 0):
            raise ValueError("a must be positive elementwise")
        if np.any((u < 0) | (u > 1)):
            raise ValueError("u must lie in [0,1]^d")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "u", u)

    @classmethod
    def default(cls, kind: str, d: int) -> "GenzProblem":
        return cls(kind, np.full(d, 5.0), np.full(d, 0.5))

    @property
    def d(self) -> int:
        return self.a.shape[0]

    def eval_unit(self, y: np.ndarray) -> np.ndarray:
        """Evaluate on the unit cube."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        a, u = self.a, self.u
        if self.kind == "continuous":
            return np.exp(-np.sum(a * np.abs(y - u), axis=1))
        if self.kind == "corner_peak":
            return (1.0 + y @ a) ** (-(self.d + 1.0))
        if self.kind == "discontinuous":
            inside = np.all(y <= u, axis=1)
            out = np.zeros(y.shape[0])
            out[inside] = np.exp(y[inside] @ a)
            return out
        if self.kind == "gaussian_peak":
            return np.exp(-np.sum((a * (y - u)) ** 2, axis=1))
        if self.kind == "oscillatory":
            return np.cos(2.0 * np.pi * u[0] + y @ a)
        # product_peak
        return np.prod(1.0 / (a**-2.0 + (y - u) ** 2), axis=1)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the R^d version f(x) = h(Phi(x)) for a standard normal target."""
        return self.eval_unit(standard_normal_cdf(np.atleast_2d(x)))

    def integral(self) -> float:
        """Exact unit-cube integral (equals the Gaussian integral of the
        transformed version)."""
        a, u, d = self.a, self.u, self.d
        if self.kind == "continuous":
            return float(
                np.prod((2.0 - np.exp(a * (u - 1.0)) - np.exp(-a * u)) / a)
            )
        if self.kind == "corner_peak":
            if d > _MAX_SUBSET_DIM:
                raise ValueError(f"subset sum limited to d <= {_MAX_SUBSET_DIM}")
            scale = 1.0 / (math.factorial(d) * float(np.prod(a)))
            total_a = float(np.sum(a))
            terms = []
            for k in range(d + 1):
                for subset in itertools.combinations(range(d), k):
                    removed = float(np.sum(a[list(subset)])) if subset else 0.0
                    terms.append((-1.0) ** (k + d) * scale / (1.0 + total_a - removed))
            return _signed_subset_sum(terms)
        if self.kind == "discontinuous":
            return float(np.prod((np.exp(a * np.minimum(1.0, u)) - 1.0) / a))
        if self.kind == "gaussian_peak":
            per_dim = (
                (np.sqrt(np.pi) / 2.0)
                / a
                * (special.erf(a * (1.0 - u)) - special.erf(-a * u))
            )
            return float(np.prod(per_dim))
        if self.kind == "oscillatory":
            if d > _MAX_SUBSET_DIM:
                raise ValueError(f"subset sum limited to d <= {_MAX_SUBSET_DIM}")
            phase = 2.0 * np.pi * u[0]
            total_a = float(np.sum(a))
            mod = d % 4
            if mod == 1:
                g = math.sin
                sign = 1.0
            elif mod == 2:
                g = math.cos
                sign = -1.0
            elif mod == 3:
                g = math.sin
                sign = -1.0
            else:
                g = math.cos
                sign = 1.0
            scale = 1.0 / float(np.prod(a))
            terms = []
            for k in range(d + 1):
                for subset in itertools.combinations(range(d), k):
                    removed = float(np.sum(a[list(subset)])) if subset else 0.0
                    terms.append(
                        (-1.0) ** k * scale * sign * g(phase + total_a - removed)
                    )
            return _signed_subset_sum(terms)
        # product_peak
        return float(
            np.prod(a * (np.arctan((1.0 - u) * a) - np.arctan(-u * a)))
        )


def _sq_dists(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    sqa = np.einsum("id,id->i", xa, xa)
    sqb = np.einsum("id,id->i", xb, xb)
    return np.maximum(sqa[:, None] + sqb[None, :] - 2.0 * xa @ xb.T, 0.0)


def _mvn_pdf(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    y = np.linalg.solve(chol, (np.atleast_2d(points) - mean).T)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return np.exp(-0.5 * (d * np.log(2.0 * np.pi) + log_det + np.sum(y * y, axis=0)))


def gp_mean_embedding(
    points: np.ndarray, mixture: MixtureTarget, lam: float, sigma: float
) -> np.ndarray:
    """Integral of the squared-exponential covariance c(x, .) against the mixture:
    lam^2 (sqrt(2 pi) sigma)^d sum_l rho_l N(x | mu_l, Sigma_l + sigma^2 I)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = points.shape[1]
    scale = lam**2 * (np.sqrt(2.0 * np.pi) * sigma) ** d
    out = np.zeros(points.shape[0])
    eye = sigma**2 * np.eye(d)
    for l in range(mixture.n_components):
        out += mixture.weights[l] * _mvn_pdf(
            points, mixture.means[l], mixture.covariances[l] + eye
        )
    return scale * out


def gp_double_integral(mixture: MixtureTarget, lam: float, sigma: float) -> float:
    """Double mixture integral of the squared-exponential covariance."""
    d = mixture.dim
    scale = lam**2 * (np.sqrt(2.0 * np.pi) * sigma) ** d
    eye = sigma**2 * np.eye(d)
    total = 0.0
    for l in range(mixture.n_components):
        for m in range(mixture.n_components):
            cov = mixture.covariances[l] + mixture.covariances[m] + eye
            total += (
                mixture.weights[l]
                * mixture.weights[m]
                * float(_mvn_pdf(mixture.means[l][None, :], mixture.means[m], cov)[0])
            )
    return scale * total


@dataclass(frozen=True)
class GpProblem:
    """A function drawn from a centered GP, known only at sample points, together
    with the jointly sampled value of its integral against the mixture."""

    points: np.ndarray
    f_values: np.ndarray
    true_integral: float
    lam: float
    sigma: float
    mixture: MixtureTarget


def sample_gp_problem(
    points: np.ndarray,
    mixture: MixtureTarget,
    lam: float,
    sigma: float,
    seed: int,
    jitter: Optional[float] = None,
) -> GpProblem:
    """Draw (f(x_1), ..., f(x_n), integral) jointly from the GP marginal.

    The (n+1)-dimensional covariance stacks the kernel matrix, its mixture
    embedding at each point, and the double integral; jitter (default
    1e-10 * lam^2) escalates tenfold up to six times if the Cholesky fails.
    """
    if lam <= 0 or sigma <= 0:
        raise ValueError("lam and sigma must be > 0")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    kernel = lam**2 * np.exp(-_sq_dists(points, points) / (2.0 * sigma**2))
    emb = gp_mean_embedding(points, mixture, lam, sigma)
    cov = np.zeros((n + 1, n + 1))
    cov[:n, :n] = kernel
    cov[:n, n] = emb
    cov[n, :n] = emb
    cov[n, n] = gp_double_integral(mixture, lam, sigma)
    eps = 1e-10 * lam**2 if jitter is None else float(jitter)
    chol = None
    for _ in range(7):
        try:
            chol = np.linalg.cholesky(cov + eps * np.eye(n + 1))
            break
        except np.linalg.LinAlgError:
            eps *= 10.0
    if chol is None:
        raise ValueError("GP joint covariance not positive definite even after jitter escalation")
    z = np.random.default_rng(seed).standard_normal(n + 1)
    draw = chol @ z
    return GpProblem(points, draw[:n], float(draw[n]), lam, sigma, mixture)


def problem_instance_from_spec(spec: dict, seed: int = 0) -> ProblemInstance:
    """Build a ProblemInstance from a JSON-style problem specification.

    Supported forms:
      {"problem": "genz", "kind": ..., "d": ..., "a": [...], "u": [...]}
      {"problem": "poly", "alpha": [[...]], "beta": [[...]], "sigma2": ...}
      {"problem": "gp", ...} has no fixed test function; repetition-level GP
      draws are handled by the benchmark runner and rejected here.
    """
    name = spec.get("problem")
    if name == "genz":
        d = int(spec.get("d", 1))
        a = np.asarray(spec.get("a", np.full(d, 5.0)), dtype=np.float64)
        u = np.asarray(spec.get("u", np.full(d, 0.5)), dtype=np.float64)
        genz = GenzProblem(spec["kind"], a, u)
        target = GaussianTarget(np.zeros(genz.d), 1.0)
        return ProblemInstance(genz, target, genz.integral())
    if name == "poly":
        integrand = PolynomialIntegrand(
            np.asarray(spec["alpha"], dtype=np.float64),
            np.asarray(spec["beta"]),
            float(spec.get("sigma2", 1.0)),
        )
        target = GaussianTarget(np.zeros(integrand.d), integrand.sigma2)
        return ProblemInstance(integrand, target, integrand.integral())
    if name == "gp":
        raise ValueError("gp problems are materialized per repetition, not as a fixed instance")
    raise ValueError(f"unknown problem kind: {name!r}")


def gp_spec_mixture(spec: dict, seed: int) -> MixtureTarget:
    """Mixture for a GP problem spec: explicit JSON mixture if given, otherwise
    a random one regenerated from the provided seed."""
    if "mixture" in spec and spec["mixture"] is not None:
        return mixture_from_json(spec["mixture"])
    return random_mixture(int(spec.get("d", 1)), int(spec.get("components", 3)), seed)
