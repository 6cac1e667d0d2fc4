"""Shared domain types, control-variate estimators, data splitting and error metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ScoredSampleSet",
    "SplitIndex",
    "Estimate",
    "ProblemInstance",
    "estimate_mc",
    "estimate_with_cv",
    "split_samples",
    "mean_absolute_error",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class ScoredSampleSet:
    """Sample states with precomputed scores (grad log density) and integrand values.

    ``states`` and ``scores`` are (n, d) matrices with identical shape;
    ``f_values`` is a length-n vector and may be absent for sets produced
    before the integrand has been evaluated.
    """

    states: np.ndarray
    scores: np.ndarray
    f_values: Optional[np.ndarray] = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        scores = np.atleast_2d(np.asarray(self.scores, dtype=np.float64))
        if states.shape != scores.shape:
            raise ValueError(
                f"states {states.shape} and scores {scores.shape} must have identical shape"
            )
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise ValueError("states must be a non-empty (n, d) matrix")
        _check_finite(states, "states")
        _check_finite(scores, "scores")
        object.__setattr__(self, "states", _freeze(states.copy()))
        object.__setattr__(self, "scores", _freeze(scores.copy()))
        if self.f_values is not None:
            f = np.asarray(self.f_values, dtype=np.float64).reshape(-1)
            if f.shape[0] != states.shape[0]:
                raise ValueError(
                    f"f_values has length {f.shape[0]}, expected {states.shape[0]}"
                )
            _check_finite(f, "f_values")
            object.__setattr__(self, "f_values", _freeze(f.copy()))

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def subset(self, indices: np.ndarray) -> "ScoredSampleSet":
        """Row-subset of the sample set (f_values carried along when present)."""
        idx = np.asarray(indices, dtype=np.int64)
        f = None if self.f_values is None else self.f_values[idx]
        return ScoredSampleSet(self.states[idx], self.scores[idx], f)

    def with_f_values(self, f_values: np.ndarray) -> "ScoredSampleSet":
        return ScoredSampleSet(self.states, self.scores, f_values)


@dataclass(frozen=True)
class SplitIndex:
    """Disjoint train/eval index lists; both equal the full range in same-set mode."""

    train_indices: np.ndarray
    eval_indices: np.ndarray
    same_set: bool = False

    def __post_init__(self):
        object.__setattr__(
            self, "train_indices", _freeze(np.asarray(self.train_indices, dtype=np.int64))
        )
        object.__setattr__(
            self, "eval_indices", _freeze(np.asarray(self.eval_indices, dtype=np.int64))
        )


@dataclass(frozen=True)
class Estimate:
    """Point estimate of an integral with the sample variance of its residuals."""

    value: float
    residual_sample_variance: float
    n_eval: int
    offset: float = 0.0


@dataclass(frozen=True)
class ProblemInstance:
    """A test function, the distribution it is integrated against, and the exact
    integral when analytically known.

    ``target`` must expose ``dim``, ``score(states)`` and ``sample(count, seed)``.
    """

    test_function: Callable[[np.ndarray], np.ndarray]
    target: object
    true_integral: Optional[float] = None

    def __post_init__(self):
        if self.true_integral is not None and not np.isfinite(self.true_integral):
            raise ValueError("true_integral must be finite when present")


def _sample_variance(values: np.ndarray) -> float:
    """Unbiased sample variance; defined as 0 for a single observation."""
    if values.size <= 1:
        return 0.0
    return float(np.var(values, ddof=1))


def estimate_mc(f_values: np.ndarray) -> Estimate:
    """Plain Monte Carlo estimate: arithmetic mean and unbiased sample variance."""
    f = np.asarray(f_values, dtype=np.float64).reshape(-1)
    if f.size == 0:
        raise ValueError("cannot estimate from an empty sample")
    _check_finite(f, "f_values")
    return Estimate(float(np.mean(f)), _sample_variance(f), int(f.size))


def estimate_with_cv(
    f_values: np.ndarray, g_values: np.ndarray, offset: float = 0.0
) -> Estimate:
    """Control-variate estimate: mean of f - g.

    Because the control variate integrates to zero, the mean of f - g already
    estimates the integral of f; the fitted constant ``offset`` is reported
    alongside but never added to the value.
    """
    f = np.asarray(f_values, dtype=np.float64).reshape(-1)
    g = np.asarray(g_values, dtype=np.float64).reshape(-1)
    if f.shape != g.shape:
        raise ValueError(f"f_values ({f.size}) and g_values ({g.size}) length mismatch")
    if f.size == 0:
        raise ValueError("cannot estimate from an empty sample")
    _check_finite(f, "f_values")
    _check_finite(g, "g_values")
    resid = f - g
    return Estimate(float(np.mean(resid)), _sample_variance(resid), int(f.size), float(offset))


def split_samples(
    samples, m: int, policy: str = "first_m", seed: Optional[int] = None
) -> SplitIndex:
    """Split n samples into a size-m train part and an eval part.

    ``policy`` is one of ``first_m`` (first m rows train, remainder eval),
    ``random`` (seeded permutation, then as first_m) or ``same_set`` (train
    and eval are both the full index range; flagged so the bias caveat of
    same-set estimation stays visible in outputs).
    """
    n = samples.n if isinstance(samples, ScoredSampleSet) else int(samples)
    if not 1 <= m <= n:
        raise ValueError(f"train size m={m} must satisfy 1 <= m <= n={n}")
    if policy == "first_m":
        order = np.arange(n)
    elif policy == "random":
        if seed is None:
            raise ValueError("policy 'random' requires an explicit seed")
        order = np.random.default_rng(seed).permutation(n)
    elif policy == "same_set":
        full = np.arange(n)
        return SplitIndex(full, full.copy(), same_set=True)
    else:
        raise ValueError(f"unknown split policy: {policy!r}")
    return SplitIndex(order[:m], order[m:], same_set=False)


def mean_absolute_error(estimates: np.ndarray, truth: float) -> float:
    """Mean of |estimate - truth| over repeated estimates."""
    e = np.asarray(estimates, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ValueError("cannot compute MAE of an empty estimate list")
    return float(np.mean(np.abs(e - truth)))
