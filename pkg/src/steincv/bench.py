"""Benchmark harness: repeated estimation runs over synthetic or ingested
problems, per-repetition seeding, MAE/timing aggregation and machine-readable
reports."""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .core import ScoredSampleSet, estimate_mc, estimate_with_cv, split_samples
from .ensemble import EnsembleFamily, build_multi_kernel_params, fit_semi_exact
from .kernels import BaseKernelParams, KernelFamily, fit_control_functional, median_heuristic
from .mlp import MlpControlFunction
from .poly import PolynomialFamily, enumerate_multi_indices, fit_poly_exact
from .problems import gp_spec_mixture, problem_instance_from_spec, sample_gp_problem
from .targets import load_scored_samples, sample_target
from .training import TrainConfig, sgd_train

__all__ = [
    "METHODS",
    "BenchmarkConfig",
    "RepetitionResult",
    "BenchmarkReport",
    "run_benchmark",
    "emit_report",
    "report_to_dict",
    "report_from_dict",
]

METHODS = (
    "mc",
    "poly_sgd",
    "poly_exact",
    "kernel_sgd",
    "kernel_exact",
    "nn_sgd",
    "ensemble_sgd",
    "ensemble_exact",
)

CSV_COLUMNS = "method,problem,d,n,m,rep,estimate,abs_error,train_seconds"


def _derived_seed(seed: int, tag: int) -> int:
    """Independent 64-bit stream seeds for the distinct random uses of one repetition."""
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0])


@dataclass(frozen=True)
class BenchmarkConfig:
    """One benchmark: a problem spec, an estimation method, sizes and seeds."""

    problem: dict
    method: str
    n: int = 1000
    m: int = 500
    split: str = "first_m"
    train: TrainConfig = field(default_factory=TrainConfig)
    repetitions: int = 20
    base_seed: int = 0
    degree: int = 2
    alpha1: float = 0.01
    alpha2: Optional[float] = None
    ridge: float = 0.0
    jitter: Optional[float] = None
    nn_widths: Optional[list] = None
    multi_kernel: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 1 <= self.m <= self.n:
            raise ValueError("need 1 <= m <= n")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["train"] = self.train.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "BenchmarkConfig":
        obj = dict(obj)
        if isinstance(obj.get("train"), dict):
            obj["train"] = TrainConfig.from_dict(obj["train"])
        elif "train" not in obj:
            obj["train"] = TrainConfig()
        return cls(**obj)


@dataclass
class RepetitionResult:
    rep: int
    estimate: Optional[float]
    abs_error: Optional[float]
    train_seconds: float
    estimate_seconds: float
    n_eval: int
    same_set: bool
    offset: float = 0.0
    residual_variance: float = 0.0
    error: Optional[str] = None
    model: object = field(default=None, compare=False, repr=False)


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    results: list
    mae: Optional[float]
    mean_estimate: Optional[float]
    mean_train_seconds: float
    n_failures: int
    problem_label: str
    d: int
    version: str = __version__


def _problem_label(spec: dict) -> str:
    name = spec.get("problem", "?")
    if name == "genz":
        return f"genz:{spec.get('kind', '?')}"
    if name == "ingest":
        return "ingest"
    return str(name)


def _problem_dim(spec: dict) -> int:
    name = spec.get("problem")
    if name == "genz":
        return int(spec.get("d", len(np.atleast_1d(spec.get("a", [5.0])))))
    if name == "poly":
        return int(np.atleast_2d(spec["alpha"]).shape[1])
    if name == "gp":
        return int(spec.get("d", 1))
    if name == "ingest":
        with open(spec["path"], "r", encoding="utf-8") as fh:
            header = fh.readline().split(",")
        return sum(1 for c in header if c.strip().startswith("x_"))
    return int(spec.get("d", 0))


def _materialize(config: BenchmarkConfig, rep: int):
    """Build the repetition's scored sample set with f values and the truth if known."""
    spec = config.problem
    data_seed = _derived_seed(config.base_seed + rep, 0)
    name = spec.get("problem")
    if name in ("genz", "poly"):
        instance = problem_instance_from_spec(spec)
        samples = sample_target(instance.target, config.n, data_seed)
        samples = samples.with_f_values(instance.test_function(samples.states))
        return samples, instance.true_integral
    if name == "gp":
        mix_seed = (
            _derived_seed(config.base_seed + rep, 3)
            if spec.get("mixture") is None
            else 0
        )
        mixture = gp_spec_mixture(spec, mix_seed)
        samples = sample_target(mixture, config.n, data_seed)
        gp = sample_gp_problem(
            samples.states,
            mixture,
            float(spec.get("lam", 1.0)),
            float(spec.get("sigma", 1.0)),
            _derived_seed(config.base_seed + rep, 1),
            spec.get("jitter"),
        )
        return samples.with_f_values(gp.f_values), gp.true_integral
    if name == "ingest":
        samples = load_scored_samples(spec["path"], f_column=True)
        if samples.n != config.n:
            raise ValueError(
                f"ingested file has n={samples.n} rows but the config says n={config.n}"
            )
        return samples, spec.get("true_integral")
    raise ValueError(f"unknown problem kind: {name!r}")


def _kernel_params(config: BenchmarkConfig, train: ScoredSampleSet) -> BaseKernelParams:
    alpha2 = config.alpha2
    if alpha2 is None:
        alpha2 = median_heuristic(train.states)
    return BaseKernelParams(config.alpha1, float(alpha2))


def _fit_model(config: BenchmarkConfig, train: ScoredSampleSet, rep: int):
    """Train or exact-solve the configured control variate; returns (model, offset)."""
    method = config.method
    d = train.d
    train_cfg = dataclasses.replace(config.train, seed=_derived_seed(config.train.seed + rep, 2))
    if method == "poly_exact":
        mi = enumerate_multi_indices(d, config.degree)
        cv = fit_poly_exact(train, mi, config.ridge)
        return cv, cv.offset
    if method == "poly_sgd":
        family = PolynomialFamily(enumerate_multi_indices(d, config.degree))
        report = sgd_train(family, train, train_cfg)
        return family.build_cv(report.theta, report.offset), report.offset
    if method == "kernel_exact":
        cv = fit_control_functional(train, _kernel_params(config, train), config.jitter)
        return cv, cv.offset
    if method == "kernel_sgd":
        family = KernelFamily(_kernel_params(config, train), train)
        report = sgd_train(family, train, train_cfg)
        return family.build_cv(report.theta, report.offset), report.offset
    if method == "ensemble_exact":
        mi = enumerate_multi_indices(d, config.degree)
        cv = fit_semi_exact(train, mi, _kernel_params(config, train), config.jitter)
        return cv, cv.offset
    if method == "ensemble_sgd":
        mi = enumerate_multi_indices(d, config.degree)
        if config.multi_kernel:
            params = build_multi_kernel_params(train.states, config.alpha1)
        else:
            params = (_kernel_params(config, train),)
        family = EnsembleFamily(mi, params, train)
        report = sgd_train(family, train, train_cfg)
        return family.build_cv(report.theta, report.offset), report.offset
    if method == "nn_sgd":
        widths = config.nn_widths or [d, 20, 20, 20, 20, 20, 20, 1]
        net = MlpControlFunction.initialize(list(widths), seed=train_cfg.seed)
        report = sgd_train(net, train, train_cfg)
        net.set_params(report.theta)
        return net, report.offset
    raise ValueError(f"unknown method {method!r}")


def run_repetition(config: BenchmarkConfig, rep: int) -> RepetitionResult:
    try:
        samples, truth = _materialize(config, rep)
        split = split_samples(
            samples.n, config.m, config.split, seed=_derived_seed(config.base_seed + rep, 4)
        )
        train = samples.subset(split.train_indices)
        eval_set = samples.subset(split.eval_indices)
        if config.method == "mc":
            # the no-CV baseline trains nothing, so it uses every sample
            train_seconds = 0.0
            t0 = time.perf_counter()
            est = estimate_mc(samples.f_values)
            estimate_seconds = time.perf_counter() - t0
            model = None
        else:
            t0 = time.perf_counter()
            model, offset = _fit_model(config, train, rep)
            train_seconds = time.perf_counter() - t0
            t0 = time.perf_counter()
            g_eval = model(eval_set.states, eval_set.scores)
            est = estimate_with_cv(eval_set.f_values, g_eval, offset)
            estimate_seconds = time.perf_counter() - t0
        abs_error = None if truth is None else abs(est.value - float(truth))
        return RepetitionResult(
            rep=rep,
            estimate=est.value,
            abs_error=abs_error,
            train_seconds=train_seconds,
            estimate_seconds=estimate_seconds,
            n_eval=est.n_eval,
            same_set=split.same_set,
            offset=est.offset,
            residual_variance=est.residual_sample_variance,
            model=model,
        )
    except Exception as exc:  # noqa: BLE001 - failures are recorded, run continues
        return RepetitionResult(
            rep=rep,
            estimate=None,
            abs_error=None,
            train_seconds=0.0,
            estimate_seconds=0.0,
            n_eval=0,
            same_set=False,
            error=f"{type(exc).__name__}: {exc}",
        )


def _rep_worker(config_dict: dict, rep: int) -> RepetitionResult:
    result = run_repetition(BenchmarkConfig.from_dict(config_dict), rep)
    result.model = None  # keep cross-process payloads small
    return result


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Run every repetition (seed = base_seed + rep), aggregate MAE and timings.

    Per-repetition failures are recorded and the run continues; the report
    carries the failure count. Deterministic given the config, whether the
    repetitions run serially or on a worker pool.
    """
    reps = range(config.repetitions)
    if config.workers > 1 and config.repetitions > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_rep_worker, [config.to_dict()] * config.repetitions, reps))
    else:
        results = [run_repetition(config, rep) for rep in reps]
    good = [r for r in results if r.error is None]
    errors = [r.abs_error for r in good if r.abs_error is not None]
    mae = float(np.mean(errors)) if errors else None
    mean_est = float(np.mean([r.estimate for r in good])) if good else None
    mean_train = float(np.mean([r.train_seconds for r in good])) if good else 0.0
    return BenchmarkReport(
        config=config,
        results=results,
        mae=mae,
        mean_estimate=mean_est,
        mean_train_seconds=mean_train,
        n_failures=len(results) - len(good),
        problem_label=_problem_label(config.problem),
        d=_problem_dim(config.problem),
    )


def report_to_dict(report: BenchmarkReport) -> dict:
    results = []
    for r in report.results:
        item = dataclasses.asdict(r)
        item.pop("model", None)
        results.append(item)
    return {
        "config": report.config.to_dict(),
        "results": results,
        "mae": report.mae,
        "mean_estimate": report.mean_estimate,
        "mean_train_seconds": report.mean_train_seconds,
        "n_failures": report.n_failures,
        "problem_label": report.problem_label,
        "d": report.d,
        "version": report.version,
    }


def report_from_dict(obj: dict) -> BenchmarkReport:
    results = [RepetitionResult(**item) for item in obj["results"]]
    return BenchmarkReport(
        config=BenchmarkConfig.from_dict(obj["config"]),
        results=results,
        mae=obj["mae"],
        mean_estimate=obj["mean_estimate"],
        mean_train_seconds=obj["mean_train_seconds"],
        n_failures=obj["n_failures"],
        problem_label=obj["problem_label"],
        d=obj["d"],
        version=obj["version"],
    )


def _csv_cell(value) -> str:
    return "" if value is None else repr(float(value))


def emit_report(report: BenchmarkReport, path, fmt: str = "csv") -> None:
    """Write the report as plot-ready CSV (one row per repetition) or as JSON."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_to_dict(report), fh, indent=2)
        return
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    cfg = report.config
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_COLUMNS + "\n")
        for r in report.results:
            row = [
                cfg.method,
                report.problem_label,
                str(report.d),
                str(cfg.n),
                str(cfg.m),
                str(r.rep),
                _csv_cell(r.estimate),
                _csv_cell(r.abs_error),
                _csv_cell(r.train_seconds),
            ]
            fh.write(",".join(row) + "\n")
