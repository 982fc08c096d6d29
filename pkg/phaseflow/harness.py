"""Monte-Carlo experiment orchestration and trace analytics."""

from __future__ import annotations

import asyncio
import csv
import dataclasses
import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from .const import (
    CONVERGED_FLOOR,
    CSV_HEADER,
    DEFAULT_INIT_SCALE,
    DEFAULT_WORKERS,
    DESCENT_SLACK,
    FLOAT_FORMAT,
    INSTANCE_DENSE,
    INSTANCE_STFT,
    INSTANCE_STREAM_TAG,
    MIN_RATE_POINTS,
    MIN_SECOND_MOMENT_RESAMPLES,
    REFERENCE_DIMENSION,
    REFERENCE_SEED,
    REFERENCE_SHIFTS,
    REFERENCE_WINDOW_WIDTH,
    STDERR_BAND,
    SUMMARY_FILENAME,
    WEIGHTED_SUM_GROWTH_LIMIT,
    WINDOW_GAUSSIAN,
)
from .errors import InvalidParameterError, NumericalAbortError
from .linalg import ComplexVector
from .loss import LossSpec, block_gradient, wirtinger_gradient
from .measurement import (
    MeasurementEnsemble,
    NoiseSpec,
    build_dense_ensemble,
    build_stft_ensemble,
    evenly_spaced_shifts,
    random_dense_operator,
    random_signal,
    simulate,
    window,
)
from .rng import SeededRng
from .solvers import PolynomialSchedule, RunTrace, SolverConfig, StepSchedule, run_solver
from .stochastic import AbcConstants, SamplingDistribution, sample_index_array

_LOGGER = logging.getLogger(__name__)

_BATCH = 10_000


@dataclass(frozen=True, slots=True)
class InstanceSpec:
    """Recipe for a synthetic instance.

    STFT instances use ``num_blocks`` evenly spaced shifts unless ``shifts`` is given;
    dense instances draw an ``rows x d`` complex Gaussian matrix split into blocks of
    ``rows_per_block`` rows.
    """

    kind: str = INSTANCE_STFT
    d: int = 16
    num_blocks: int = 4
    shifts: tuple[int, ...] | None = None
    window: str = WINDOW_GAUSSIAN
    window_width: float = 3.0
    rows: int = 32
    rows_per_block: int = 1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (INSTANCE_STFT, INSTANCE_DENSE):
            raise InvalidParameterError(f"unknown instance kind {self.kind!r}")
        if self.d < 1:
            raise InvalidParameterError(f"dimension must be positive, got {self.d}")
        if self.kind == INSTANCE_DENSE and self.rows % self.rows_per_block:
            raise InvalidParameterError(
                f"{self.rows} rows cannot be split into blocks of {self.rows_per_block}"
            )


def build_instance(spec: InstanceSpec) -> tuple[MeasurementEnsemble, ComplexVector]:
    """Draw the signal and operator of ``spec`` and simulate its measurements."""

    rng = SeededRng(spec.seed, INSTANCE_STREAM_TAG)
    x = random_signal(spec.d, rng)
    if spec.kind == INSTANCE_STFT:
        probe = window(spec.window, spec.d, width=spec.window_width, rng=rng)
        shifts = (
            list(spec.shifts)
            if spec.shifts is not None
            else evenly_spaced_shifts(spec.d, spec.num_blocks)
        )
        ensemble = build_stft_ensemble(probe, shifts)
    else:
        operator = random_dense_operator(spec.rows, spec.d, rng)
        sizes = [spec.rows_per_block] * (spec.rows // spec.rows_per_block)
        ensemble = build_dense_ensemble(operator, sizes)
    return simulate(ensemble, x, spec.noise), x


def reference_instance_spec() -> InstanceSpec:
    return InstanceSpec(
        kind=INSTANCE_STFT,
        d=REFERENCE_DIMENSION,
        num_blocks=REFERENCE_SHIFTS,
        window=WINDOW_GAUSSIAN,
        window_width=REFERENCE_WINDOW_WIDTH,
        seed=REFERENCE_SEED,
    )


def build_reference_instance() -> tuple[MeasurementEnsemble, ComplexVector]:
    """Noiseless STFT instance with ``d = 32``, ``R = 8`` and a gaussian window."""

    return build_instance(reference_instance_spec())


@dataclass(frozen=True, slots=True)
class PlannedRun:
    config_id: str
    algorithm: str
    config: SolverConfig


@dataclass(frozen=True, slots=True)
class ExperimentPlan:
    """Solver grid run ``trials`` times on one shared ensemble.

    Trial ``n`` of every configuration starts from the same ``z^0`` (drawn from the
    init stream of trial ``n`` unless ``z0`` is given) and samples from its own stream.
    """

    ensemble: MeasurementEnsemble
    runs: tuple[PlannedRun, ...]
    trials: int = 1
    base_seed: int = 0
    init_scale: float = DEFAULT_INIT_SCALE
    z0: ComplexVector | None = field(default=None, repr=False)
    instance: InstanceSpec | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise InvalidParameterError(f"need at least one trial, got {self.trials}")
        if not self.runs:
            raise InvalidParameterError("plan contains no solver configurations")
        ids = [run.config_id for run in self.runs]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError(f"config ids must be unique: {ids}")

    def start_point(self, trial: int) -> ComplexVector:
        if self.z0 is not None:
            return self.z0
        rng = SeededRng.for_init(self.base_seed, trial)
        return random_signal(self.ensemble.d, rng, scale=self.init_scale)


@dataclass(frozen=True, slots=True, eq=False)
class AggregateCurve:
    """Trial means per recorded ``t`` over the successful trials of one configuration."""

    t: npt.NDArray[np.int64] = field(repr=False)
    mean_loss: npt.NDArray[np.float64] = field(repr=False)
    mean_grad_norm: npt.NDArray[np.float64] = field(repr=False)
    stderr_grad_norm: npt.NDArray[np.float64] = field(repr=False)
    min_mean_grad_norm: npt.NDArray[np.float64] = field(repr=False)
    mu_t: npt.NDArray[np.float64] = field(repr=False)
    cum_mu: npt.NDArray[np.float64] = field(repr=False)
    cum_weighted_sq: npt.NDArray[np.float64] = field(repr=False)
    trials_used: int
    failed: int

    def rows(self) -> list[tuple[float, ...]]:
        return [
            (
                float(self.t[i]),
                float(self.mean_loss[i]),
                float(self.mean_grad_norm[i]),
                float(self.min_mean_grad_norm[i]),
                float(self.mu_t[i]),
                float(self.cum_mu[i]),
                float(self.cum_weighted_sq[i]),
            )
            for i in range(self.t.shape[0])
        ]


def aggregate(traces: Sequence[RunTrace], failed: int = 0) -> AggregateCurve:
    """Average ``traces`` over their common prefix of recorded iterations."""

    if not traces:
        empty = np.zeros(0, dtype=np.float64)
        return AggregateCurve(
            t=np.zeros(0, dtype=np.int64),
            mean_loss=empty,
            mean_grad_norm=empty,
            stderr_grad_norm=empty,
            min_mean_grad_norm=empty,
            mu_t=empty,
            cum_mu=empty,
            cum_weighted_sq=empty,
            trials_used=0,
            failed=failed,
        )
    length = min(len(trace.records) for trace in traces)

    def stack(attribute: str) -> npt.NDArray[np.float64]:
        return np.stack([getattr(trace, attribute)[:length] for trace in traces])

    grad = stack("grad_norms")
    mean_grad = grad.mean(axis=0)
    count = len(traces)
    stderr = grad.std(axis=0, ddof=1) / math.sqrt(count) if count > 1 else np.zeros(length)
    return AggregateCurve(
        t=traces[0].t[:length],
        mean_loss=stack("losses").mean(axis=0),
        mean_grad_norm=mean_grad,
        stderr_grad_norm=stderr,
        min_mean_grad_norm=np.minimum.accumulate(mean_grad) if length else mean_grad,
        mu_t=stack("step_sizes").mean(axis=0),
        cum_mu=stack("cum_mu").mean(axis=0),
        cum_weighted_sq=stack("cum_weighted_sq").mean(axis=0),
        trials_used=count,
        failed=failed,
    )


@dataclass(frozen=True, slots=True)
class TrialResult:
    config_id: str
    trial: int
    trace: RunTrace | None
    error: str | None = None
    partial: RunTrace | None = None


@dataclass(frozen=True, slots=True)
class TraceSet:
    """Completed traces keyed by ``(config_id, trial)`` plus per-config aggregates."""

    traces: Mapping[tuple[str, int], RunTrace]
    failures: Mapping[str, tuple[int, ...]]
    aggregates: Mapping[str, AggregateCurve]
    errors: Mapping[tuple[str, int], str] = field(default_factory=dict)
    partials: Mapping[tuple[str, int], RunTrace] = field(default_factory=dict)

    def config_traces(self, config_id: str) -> list[RunTrace]:
        return [
            trace
            for (cid, _), trace in sorted(self.traces.items(), key=lambda item: item[0][1])
            if cid == config_id
        ]


def _run_trial(plan: ExperimentPlan, config_index: int, trial: int) -> TrialResult:
    planned = plan.runs[config_index]
    rng = SeededRng.for_trial(plan.base_seed, config_index, trial)
    config = dataclasses.replace(planned.config, seed=rng.seed, stream=rng.stream)
    _LOGGER.debug("Running %s trial %d", planned.config_id, trial)
    try:
        trace = run_solver(planned.algorithm, plan.ensemble, plan.start_point(trial), config)
    except NumericalAbortError as err:
        _LOGGER.warning("Trial %d of %s aborted: %s", trial, planned.config_id, err)
        return TrialResult(planned.config_id, trial, None, str(err), partial=err.trace)
    return TrialResult(planned.config_id, trial, trace)


def _collect(plan: ExperimentPlan, results: Sequence[TrialResult]) -> TraceSet:
    traces: dict[tuple[str, int], RunTrace] = {}
    errors: dict[tuple[str, int], str] = {}
    partials: dict[tuple[str, int], RunTrace] = {}
    for result in results:
        key = (result.config_id, result.trial)
        if result.trace is not None:
            traces[key] = result.trace
            continue
        errors[key] = result.error or "aborted"
        if result.partial is not None:
            partials[key] = result.partial
    failures: dict[str, tuple[int, ...]] = {}
    aggregates: dict[str, AggregateCurve] = {}
    for run in plan.runs:
        failed = tuple(trial for cid, trial in sorted(errors) if cid == run.config_id)
        failures[run.config_id] = failed
        ok = [
            traces[(run.config_id, n)] for n in range(plan.trials) if (run.config_id, n) in traces
        ]
        aggregates[run.config_id] = aggregate(ok, failed=len(failed))
    return TraceSet(
        traces=traces,
        failures=failures,
        aggregates=aggregates,
        errors=errors,
        partials=partials,
    )


async def async_run_trials(plan: ExperimentPlan, workers: int = DEFAULT_WORKERS) -> TraceSet:
    """Run every (configuration, trial) pair on a pool of ``workers`` threads."""

    if workers < 1:
        raise InvalidParameterError(f"need at least one worker, got {workers}")
    # Warm the cached norms before worker threads read them.
    _ = plan.ensemble.norm
    _ = plan.ensemble.block_norms_sq
    semaphore = asyncio.Semaphore(workers)

    async def _guarded(config_index: int, trial: int) -> TrialResult:
        async with semaphore:
            return await asyncio.to_thread(_run_trial, plan, config_index, trial)

    tasks = [
        _guarded(config_index, trial)
        for config_index in range(len(plan.runs))
        for trial in range(plan.trials)
    ]
    results = await asyncio.gather(*tasks)
    trace_set = _collect(plan, results)
    _LOGGER.info(
        "Finished %d trials over %d configurations (%d aborted)",
        len(results),
        len(plan.runs),
        len(trace_set.errors),
    )
    return trace_set


def run_trials(plan: ExperimentPlan, workers: int = DEFAULT_WORKERS) -> TraceSet:
    """Synchronous wrapper around :func:`async_run_trials`."""

    return asyncio.run(async_run_trials(plan, workers))


# Checks


@dataclass(frozen=True, slots=True)
class DescentViolation:
    t: int
    loss: float
    next_loss: float
    bound: float


@dataclass(frozen=True, slots=True)
class DescentReport:
    """Outcome of the descent check.

    ``stride`` is the largest gap between recorded iterations. With ``stride > 1`` each
    pair compares ``z^t`` with a later iterate, which monotone descent still bounds by
    the single-step decrease.
    """

    checked: int
    stride: int
    violations: tuple[DescentViolation, ...]
    in_hypothesis: bool
    total_decrease: float

    @property
    def passed(self) -> bool:
        return not self.violations


def check_descent(trace: RunTrace, mu: float, norm_a: float) -> DescentReport:
    """Compare each step against ``L(z^{t+1}) <= L(z^t) - mu ||grad L(z^t)||^2``.

    Violations are reported, not raised: outside ``mu <= 1/||A||^2`` they are expected.
    """

    records = trace.records
    next_losses = [record.loss for record in records[1:]] + [trace.final_loss]
    violations: list[DescentViolation] = []
    for record, next_loss in zip(records, next_losses, strict=True):
        bound = record.loss - mu * record.grad_norm**2
        if next_loss > bound + DESCENT_SLACK * (1.0 + record.loss):
            violations.append(DescentViolation(record.t, record.loss, next_loss, bound))
    if violations:
        _LOGGER.info("Descent check found %d violations", len(violations))
    initial = records[0].loss if records else trace.final_loss
    gaps = [later.t - earlier.t for earlier, later in zip(records, records[1:], strict=False)]
    stride = max(gaps, default=1)
    if stride > 1:
        _LOGGER.debug("Descent check compares iterates %d steps apart", stride)
    return DescentReport(
        checked=len(records),
        stride=stride,
        violations=tuple(violations),
        in_hypothesis=mu * norm_a**2 <= 1.0 + 1e-12,
        total_decrease=initial - trace.final_loss,
    )


@dataclass(frozen=True, slots=True, eq=False)
class UnbiasednessReport:
    resamples: int
    max_z_score: float
    passed: bool
    mean: ComplexVector = field(repr=False)
    gradient: ComplexVector = field(repr=False)


def _scaled_block_gradients(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    spec: LossSpec,
    dist: SamplingDistribution,
) -> npt.NDArray[np.complex128]:
    return np.stack(
        [block_gradient(ensemble, r, z, spec) / dist.p[r] for r in range(ensemble.num_blocks)]
    )


def check_unbiasedness(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    spec: LossSpec,
    k: int,
    dist: SamplingDistribution,
    resamples: int,
    rng: SeededRng,
) -> UnbiasednessReport:
    """Monte-Carlo mean of the stochastic gradient against the full gradient.

    Real and imaginary parts are tested separately within 5 standard errors.
    """

    scaled = _scaled_block_gradients(ensemble, z, spec, dist)
    total = np.zeros(ensemble.d, dtype=np.complex128)
    total_sq_re = np.zeros(ensemble.d)
    total_sq_im = np.zeros(ensemble.d)
    done = 0
    while done < resamples:
        batch = min(_BATCH, resamples - done)
        samples = scaled[sample_index_array(dist, batch, k, rng)].mean(axis=1)
        total += samples.sum(axis=0)
        total_sq_re += (samples.real**2).sum(axis=0)
        total_sq_im += (samples.imag**2).sum(axis=0)
        done += batch
    mean = total / resamples
    gradient = wirtinger_gradient(ensemble, z, spec).gradient

    def z_scores(sq: npt.NDArray[np.float64], mu: npt.NDArray[np.float64], ref: Any) -> Any:
        variance = np.maximum(sq / resamples - mu**2, 0.0) * resamples / max(resamples - 1, 1)
        stderr = np.sqrt(variance / resamples)
        deviation = np.abs(mu - ref)
        floor = 1e-12 * (1.0 + np.abs(ref))
        return np.where(deviation <= floor, 0.0, deviation / np.maximum(stderr, 1e-300))

    scores = np.concatenate(
        [
            z_scores(total_sq_re, mean.real, gradient.real),
            z_scores(total_sq_im, mean.imag, gradient.imag),
        ]
    )
    max_score = float(np.max(scores))
    return UnbiasednessReport(
        resamples=resamples,
        max_z_score=max_score,
        passed=max_score <= STDERR_BAND,
        mean=mean,
        gradient=gradient,
    )


@dataclass(frozen=True, slots=True)
class SecondMomentPoint:
    empirical: float
    bound: float
    stderr: float
    passed: bool


@dataclass(frozen=True, slots=True)
class SecondMomentReport:
    points: tuple[SecondMomentPoint, ...]

    @property
    def passed(self) -> bool:
        return all(point.passed for point in self.points)


def check_second_moment(
    ensemble: MeasurementEnsemble,
    points: Sequence[ComplexVector],
    spec: LossSpec,
    k: int,
    dist: SamplingDistribution,
    abc: AbcConstants,
    resamples: int,
    rng: SeededRng,
) -> SecondMomentReport:
    """Empirical ``E||g(z)||^2`` against ``alpha (L - L_inf) + beta ||grad||^2 + delta``."""

    if resamples < MIN_SECOND_MOMENT_RESAMPLES:
        raise InvalidParameterError(
            f"need at least {MIN_SECOND_MOMENT_RESAMPLES} resamples, got {resamples}"
        )
    results: list[SecondMomentPoint] = []
    for z in points:
        scaled = _scaled_block_gradients(ensemble, z, spec, dist)
        total = 0.0
        total_sq = 0.0
        done = 0
        while done < resamples:
            batch = min(_BATCH, resamples - done)
            samples = scaled[sample_index_array(dist, batch, k, rng)].mean(axis=1)
            norms_sq = np.sum(np.abs(samples) ** 2, axis=1)
            total += float(norms_sq.sum())
            total_sq += float((norms_sq**2).sum())
            done += batch
        empirical = total / resamples
        variance = max(total_sq / resamples - empirical**2, 0.0) * resamples / (resamples - 1)
        stderr = math.sqrt(variance / resamples)
        report = wirtinger_gradient(ensemble, z, spec)
        bound = abc.second_moment_bound(report.loss - spec.inf_bound, report.norm**2)
        slack = 1e-10 * (1.0 + abs(bound))
        results.append(
            SecondMomentPoint(
                empirical=empirical,
                bound=bound,
                stderr=stderr,
                passed=empirical <= bound + STDERR_BAND * stderr + slack,
            )
        )
    return SecondMomentReport(points=tuple(results))


@dataclass(frozen=True, slots=True)
class RateReport:
    """Log-log slope of a running-min curve over its final decade."""

    slope: float | None
    threshold: float | None
    points: int
    converged: bool

    def passed(self, margin: float) -> bool:
        if self.converged:
            return True
        if self.slope is None or self.threshold is None:
            return False
        return self.slope <= self.threshold + margin


def fit_rate(
    min_grad_curve: npt.ArrayLike,
    schedule: StepSchedule | None = None,
    t: npt.ArrayLike | None = None,
) -> RateReport:
    """Fit ``log(curve)`` against ``log T`` for horizons ``T`` in the final decade.

    ``t`` holds the iteration of each point, so that ``T = t + 1``; without it the
    points are taken to be consecutive iterations from 0.

    The threshold ``theta/2 - 1/4`` is reported for polynomial schedules. A curve that
    fell below ``1e-10`` of its initial value is marked as converged instead.
    """

    curve = np.asarray(min_grad_curve, dtype=np.float64)
    if curve.ndim != 1 or curve.shape[0] < MIN_RATE_POINTS:
        raise InvalidParameterError(
            f"rate fits need at least {MIN_RATE_POINTS} points, got {curve.shape}"
        )
    threshold = (
        schedule.theta / 2.0 - 0.25 if isinstance(schedule, PolynomialSchedule) else None
    )
    length = curve.shape[0]
    if curve[0] <= 0 or curve[-1] <= CONVERGED_FLOOR * curve[0]:
        return RateReport(slope=None, threshold=threshold, points=length, converged=True)
    if t is None:
        horizons = np.arange(1, length + 1, dtype=np.float64)
    else:
        horizons = np.asarray(t, dtype=np.float64) + 1.0
        if horizons.shape != curve.shape:
            raise InvalidParameterError(
                f"got {horizons.shape[0]} iterations for {length} curve points"
            )
    window_mask = horizons >= horizons[-1] / 10.0
    slope, _ = np.polyfit(np.log(horizons[window_mask]), np.log(curve[window_mask]), 1)
    return RateReport(slope=float(slope), threshold=threshold, points=length, converged=False)


@dataclass(frozen=True, slots=True)
class WeightedSumReport:
    final: float
    half: float
    passed: bool


def check_weighted_sum(curve: AggregateCurve | npt.ArrayLike) -> WeightedSumReport:
    """Check that ``sum mu_t ||grad||^2`` at ``T`` stays below twice its value at ``T/2``."""

    values = np.asarray(
        curve.cum_weighted_sq if isinstance(curve, AggregateCurve) else curve, dtype=np.float64
    )
    if values.size < 2:
        raise InvalidParameterError("need at least two points to compare partial sums")
    final = float(values[-1])
    half = float(values[values.size // 2 - 1])
    passed = final == 0.0 or final < WEIGHTED_SUM_GROWTH_LIMIT * half
    return WeightedSumReport(final=final, half=half, passed=passed)


# Export


def format_float(value: float) -> str:
    return format(value, FLOAT_FORMAT)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, list | tuple):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(item) for item in value.tolist()]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(document: Mapping[str, Any], path: Path) -> None:
    """Write ``document`` with sorted keys; non-finite floats become ``null``."""

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(_jsonable(dict(document)), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_curve_csv(curve: AggregateCurve, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER)
        for row in curve.rows():
            writer.writerow([str(int(row[0]))] + [format_float(value) for value in row[1:]])


def export_trace_set(
    trace_set: TraceSet,
    out_dir: Path,
    summary: Mapping[str, Any],
) -> list[Path]:
    """Write one CSV per configuration and ``summary.json``; return the written paths."""

    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for config_id, curve in trace_set.aggregates.items():
        path = out_dir / f"{config_id}.csv"
        write_curve_csv(curve, path)
        written.append(path)
    for (config_id, trial), partial in sorted(trace_set.partials.items()):
        path = out_dir / f"{config_id}.trial{trial}.partial.csv"
        write_curve_csv(aggregate([partial]), path)
        written.append(path)
    document = dict(summary)
    document.setdefault(
        "trials",
        {
            config_id: {"used": curve.trials_used, "failed": list(trace_set.failures[config_id])}
            for config_id, curve in trace_set.aggregates.items()
        },
    )
    summary_path = out_dir / SUMMARY_FILENAME
    write_json(document, summary_path)
    written.append(summary_path)
    _LOGGER.info("Wrote %d files to %s", len(written), out_dir)
    return written
