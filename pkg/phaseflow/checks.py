"""Self-check suite: structural identities and guarantees verified on small instances."""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .const import (
    ALGO_AF,
    ALGO_KACZMARZ,
    ALGO_PIE,
    ALGO_SAF,
    CHECK_STREAM_TAG,
    DEFAULT_CHECK_RESAMPLES,
    FD_NONDEGENERATE_MIN,
    GRADIENT_TAMPER_FACTOR,
    INSTANCE_DENSE,
    INSTANCE_STFT,
    KACZMARZ_NULL_TOL,
    WINDOW_GAUSSIAN,
)
from .errors import InvalidParameterError
from .harness import (
    InstanceSpec,
    build_instance,
    check_descent,
    check_second_moment,
    check_unbiasedness,
)
from .linalg import ComplexVector, inner, spectral_norm
from .loss import (
    LossSpec,
    fd_gradient_oracle,
    fd_second_directional,
    hessian_bounds,
    hessian_quadratic_form,
    lipschitz_constant,
    loss_value,
    wirtinger_gradient,
)
from .measurement import MeasurementEnsemble, StftBlock
from .rng import SeededRng
from .solvers import (
    ConstantSchedule,
    PolynomialSchedule,
    SolverConfig,
    af_run,
    kaczmarz_step,
    pie_equivalent_saf_step,
    pie_step,
    run_solver,
    schedule_value,
)
from .stochastic import (
    SamplingDistribution,
    abc_constants,
    sample_indices,
    stochastic_gradient,
    variance_reducing_distribution,
)

_LOGGER = logging.getLogger(__name__)

FAULT_GRADIENT = "gradient"
FAULTS = (FAULT_GRADIENT,)

FD_TOLERANCE = 1e-6
FD_DIMENSIONS = (4, 8, 16)
ADJOINT_TOLERANCE = 1e-12
EQUIVALENCE_TOLERANCE = 1e-12
EQUIVARIANCE_TOLERANCE = 1e-10
BLOCK_NORM_TOLERANCE = 1e-8
HESSIAN_FD_TOLERANCE = 1e-4


@dataclass(frozen=True, slots=True)
class CheckOptions:
    """Knobs of :func:`run_check_suite`.

    ``eps`` overrides the smoothing used by the gradient, unbiasedness and descent
    checks. ``fault`` injects a known defect so the suite can prove it fails.
    """

    eps: float | None = None
    fd_only: bool = False
    seed: int = 0
    resamples: int = DEFAULT_CHECK_RESAMPLES
    samples: int = 10_000
    descent_iters: int = 500
    kaczmarz_steps: int = 10_000
    equivalence_iters: int = 200
    fault: str | None = None

    def __post_init__(self) -> None:
        if self.eps is not None and (not math.isfinite(self.eps) or self.eps < 0):
            raise InvalidParameterError(f"eps must be finite and >= 0, got {self.eps}")
        if self.fault is not None and self.fault not in FAULTS:
            raise InvalidParameterError(f"unknown fault {self.fault!r}; choose from {FAULTS}")
        if min(self.resamples, self.samples, self.descent_iters, self.kaczmarz_steps) < 1:
            raise InvalidParameterError("sample counts must be positive")


@dataclass(frozen=True, slots=True)
class CheckResult:
    name: str
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class SuiteReport:
    results: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    @property
    def failed(self) -> list[str]:
        return [result.name for result in self.results if not result.passed]

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "failed": self.failed,
            "checks": {
                result.name: {"passed": result.passed, **result.details}
                for result in self.results
            },
        }


class _Context:
    """Shared instances and random stream for one suite run."""

    def __init__(self, options: CheckOptions) -> None:
        self.options = options
        self.rng = SeededRng(options.seed, CHECK_STREAM_TAG)
        self.dense_rows, _ = build_instance(
            InstanceSpec(kind=INSTANCE_DENSE, d=8, rows=24, rows_per_block=1, seed=options.seed)
        )
        self.dense_blocks, _ = build_instance(
            InstanceSpec(kind=INSTANCE_DENSE, d=8, rows=24, rows_per_block=6, seed=options.seed)
        )
        self.stft, _ = build_instance(
            InstanceSpec(
                kind=INSTANCE_STFT,
                d=16,
                num_blocks=4,
                window=WINDOW_GAUSSIAN,
                window_width=3.0,
                seed=options.seed,
            )
        )
        self.stft_small, _ = build_instance(
            InstanceSpec(kind=INSTANCE_STFT, d=8, num_blocks=4, window_width=2.0, seed=options.seed)
        )

    def fd_instances(self) -> list[MeasurementEnsemble]:
        """Dense and STFT instances of every dimension the gradient check covers."""

        instances = []
        for d in FD_DIMENSIONS:
            for spec in (
                InstanceSpec(
                    kind=INSTANCE_DENSE, d=d, rows=3 * d, rows_per_block=d, seed=self.options.seed
                ),
                InstanceSpec(
                    kind=INSTANCE_STFT,
                    d=d,
                    num_blocks=4,
                    window_width=d / 4.0,
                    seed=self.options.seed,
                ),
            ):
                instances.append(build_instance(spec)[0])
        return instances

    @property
    def instances(self) -> dict[str, MeasurementEnsemble]:
        return {"dense_rows": self.dense_rows, "dense_blocks": self.dense_blocks, "stft": self.stft}

    def point(self, d: int, scale: float = 1.0) -> ComplexVector:
        return scale * self.rng.complex_normal(d)

    def gradient(self, ensemble: MeasurementEnsemble, z: ComplexVector, spec: LossSpec) -> Any:
        gradient = wirtinger_gradient(ensemble, z, spec).gradient
        if self.options.fault == FAULT_GRADIENT:
            return GRADIENT_TAMPER_FACTOR * gradient
        return gradient


def _relative(a: Any, b: Any) -> float:
    scale = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / scale


def _nondegenerate_point(ctx: _Context, ensemble: MeasurementEnsemble) -> ComplexVector:
    for _ in range(1000):
        z = ctx.point(ensemble.d)
        if float(np.min(np.abs(ensemble.apply(z)))) >= FD_NONDEGENERATE_MIN:
            return z
    raise InvalidParameterError("could not draw a point away from the non-smooth set")


def _check_fd_gradient(ctx: _Context) -> CheckResult:
    eps_values = [ctx.options.eps] if ctx.options.eps is not None else [1e-2, 1.0]
    worst = 0.0
    cases = 0
    for eps in eps_values:
        spec = LossSpec(eps=eps)
        for ensemble in ctx.fd_instances():
            for _ in range(5):
                z = _nondegenerate_point(ctx, ensemble) if eps == 0 else ctx.point(ensemble.d)
                analytic = ctx.gradient(ensemble, z, spec)
                worst = max(worst, _relative(analytic, fd_gradient_oracle(ensemble, z, spec)))
                cases += 1
    return CheckResult(
        "fd_gradient",
        worst <= FD_TOLERANCE,
        {
            "max_relative_error": worst,
            "cases": cases,
            "eps": eps_values,
            "dimensions": list(FD_DIMENSIONS),
        },
    )


def _check_adjoint(ctx: _Context) -> CheckResult:
    worst = 0.0
    for ensemble in ctx.instances.values():
        for block in ensemble.blocks:
            z = ctx.point(block.cols)
            u = ctx.point(block.rows)
            lhs = inner(block.apply(z), u)
            rhs = inner(z, block.adjoint(u))
            scale = float(np.linalg.norm(block.apply(z)) * np.linalg.norm(u))
            worst = max(worst, abs(lhs - rhs) / max(scale, 1e-300))
    return CheckResult("adjoint", worst <= ADJOINT_TOLERANCE, {"max_relative_error": worst})


def _check_unbiasedness(ctx: _Context) -> CheckResult:
    eps = ctx.options.eps if ctx.options.eps is not None else 0.1
    spec = LossSpec(eps=eps)
    ensemble = ctx.stft_small
    dist = SamplingDistribution.uniform(ensemble.num_blocks)
    z = ctx.point(ensemble.d)
    scores: dict[str, float] = {}
    passed = True
    for k in (1, 2):
        report = check_unbiasedness(ensemble, z, spec, k, dist, ctx.options.resamples, ctx.rng)
        scores[f"k{k}"] = report.max_z_score
        passed = passed and report.passed
    return CheckResult("unbiasedness", passed, {"max_z_score": scores, "eps": eps})


def _check_second_moment(ctx: _Context) -> CheckResult:
    spec = LossSpec(eps=0.0)
    ensemble = ctx.stft_small
    dist = SamplingDistribution.uniform(ensemble.num_blocks)
    points = [ctx.point(ensemble.d) for _ in range(10)]
    resamples = max(ctx.options.resamples, 10_000)
    passed = True
    margins: list[float] = []
    for k in (1, 2):
        abc = abc_constants(ensemble, k, dist)
        report = check_second_moment(ensemble, points, spec, k, dist, abc, resamples, ctx.rng)
        passed = passed and report.passed
        margins.extend(point.bound - point.empirical for point in report.points)
    return CheckResult("second_moment", passed, {"min_margin": min(margins)})


def _check_descent(ctx: _Context) -> CheckResult:
    eps_values = [ctx.options.eps] if ctx.options.eps is not None else [0.0, 0.1]
    violations = 0
    for eps in eps_values:
        for ensemble in (ctx.dense_blocks, ctx.stft):
            mu = 1.0 / ensemble.norm**2
            config = SolverConfig(
                eps=eps, schedule=ConstantSchedule(mu), max_iters=ctx.options.descent_iters
            )
            trace = af_run(ensemble, ctx.point(ensemble.d), config)
            violations += len(check_descent(trace, mu, ensemble.norm).violations)
    return CheckResult("descent", violations == 0, {"violations": violations, "eps": eps_values})


def _check_lipschitz(ctx: _Context) -> CheckResult:
    ensemble = ctx.dense_blocks
    violations = 0
    worst_ratio = 0.0
    for eps in (1e-2, 1.0):
        spec = LossSpec(eps=eps)
        constant = lipschitz_constant(spec, ensemble.y, ensemble.norm)
        for _ in range(ctx.options.samples):
            z = ctx.point(ensemble.d, scale=2.0)
            step = 10.0 ** (2.0 * ctx.rng.random(1)[0] - 1.0)
            v = z + ctx.point(ensemble.d, scale=step)
            distance = float(np.linalg.norm(z - v))
            if distance == 0.0:
                continue
            change = float(
                np.linalg.norm(
                    wirtinger_gradient(ensemble, z, spec).gradient
                    - wirtinger_gradient(ensemble, v, spec).gradient
                )
            )
            ratio = change / (constant * distance)
            worst_ratio = max(worst_ratio, ratio)
            if ratio > 1.0 + 1e-12:
                violations += 1
    return CheckResult(
        "lipschitz", violations == 0, {"violations": violations, "max_ratio": worst_ratio}
    )


def _check_hessian_bounds(ctx: _Context) -> CheckResult:
    ensemble = ctx.dense_blocks
    violations = 0
    fd_worst = 0.0
    for eps in (0.1, 1.0):
        spec = LossSpec(eps=eps)
        for sample in range(ctx.options.samples):
            z = ctx.point(ensemble.d, scale=2.0)
            u = ctx.point(ensemble.d)
            value = hessian_quadratic_form(ensemble, z, u, spec)
            lower, upper = hessian_bounds(ensemble, u, spec, ensemble.norm)
            slack = 1e-10 * (1.0 + abs(upper))
            if not lower - slack <= value <= upper + slack:
                violations += 1
            if sample < 100:
                unit = u / np.linalg.norm(u)
                exact = hessian_quadratic_form(ensemble, z, unit, spec)
                estimate = fd_second_directional(ensemble, z, unit, spec)
                fd_worst = max(fd_worst, abs(estimate - exact) / max(abs(exact), 1.0))
    return CheckResult(
        "hessian_bounds",
        violations == 0 and fd_worst <= HESSIAN_FD_TOLERANCE,
        {"violations": violations, "max_fd_error": fd_worst},
    )


def kaczmarz_nulling_residual(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    steps: int,
    rng: SeededRng,
) -> float:
    """Largest ``||(a_r^* z)| - sqrt(y_r)| / (1 + sqrt(y_r))`` over ``steps`` Kaczmarz steps."""

    dist = variance_reducing_distribution(ensemble)
    worst = 0.0
    for _ in range(steps):
        (r,) = sample_indices(dist, 1, rng)
        z = kaczmarz_step(ensemble, z, r)
        amplitude = math.sqrt(max(float(ensemble.y[r][0]), 0.0))
        residual = abs(abs(complex(ensemble.blocks[r].apply(z)[0])) - amplitude)
        worst = max(worst, residual / (1.0 + amplitude))
    return worst


def _check_kaczmarz_nulling(ctx: _Context) -> CheckResult:
    ensemble = ctx.dense_rows
    worst = kaczmarz_nulling_residual(
        ensemble, ctx.point(ensemble.d), ctx.options.kaczmarz_steps, ctx.rng
    )
    return CheckResult(
        "kaczmarz_nulling", worst <= KACZMARZ_NULL_TOL, {"max_scaled_residual": worst}
    )


def _check_pie_saf_equivalence(ctx: _Context) -> CheckResult:
    worst = 0.0
    spec = LossSpec(eps=0.0)
    schedule = PolynomialSchedule(mu=0.8, theta=0.25)
    for num_blocks in (1, 4, 16):
        ensemble, _ = build_instance(
            InstanceSpec(
                kind=INSTANCE_STFT,
                d=16,
                num_blocks=num_blocks,
                window_width=3.0,
                seed=ctx.options.seed,
            )
        )
        dist = SamplingDistribution.uniform(num_blocks)
        z_pie = ctx.point(ensemble.d)
        z_saf = z_pie.copy()
        pie_rng = SeededRng(ctx.options.seed, num_blocks)
        saf_rng = SeededRng(ctx.options.seed, num_blocks)
        for t in range(ctx.options.equivalence_iters):
            alpha_t = schedule_value(schedule, t)
            z_pie = pie_step(ensemble, z_pie, sample_indices(dist, 1, pie_rng)[0], alpha_t)
            indices = sample_indices(dist, 1, saf_rng)
            mu_t = pie_equivalent_saf_step(ensemble, alpha_t)
            z_saf = z_saf - mu_t * stochastic_gradient(ensemble, z_saf, spec, indices, dist)
            scale = max(float(np.max(np.abs(z_saf))), 1e-300)
            worst = max(worst, float(np.max(np.abs(z_pie - z_saf))) / scale)
    return CheckResult(
        "pie_saf_equivalence", worst <= EQUIVALENCE_TOLERANCE, {"max_relative_difference": worst}
    )


def _check_block_norm_identity(ctx: _Context) -> CheckResult:
    worst = 0.0
    for ensemble in (ctx.stft, ctx.stft_small):
        for block in ensemble.blocks:
            assert isinstance(block, StftBlock)
            closed_form = block.norm_sq
            estimate = spectral_norm(block) ** 2
            worst = max(worst, abs(estimate - closed_form) / closed_form)
    return CheckResult(
        "block_norm_identity", worst <= BLOCK_NORM_TOLERANCE, {"max_relative_error": worst}
    )


def _check_zero_gradient_at_origin(ctx: _Context) -> CheckResult:
    worst = 0.0
    for ensemble in ctx.instances.values():
        for eps in (0.0, 0.1, 1.0):
            origin = np.zeros(ensemble.d, dtype=np.complex128)
            worst = max(worst, float(np.linalg.norm(ctx.gradient(ensemble, origin, LossSpec(eps)))))
    return CheckResult("zero_gradient_at_origin", worst == 0.0, {"max_norm": worst})


def _check_phase_equivariance(ctx: _Context) -> CheckResult:
    phase = ctx.rng.unit_phase()
    af_step = 0.5 / ctx.stft.norm**2
    worst = 0.0
    cases: list[tuple[str, MeasurementEnsemble, SolverConfig]] = [
        (ALGO_AF, ctx.stft, SolverConfig(eps=0.1, schedule=ConstantSchedule(af_step))),
        (ALGO_SAF, ctx.stft, SolverConfig(schedule=PolynomialSchedule(0.01, 0.25), k=2)),
        (ALGO_KACZMARZ, ctx.dense_rows, SolverConfig()),
        (ALGO_PIE, ctx.stft, SolverConfig(schedule=PolynomialSchedule(0.9, 0.25))),
    ]
    for algorithm, ensemble, config in cases:
        config = dataclasses.replace(config, max_iters=25, seed=ctx.options.seed)
        z0 = ctx.point(ensemble.d)
        base = run_solver(algorithm, ensemble, z0, config)
        rotated = run_solver(algorithm, ensemble, phase * z0, config)
        worst = max(worst, _relative(rotated.z_final, phase * base.z_final))
        worst = max(
            worst,
            abs(rotated.final_loss - base.final_loss) / max(abs(base.final_loss), 1.0),
        )
    spec = LossSpec(eps=0.1)
    z = ctx.point(ctx.stft.d)
    worst = max(worst, abs(loss_value(ctx.stft, phase * z, spec) - loss_value(ctx.stft, z, spec)))
    return CheckResult(
        "phase_equivariance", worst <= EQUIVARIANCE_TOLERANCE, {"max_relative_difference": worst}
    )


_CHECKS: tuple[tuple[str, Callable[[_Context], CheckResult]], ...] = (
    ("fd_gradient", _check_fd_gradient),
    ("adjoint", _check_adjoint),
    ("unbiasedness", _check_unbiasedness),
    ("second_moment", _check_second_moment),
    ("descent", _check_descent),
    ("lipschitz", _check_lipschitz),
    ("hessian_bounds", _check_hessian_bounds),
    ("kaczmarz_nulling", _check_kaczmarz_nulling),
    ("pie_saf_equivalence", _check_pie_saf_equivalence),
    ("block_norm_identity", _check_block_norm_identity),
    ("zero_gradient_at_origin", _check_zero_gradient_at_origin),
    ("phase_equivariance", _check_phase_equivariance),
)

CHECK_NAMES = tuple(name for name, _ in _CHECKS)


def run_check_suite(options: CheckOptions | None = None) -> SuiteReport:
    """Run every named check (only the gradient check with ``fd_only``)."""

    options = options or CheckOptions()
    ctx = _Context(options)
    results: list[CheckResult] = []
    for name, check in _CHECKS:
        if options.fd_only and name != "fd_gradient":
            continue
        result = check(ctx)
        level = logging.INFO if result.passed else logging.WARNING
        _LOGGER.log(level, "Check %s %s", name, "passed" if result.passed else "FAILED")
        results.append(result)
    return SuiteReport(results=tuple(results))
