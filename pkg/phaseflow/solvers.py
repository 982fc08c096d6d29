"""Amplitude Flow, stochastic Amplitude Flow, randomized Kaczmarz and PIE iterations.

Every run records the full loss and gradient norm at each traced iterate, whatever the
update rule, so traces of different algorithms can be compared directly. Budget
helpers turn the constant- and decaying-step convergence guarantees into iteration
counts.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .const import (
    ALGO_AF,
    ALGO_KACZMARZ,
    ALGO_PIE,
    ALGO_SAF,
    DEFAULT_ITERS,
    Algorithm,
)
from .errors import InvalidParameterError, NumericalAbortError
from .linalg import ComplexVector, as_vector, check_length, dft, idft, sgn
from .loss import LossSpec, wirtinger_gradient
from .measurement import DenseBlock, MeasurementEnsemble, StftBlock
from .rng import SeededRng
from .stochastic import (
    AbcConstants,
    SamplingDistribution,
    sample_indices,
    stochastic_gradient,
    variance_reducing_distribution,
)

_LOGGER = logging.getLogger(__name__)

STATUS_COMPLETED = "completed"
STATUS_CONVERGED = "converged"
STATUS_ABORTED = "aborted"

_CEIL_SLACK = 1e-9


@dataclass(frozen=True, slots=True)
class ConstantSchedule:
    mu: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu) or self.mu <= 0:
            raise InvalidParameterError(f"step size must be finite and > 0, got {self.mu}")


@dataclass(frozen=True, slots=True)
class PolynomialSchedule:
    """``mu_t = mu / (1 + t)^(1/2 + theta)`` with ``0 < theta < 1/2``."""

    mu: float
    theta: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu) or self.mu <= 0:
            raise InvalidParameterError(f"step size must be finite and > 0, got {self.mu}")
        if not 0.0 < self.theta < 0.5:
            raise InvalidParameterError(f"theta must lie in (0, 1/2), got {self.theta}")

    @property
    def exponent(self) -> float:
        return 0.5 + self.theta


StepSchedule = ConstantSchedule | PolynomialSchedule


def schedule_value(schedule: StepSchedule, t: int) -> float:
    """Return ``mu_t``."""

    if t < 0:
        raise InvalidParameterError(f"iteration index must be >= 0, got {t}")
    if isinstance(schedule, ConstantSchedule):
        return schedule.mu
    return schedule.mu / (1.0 + t) ** schedule.exponent


@dataclass(frozen=True, slots=True)
class SolverConfig:
    """Settings shared by all four iterations.

    ``schedule`` is the step size for AF/SAF, the relaxation factor for Kaczmarz and
    the PIE step ``alpha_t``. ``dist`` defaults to uniform sampling, except for
    Kaczmarz where it defaults to the variance-reducing distribution. A ``grad_tol``
    of zero disables the early stop.
    """

    eps: float = 0.0
    schedule: StepSchedule = field(default_factory=lambda: ConstantSchedule(1.0))
    k: int = 1
    dist: SamplingDistribution | None = None
    max_iters: int = DEFAULT_ITERS
    grad_tol: float = 0.0
    seed: int = 0
    stream: int = 0
    trace_every: int = 1
    inf_bound: float = 0.0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise InvalidParameterError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.trace_every < 1:
            raise InvalidParameterError(f"trace_every must be at least 1, got {self.trace_every}")
        if self.k < 1:
            raise InvalidParameterError(f"batch size K must be at least 1, got {self.k}")
        if self.grad_tol < 0:
            raise InvalidParameterError(f"grad_tol must be >= 0, got {self.grad_tol}")

    @property
    def loss_spec(self) -> LossSpec:
        return LossSpec(eps=self.eps, inf_bound=self.inf_bound)


@dataclass(frozen=True, slots=True)
class TraceRecord:
    t: int
    loss: float
    grad_norm: float
    mu_t: float
    indices: tuple[int, ...]
    cum_mu: float
    cum_weighted_sq: float
    elapsed: float = field(default=0.0, compare=False)


@dataclass(frozen=True, slots=True)
class RunTrace:
    """Per-iteration record of one solver run.

    ``cum_mu`` and ``cum_weighted_sq`` hold ``sum_{s<=t} mu_s`` and
    ``sum_{s<=t} mu_s ||grad L(z^s)||^2``. ``z_final`` is excluded from equality;
    compare it with ``numpy`` when needed.
    """

    algorithm: str
    records: tuple[TraceRecord, ...]
    z_final: ComplexVector = field(repr=False, compare=False)
    status: str
    final_loss: float
    final_grad_norm: float

    @property
    def t(self) -> npt.NDArray[np.int64]:
        return np.array([record.t for record in self.records], dtype=np.int64)

    @property
    def losses(self) -> npt.NDArray[np.float64]:
        return np.array([record.loss for record in self.records], dtype=np.float64)

    @property
    def grad_norms(self) -> npt.NDArray[np.float64]:
        return np.array([record.grad_norm for record in self.records], dtype=np.float64)

    @property
    def step_sizes(self) -> npt.NDArray[np.float64]:
        return np.array([record.mu_t for record in self.records], dtype=np.float64)

    @property
    def cum_mu(self) -> npt.NDArray[np.float64]:
        return np.array([record.cum_mu for record in self.records], dtype=np.float64)

    @property
    def cum_weighted_sq(self) -> npt.NDArray[np.float64]:
        return np.array([record.cum_weighted_sq for record in self.records], dtype=np.float64)


# One update: (t, z, full gradient) -> (next iterate, effective step, sampled blocks)
_StepResult = tuple[ComplexVector, float, tuple[int, ...]]
_Step = Callable[[int, ComplexVector, ComplexVector], _StepResult]


def _iterate(
    algorithm: str,
    ensemble: MeasurementEnsemble,
    z0: ComplexVector,
    config: SolverConfig,
    step: _Step,
) -> RunTrace:
    spec = config.loss_spec
    z = np.array(as_vector(z0, name="z0"))
    check_length(z, ensemble.d, name="z0")
    records: list[TraceRecord] = []
    cum_mu = 0.0
    cum_weighted = 0.0
    status = STATUS_COMPLETED
    start = time.perf_counter()

    _LOGGER.info(
        "Starting %s run: d=%d, R=%d, T=%d, eps=%g",
        algorithm,
        ensemble.d,
        ensemble.num_blocks,
        config.max_iters,
        config.eps,
    )
    for t in range(config.max_iters):
        report = wirtinger_gradient(ensemble, z, spec)
        grad_norm = report.norm
        if config.grad_tol > 0 and grad_norm <= config.grad_tol:
            status = STATUS_CONVERGED
            _LOGGER.info("%s reached gradient tolerance at t=%d", algorithm, t)
            break
        z_next, mu_t, indices = step(t, z, report.gradient)
        cum_mu += mu_t
        cum_weighted += mu_t * grad_norm**2
        if t % config.trace_every == 0:
            records.append(
                TraceRecord(
                    t=t,
                    loss=report.loss,
                    grad_norm=grad_norm,
                    mu_t=mu_t,
                    indices=indices,
                    cum_mu=cum_mu,
                    cum_weighted_sq=cum_weighted,
                    elapsed=time.perf_counter() - start,
                )
            )
        if not np.all(np.isfinite(z_next)):
            partial = RunTrace(
                algorithm=algorithm,
                records=tuple(records),
                z_final=z,
                status=STATUS_ABORTED,
                final_loss=report.loss,
                final_grad_norm=grad_norm,
            )
            raise NumericalAbortError(
                f"{algorithm} produced a non-finite iterate at t={t + 1}", trace=partial
            )
        z = z_next

    final = wirtinger_gradient(ensemble, z, spec)
    if not math.isfinite(final.loss):
        partial = RunTrace(
            algorithm=algorithm,
            records=tuple(records),
            z_final=z,
            status=STATUS_ABORTED,
            final_loss=final.loss,
            final_grad_norm=final.norm,
        )
        raise NumericalAbortError(f"{algorithm} loss overflowed", trace=partial)
    _LOGGER.info(
        "%s run finished (%s): loss=%.6g, gradient norm=%.6g",
        algorithm,
        status,
        final.loss,
        final.norm,
    )
    return RunTrace(
        algorithm=algorithm,
        records=tuple(records),
        z_final=z,
        status=status,
        final_loss=final.loss,
        final_grad_norm=final.norm,
    )


def _initial_step(schedule: StepSchedule) -> float:
    return schedule_value(schedule, 0)


def _resolve_dist(
    ensemble: MeasurementEnsemble, config: SolverConfig, default: SamplingDistribution
) -> SamplingDistribution:
    dist = config.dist if config.dist is not None else default
    if dist.num_blocks != ensemble.num_blocks:
        raise InvalidParameterError(
            f"distribution has {dist.num_blocks} entries for {ensemble.num_blocks} blocks"
        )
    return dist


def af_run(ensemble: MeasurementEnsemble, z0: ComplexVector, config: SolverConfig) -> RunTrace:
    """Gradient descent ``z^{t+1} = z^t - mu_t grad L_eps(z^t)``."""

    norm_sq = ensemble.norm**2
    mu0 = _initial_step(config.schedule)
    if mu0 * norm_sq > 1.0 + 1e-12:
        _LOGGER.warning(
            "AF step %.6g exceeds 1/||A||^2 = %.6g; monotone descent is not guaranteed",
            mu0,
            1.0 / norm_sq,
        )

    def step(t: int, z: ComplexVector, gradient: ComplexVector) -> _StepResult:
        mu_t = schedule_value(config.schedule, t)
        return z - mu_t * gradient, mu_t, ()

    return _iterate(ALGO_AF, ensemble, z0, config, step)


def saf_run(ensemble: MeasurementEnsemble, z0: ComplexVector, config: SolverConfig) -> RunTrace:
    """Stochastic Amplitude Flow with fresh i.i.d. block indices every iteration."""

    dist = _resolve_dist(ensemble, config, SamplingDistribution.uniform(ensemble.num_blocks))
    beta = 1.0 - 1.0 / config.k
    mu0 = _initial_step(config.schedule)
    if beta * ensemble.norm**2 * mu0 > 1.0 + 1e-12:
        _LOGGER.warning(
            "SAF step %.6g violates beta*||A||^2*mu <= 1 (beta=%.3g, ||A||^2=%.6g)",
            mu0,
            beta,
            ensemble.norm**2,
        )
    rng = SeededRng(config.seed, config.stream)
    spec = config.loss_spec

    def step(t: int, z: ComplexVector, gradient: ComplexVector) -> _StepResult:
        indices = sample_indices(dist, config.k, rng)
        mu_t = schedule_value(config.schedule, t)
        return z - mu_t * stochastic_gradient(ensemble, z, spec, indices, dist), mu_t, indices

    return _iterate(ALGO_SAF, ensemble, z0, config, step)


def _row(ensemble: MeasurementEnsemble, r: int) -> ComplexVector:
    block = ensemble.blocks[r]
    if not isinstance(block, DenseBlock) or block.rows != 1:
        raise InvalidParameterError(
            f"Kaczmarz needs single-row dense blocks; block {r} is not a matrix row"
        )
    return block.operator.matrix[0]


def kaczmarz_step(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    r: int,
    relaxation: float = 1.0,
) -> ComplexVector:
    """Project ``z`` so that ``|(Az)_r| = sqrt(y_r)``.

    The correction uses ``sqrt(y_r)``; the magnitude condition the step must satisfy
    rules out the printed variant with ``y_r`` itself. When ``(Az)_r = 0`` the sign is
    zero and the step moves ``(Az)_r`` to zero, leaving the residual unchanged.
    """

    row = _row(ensemble, r)
    row_norm_sq = float(np.vdot(row, row).real)
    if row_norm_sq == 0.0:
        raise InvalidParameterError(f"row {r} is zero; Kaczmarz cannot project onto it")
    az = complex(row @ z)
    amplitude = math.sqrt(max(float(ensemble.y[r][0]), 0.0))
    target = complex(sgn(np.array([az]))[0]) * amplitude
    return z + (relaxation * (target - az) / row_norm_sq) * np.conj(row)


def kaczmarz_run(
    ensemble: MeasurementEnsemble,
    z0: ComplexVector,
    config: SolverConfig,
) -> RunTrace:
    """Randomized Kaczmarz with relaxation ``lambda_t`` taken from ``config.schedule``.

    The traced step is the equivalent SAF step ``lambda_t p_r / ||a_r||^2``.
    """

    if not ensemble.is_row_partition:
        raise InvalidParameterError("Kaczmarz needs a row-partitioned dense ensemble")
    if config.k != 1:
        _LOGGER.warning("Kaczmarz samples one row per iteration; ignoring K=%d", config.k)
    dist = _resolve_dist(ensemble, config, variance_reducing_distribution(ensemble))
    rng = SeededRng(config.seed, config.stream)
    norms_sq = ensemble.block_norms_sq

    def step(t: int, z: ComplexVector, gradient: ComplexVector) -> _StepResult:
        (r,) = sample_indices(dist, 1, rng)
        relaxation = schedule_value(config.schedule, t)
        mu_t = relaxation * float(dist.p[r]) / norms_sq[r]
        return kaczmarz_step(ensemble, z, r, relaxation), mu_t, (r,)

    return _iterate(ALGO_KACZMARZ, ensemble, z0, config, step)


def pie_step(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    r: int,
    alpha_t: float,
) -> ComplexVector:
    """One ptychographic update on diffraction pattern ``r``.

    The exit wave is formed as ``S_s w o z``; the alternative reading with the object
    shifted by ``-s`` describes a different update and is not used.
    """

    block = ensemble.blocks[r]
    if not isinstance(block, StftBlock):
        raise InvalidParameterError("PIE needs an STFT ensemble")
    if alpha_t < 0:
        raise InvalidParameterError(f"PIE step must be >= 0, got {alpha_t}")
    psi = block.exit_wave(z)
    wave = dft(psi)
    amplitude = np.sqrt(np.maximum(ensemble.y[r], 0.0))
    corrected = idft(amplitude * sgn(wave))
    peak_sq = float(np.max(np.abs(block.window)) ** 2)
    return z + (alpha_t / peak_sq) * np.conj(block.shifted_window) * (corrected - psi)


def pie_run(ensemble: MeasurementEnsemble, z0: ComplexVector, config: SolverConfig) -> RunTrace:
    """Repeated :func:`pie_step` with i.i.d. shift selection.

    ``config.schedule`` supplies ``alpha_t``; the traced step is the equivalent SAF
    step ``alpha_t p_r / (d ||w||_inf^2)``. The magnitude correction is the ``eps = 0``
    one; ``config.eps`` only affects the traced loss.
    """

    if not ensemble.is_stft:
        raise InvalidParameterError("PIE needs an STFT ensemble")
    dist = _resolve_dist(ensemble, config, SamplingDistribution.uniform(ensemble.num_blocks))
    if isinstance(config.schedule, ConstantSchedule):
        _LOGGER.warning(
            "PIE with constant alpha=%.6g: classical practice, no almost-sure convergence "
            "guarantee without a decaying step",
            config.schedule.mu,
        )
    if not dist.is_uniform:
        _LOGGER.warning("PIE guarantees assume uniform shift sampling")
    if config.eps != 0:
        _LOGGER.warning("PIE uses eps=0 magnitudes; eps=%g only enters the trace", config.eps)
    rng = SeededRng(config.seed, config.stream)
    scale = ensemble.d * float(np.max(np.abs(ensemble.window)) ** 2)

    def step(t: int, z: ComplexVector, gradient: ComplexVector) -> _StepResult:
        (r,) = sample_indices(dist, 1, rng)
        alpha_t = schedule_value(config.schedule, t)
        return pie_step(ensemble, z, r, alpha_t), alpha_t * float(dist.p[r]) / scale, (r,)

    return _iterate(ALGO_PIE, ensemble, z0, config, step)


_RUNNERS: dict[str, Callable[[MeasurementEnsemble, ComplexVector, SolverConfig], RunTrace]] = {
    ALGO_AF: af_run,
    ALGO_SAF: saf_run,
    ALGO_KACZMARZ: kaczmarz_run,
    ALGO_PIE: pie_run,
}


def run_solver(
    algorithm: Algorithm | str,
    ensemble: MeasurementEnsemble,
    z0: ComplexVector,
    config: SolverConfig,
) -> RunTrace:
    """Dispatch to the run function of ``algorithm``."""

    try:
        runner = _RUNNERS[algorithm]
    except KeyError as err:
        raise InvalidParameterError(f"unknown algorithm {algorithm!r}") from err
    return runner(ensemble, z0, config)


def pie_equivalent_saf_step(ensemble: MeasurementEnsemble, alpha: float) -> float:
    """SAF step reproducing PIE with uniform sampling: ``alpha / (R d ||w||_inf^2)``."""

    return alpha / (ensemble.num_blocks * ensemble.d * float(np.max(np.abs(ensemble.window)) ** 2))


# Budgets


def _tolerant_ceil(value: float) -> int:
    return max(0, math.ceil(value - _CEIL_SLACK * max(1.0, abs(value))))


@dataclass(frozen=True, slots=True)
class BudgetReport:
    """Iteration budget and step size.

    ``None`` in ``step_size`` or ``terms`` marks a constraint that is absent because
    its coefficient is zero.
    """

    iterations: int
    step_size: float | None
    terms: dict[str, float | None]
    conditions: dict[str, bool] = field(default_factory=dict)


def af_budget(gamma: float, loss_gap: float, mu: float) -> int:
    """Iterations after which ``min_t ||grad L(z^t)|| <= gamma`` for AF with step ``mu``."""

    if gamma <= 0 or mu <= 0:
        raise InvalidParameterError(f"gamma and mu must be positive, got {gamma}, {mu}")
    return _tolerant_ceil(loss_gap / (gamma**2 * mu))


def _step_limits(
    abc: AbcConstants, norm_a: float, gamma: float, iterations: int
) -> dict[str, float | None]:
    return {
        "alpha": (
            1.0 / (math.sqrt(abc.alpha * iterations) * norm_a)
            if abc.alpha > 0 and iterations > 0
            else None
        ),
        "beta": 1.0 / (abc.beta * norm_a**2) if abc.beta > 0 else None,
        "delta": gamma**2 / (2.0 * abc.delta_upper * norm_a**2) if abc.delta_upper > 0 else None,
    }


def theorem_budget_constant(
    gamma: float,
    loss0_minus_inf: float,
    abc: AbcConstants,
    norm_a: float,
    mu: float | None = None,
) -> BudgetReport:
    """Constant-step budget for ``min_t E||grad L(z^t)|| <= gamma``.

    Without ``mu`` the step is the minimum of the three step limits and ``T`` the
    maximum of the matching iteration terms. With a fixed ``mu`` the budget is
    ``T = ceil(4 gap / (gamma^2 mu))`` and ``conditions`` states which step limits
    ``mu`` satisfies for that ``T``.
    """

    if gamma <= 0:
        raise InvalidParameterError(f"gamma must be positive, got {gamma}")
    if loss0_minus_inf < 0:
        raise InvalidParameterError(f"loss gap must be >= 0, got {loss0_minus_inf}")
    gap = loss0_minus_inf
    norm_sq = norm_a**2

    if mu is not None:
        if mu <= 0:
            raise InvalidParameterError(f"step size must be positive, got {mu}")
        iterations = _tolerant_ceil(4.0 * gap / (gamma**2 * mu))
        limits = _step_limits(abc, norm_a, gamma, iterations)
        conditions = {
            name: limit is None or mu <= limit * (1.0 + 1e-12) for name, limit in limits.items()
        }
        return BudgetReport(
            iterations=iterations,
            step_size=mu,
            terms={"iterations": 4.0 * gap / (gamma**2 * mu)},
            conditions=conditions,
        )

    terms: dict[str, float | None] = {
        "alpha": 16.0 * abc.alpha * norm_sq * gap**2 / gamma**4 if abc.alpha > 0 else None,
        "beta": 4.0 * abc.beta * norm_sq * gap / gamma**2 if abc.beta > 0 else None,
        "delta": 8.0 * abc.delta_upper * norm_sq * gap / gamma**2 if abc.delta_upper > 0 else None,
    }
    present = [value for value in terms.values() if value is not None]
    iterations = _tolerant_ceil(max(present)) if present else 0
    step_limits = _step_limits(abc, norm_a, gamma, iterations).values()
    limits = [value for value in step_limits if value is not None]
    return BudgetReport(
        iterations=iterations,
        step_size=min(limits) if limits else None,
        terms=terms,
    )


def corollary_budget_decaying(gamma: float, c_sq: float, mu: float, theta: float) -> int:
    """Iterations after which the decaying-step bound drops below ``gamma``."""

    if gamma <= 0:
        raise InvalidParameterError(f"gamma must be positive, got {gamma}")
    if not 0.0 < theta < 0.5:
        raise InvalidParameterError(f"theta must lie in (0, 1/2), got {theta}")
    if mu <= 0 or c_sq < 0:
        raise InvalidParameterError(f"need mu > 0 and c^2 >= 0, got {mu}, {c_sq}")
    base = c_sq / mu / gamma**2 * (0.5 - theta) + 1.0
    return _tolerant_ceil(base ** (2.0 / (1.0 - 2.0 * theta)) - 1.0)


def decaying_gradient_bound(c_sq: float, mu: float, theta: float, iterations: int) -> float:
    """Upper bound on ``min_{t<T} E||grad L(z^t)||`` for the polynomial schedule."""

    if iterations < 1:
        raise InvalidParameterError(f"need at least one iteration, got {iterations}")
    denominator = mu * ((1.0 + iterations) ** (0.5 - theta) - 1.0)
    return math.sqrt((0.5 - theta) * c_sq / denominator)


@dataclass(frozen=True, slots=True)
class StepConditions:
    divergent_sum: bool
    summable_squares: bool
    beta_condition: bool
    decreasing: bool

    @property
    def all_hold(self) -> bool:
        return self.divergent_sum and self.summable_squares and self.beta_condition


def step_condition_report(schedule: StepSchedule, beta: float, norm_a: float) -> StepConditions:
    """Check the decaying-step hypotheses for ``schedule``."""

    mu0 = schedule_value(schedule, 0)
    beta_ok = beta * norm_a**2 * mu0 <= 1.0 + 1e-12
    if isinstance(schedule, ConstantSchedule):
        return StepConditions(
            divergent_sum=True, summable_squares=False, beta_condition=beta_ok, decreasing=False
        )
    exponent = schedule.exponent
    return StepConditions(
        divergent_sum=exponent <= 1.0,
        summable_squares=2.0 * exponent > 1.0,
        beta_condition=beta_ok,
        decreasing=True,
    )


def auto_step_size(
    algorithm: Algorithm | str,
    ensemble: MeasurementEnsemble,
    abc: AbcConstants | None,
    iters: int,
    *,
    decaying: bool = False,
) -> float:
    """Step size used for ``--mu auto``.

    AF gets ``1/||A||^2``. For a constant SAF step it is the smaller of
    ``1/(sqrt(alpha T) ||A||)`` and ``1/(beta ||A||^2)``. A ``decaying`` SAF schedule
    starts at the largest base with ``beta ||A||^2 mu_0 <= 1``: ``1/(beta ||A||^2)``, or
    ``1/||A||^2`` when ``beta = 0``. Kaczmarz and PIE get the unrelaxed factor 1.
    """

    if algorithm == ALGO_AF:
        return 1.0 / ensemble.norm**2
    if algorithm == ALGO_SAF:
        if abc is None:
            raise InvalidParameterError("SAF auto step size needs the alpha/beta constants")
        norm_a = ensemble.norm
        if decaying:
            return 1.0 / ((abc.beta if abc.beta > 0 else 1.0) * norm_a**2)
        limits = [1.0 / (math.sqrt(abc.alpha * iters) * norm_a)]
        if abc.beta > 0:
            limits.append(1.0 / (abc.beta * norm_a**2))
        return min(limits)
    if algorithm in (ALGO_KACZMARZ, ALGO_PIE):
        return 1.0
    raise InvalidParameterError(f"unknown algorithm {algorithm!r}")
