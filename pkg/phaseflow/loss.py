"""Smoothed amplitude loss, its Wirtinger gradient and curvature bounds."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .const import FD_HESSIAN_STEP_SCALE, FD_STEP_SCALE
from .errors import InvalidParameterError
from .linalg import ComplexVector, RealVector, check_length, sgn
from .measurement import MeasurementEnsemble

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class LossSpec:
    """Smoothing parameter ``eps`` plus an optional lower bound on the loss infimum."""

    eps: float = 0.0
    inf_bound: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.eps) or self.eps < 0:
            raise InvalidParameterError(f"eps must be finite and >= 0, got {self.eps}")
        if not np.isfinite(self.inf_bound) or self.inf_bound < 0:
            raise InvalidParameterError(f"inf_bound must be finite and >= 0, got {self.inf_bound}")

    def require_smooth(self, what: str) -> None:
        if self.eps <= 0:
            raise InvalidParameterError(f"{what} is undefined for eps=0; use eps > 0")


@dataclass(frozen=True, slots=True)
class LossBreakdown:
    total: float
    per_block: tuple[float, ...]
    clamp_count: int


@dataclass(frozen=True, slots=True)
class GradientReport:
    """Full gradient together with the loss it was evaluated with."""

    gradient: ComplexVector = field(repr=False)
    loss: float
    per_block_losses: tuple[float, ...]
    clamp_count: int = 0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.gradient))


def _target(y_r: RealVector, eps: float) -> tuple[RealVector, int]:
    """Return ``sqrt(max(y + eps, 0))`` and the number of clamped entries."""

    shifted = y_r + eps
    negative = shifted < 0
    clamps = int(np.count_nonzero(negative))
    return np.sqrt(np.where(negative, 0.0, shifted)), clamps


def _phase(az: ComplexVector, eps: float) -> ComplexVector:
    if eps > 0:
        return az / np.sqrt(np.abs(az) ** 2 + eps)
    return sgn(az)


def _block_loss(az: ComplexVector, target: RealVector, eps: float) -> float:
    return float(np.sum((np.sqrt(np.abs(az) ** 2 + eps) - target) ** 2))


def loss_terms(ensemble: MeasurementEnsemble, z: ComplexVector, spec: LossSpec) -> LossBreakdown:
    """Evaluate ``L_eps(z)`` block by block."""

    check_length(z, ensemble.d, name="z")
    per_block: list[float] = []
    clamps = 0
    for block, y_r in zip(ensemble.blocks, ensemble.y, strict=True):
        target, clamped = _target(y_r, spec.eps)
        clamps += clamped
        per_block.append(_block_loss(block.apply(z), target, spec.eps))
    if clamps:
        _LOGGER.debug("Clamped %d negative y+eps entries to zero", clamps)
    return LossBreakdown(
        total=float(sum(per_block)), per_block=tuple(per_block), clamp_count=clamps
    )


def loss_value(ensemble: MeasurementEnsemble, z: ComplexVector, spec: LossSpec) -> float:
    """``sum_r || sqrt(|A_r z|^2 + eps) - sqrt(y^r + eps) ||_2^2``."""

    return loss_terms(ensemble, z, spec).total


def block_gradient(
    ensemble: MeasurementEnsemble,
    r: int,
    z: ComplexVector,
    spec: LossSpec,
) -> ComplexVector:
    """Return ``grad_z L_{eps,r}(z)``."""

    block = ensemble.blocks[r]
    az = block.apply(z)
    target, _ = _target(ensemble.y[r], spec.eps)
    return block.adjoint(az - target * _phase(az, spec.eps))


def wirtinger_gradient(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    spec: LossSpec,
) -> GradientReport:
    """Return ``A^*(Az - sqrt(y + eps) o Az / sqrt(|Az|^2 + eps))``.

    For ``eps = 0`` the generalized gradient ``A^*(Az - sqrt(y) o sgn(Az))`` with
    ``sgn(0) = 0`` is returned. Blocks are summed in index order.
    """

    check_length(z, ensemble.d, name="z")
    gradient = np.zeros(ensemble.d, dtype=np.complex128)
    per_block: list[float] = []
    clamps = 0
    for block, y_r in zip(ensemble.blocks, ensemble.y, strict=True):
        az = block.apply(z)
        target, clamped = _target(y_r, spec.eps)
        clamps += clamped
        per_block.append(_block_loss(az, target, spec.eps))
        gradient = gradient + block.adjoint(az - target * _phase(az, spec.eps))
    return GradientReport(
        gradient=gradient,
        loss=float(sum(per_block)),
        per_block_losses=tuple(per_block),
        clamp_count=clamps,
    )


def _stacked(y: RealVector | Sequence[RealVector]) -> RealVector:
    if isinstance(y, np.ndarray):
        return np.asarray(y, dtype=np.float64).ravel()
    return np.concatenate([np.asarray(y_r, dtype=np.float64).ravel() for y_r in y])


def _curvature_ratio(spec: LossSpec, y: RealVector | Sequence[RealVector]) -> float:
    """``||y + eps||_inf^{1/2} eps^{-1/2}`` with negative entries clamped."""

    peak = float(np.max(np.maximum(_stacked(y) + spec.eps, 0.0)))
    return float(np.sqrt(peak / spec.eps))


def lipschitz_constant(
    spec: LossSpec,
    y: RealVector | Sequence[RealVector],
    norm_a: float,
) -> float:
    """Lipschitz constant ``||A||^2 max{1, ||y + eps||_inf^{1/2} eps^{-1/2} - 1}``."""

    spec.require_smooth("the Lipschitz constant")
    return norm_a**2 * max(1.0, _curvature_ratio(spec, y) - 1.0)


def hessian_quadratic_form(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    u: ComplexVector,
    spec: LossSpec,
) -> float:
    """Second derivative of ``h -> L_eps(z + h u)`` at ``h = 0``."""

    spec.require_smooth("the Hessian")
    check_length(z, ensemble.d, name="z")
    check_length(u, ensemble.d, name="u")
    az = ensemble.apply(z)
    au = ensemble.apply(u)
    target, _ = _target(ensemble.stacked_measurements(), spec.eps)
    weight = target / (np.abs(az) ** 2 + spec.eps) ** 1.5
    au_sq = np.abs(au) ** 2
    first = 2.0 * np.sum((1.0 - spec.eps * weight) * au_sq)
    second = np.sum(weight * (np.real(az**2 * np.conj(au) ** 2) - np.abs(az) ** 2 * au_sq))
    return float(first + second)


def hessian_bounds(
    ensemble: MeasurementEnsemble,
    u: ComplexVector,
    spec: LossSpec,
    norm_a: float,
) -> tuple[float, float]:
    """Return the lower and upper curvature bounds along ``u``.

    The lower factor is floored at zero so the bound stays valid when clamped
    intensities push the curvature ratio below one.
    """

    spec.require_smooth("the Hessian bounds")
    scale = norm_a**2 * float(np.linalg.norm(u)) ** 2
    ratio = _curvature_ratio(spec, ensemble.y)
    return -2.0 * max(ratio - 1.0, 0.0) * scale, 2.0 * scale


def fd_gradient_oracle(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    spec: LossSpec,
    h: float | None = None,
) -> ComplexVector:
    """Central-difference estimate of the Wirtinger gradient.

    Coordinate ``j`` is ``(g_re + i g_im) / 2`` where ``g_re`` and ``g_im`` are the
    derivatives along the real and imaginary unit directions.
    """

    check_length(z, ensemble.d, name="z")
    step = h if h is not None else FD_STEP_SCALE * (1.0 + float(np.max(np.abs(z))))
    if step <= 0:
        raise InvalidParameterError(f"finite-difference step must be positive, got {step}")
    estimate = np.zeros(ensemble.d, dtype=np.complex128)
    for j in range(ensemble.d):
        partials = []
        for direction in (1.0, 1.0j):
            offset = np.zeros(ensemble.d, dtype=np.complex128)
            offset[j] = direction * step
            plus = loss_value(ensemble, z + offset, spec)
            minus = loss_value(ensemble, z - offset, spec)
            partials.append((plus - minus) / (2.0 * step))
        estimate[j] = 0.5 * (partials[0] + 1j * partials[1])
    return estimate


def fd_second_directional(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    u: ComplexVector,
    spec: LossSpec,
    h: float | None = None,
) -> float:
    """``[L(z + h u) + L(z - h u) - 2 L(z)] / h^2``."""

    step = h if h is not None else FD_HESSIAN_STEP_SCALE
    if step <= 0:
        raise InvalidParameterError(f"finite-difference step must be positive, got {step}")
    plus = loss_value(ensemble, z + step * u, spec)
    minus = loss_value(ensemble, z - step * u, spec)
    center = loss_value(ensemble, z, spec)
    return (plus + minus - 2.0 * center) / step**2


def descent_bound(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    v: ComplexVector,
    spec: LossSpec,
    norm_a: float,
) -> tuple[float, float]:
    """Return ``L(z + v)`` and its bound ``L(z) + 2 Re<grad, v> + ||A||^2 ||v||^2``."""

    report = wirtinger_gradient(ensemble, z, spec)
    lhs = loss_value(ensemble, z + v, spec)
    rhs = (
        report.loss
        + 2.0 * float(np.real(np.vdot(v, report.gradient)))
        + norm_a**2 * float(np.linalg.norm(v)) ** 2
    )
    return lhs, rhs


