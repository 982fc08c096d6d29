"""Tests for the smoothed amplitude loss, its gradient and curvature bounds."""

from __future__ import annotations

import numpy as np
import pytest

from phaseflow.errors import InvalidParameterError
from phaseflow.linalg import ComplexVector
from phaseflow.loss import (
    LossSpec,
    block_gradient,
    descent_bound,
    fd_gradient_oracle,
    fd_second_directional,
    hessian_bounds,
    hessian_quadratic_form,
    lipschitz_constant,
    loss_terms,
    loss_value,
    wirtinger_gradient,
)
from phaseflow.measurement import MeasurementEnsemble
from phaseflow.rng import SeededRng

from .conftest import relative_error

ENSEMBLES = ["stft_ensemble", "block_ensemble", "row_ensemble"]


@pytest.mark.parametrize("fixture", ENSEMBLES)
@pytest.mark.parametrize("eps", [1e-2, 1.0])
def test_gradient_matches_finite_differences(
    fixture: str, eps: float, request: pytest.FixtureRequest, rng: SeededRng
) -> None:
    """The analytic Wirtinger gradient agrees with central differences."""

    ensemble: MeasurementEnsemble = request.getfixturevalue(fixture)
    spec = LossSpec(eps=eps)
    z = rng.complex_normal(ensemble.d)
    analytic = wirtinger_gradient(ensemble, z, spec).gradient
    assert relative_error(analytic, fd_gradient_oracle(ensemble, z, spec)) <= 1e-6


def test_nonsmooth_gradient_matches_away_from_zero_set(
    stft_ensemble: MeasurementEnsemble, rng: SeededRng
) -> None:
    z = rng.complex_normal(stft_ensemble.d)
    while np.min(np.abs(stft_ensemble.apply(z))) <= 1e-2:
        z = rng.complex_normal(stft_ensemble.d)
    spec = LossSpec(eps=0.0)
    analytic = wirtinger_gradient(stft_ensemble, z, spec).gradient
    assert relative_error(analytic, fd_gradient_oracle(stft_ensemble, z, spec)) <= 1e-5


def test_gradient_is_sum_of_block_gradients(
    block_ensemble: MeasurementEnsemble, rng: SeededRng
) -> None:
    spec = LossSpec(eps=0.1)
    z = rng.complex_normal(block_ensemble.d)
    total = sum(block_gradient(block_ensemble, r, z, spec) for r in range(4))
    report = wirtinger_gradient(block_ensemble, z, spec)
    np.testing.assert_allclose(report.gradient, total, rtol=1e-12, atol=1e-12)
    assert report.loss == pytest.approx(sum(report.per_block_losses))


@pytest.mark.parametrize("eps", [0.0, 0.5])
def test_gradient_vanishes_at_origin(stft_ensemble: MeasurementEnsemble, eps: float) -> None:
    report = wirtinger_gradient(
        stft_ensemble, np.zeros(stft_ensemble.d, dtype=np.complex128), LossSpec(eps=eps)
    )
    assert np.all(report.gradient == 0)


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_loss_is_zero_at_signal(
    stft_instance: tuple[MeasurementEnsemble, ComplexVector], eps: float
) -> None:
    ensemble, x = stft_instance
    assert loss_value(ensemble, x, LossSpec(eps=eps)) == pytest.approx(0.0, abs=1e-20)


def test_loss_is_phase_invariant(stft_ensemble: MeasurementEnsemble, rng: SeededRng) -> None:
    spec = LossSpec(eps=0.1)
    z = rng.complex_normal(stft_ensemble.d)
    phase = rng.unit_phase()
    assert loss_value(stft_ensemble, phase * z, spec) == pytest.approx(
        loss_value(stft_ensemble, z, spec), rel=1e-12
    )


def test_negative_intensities_are_clamped(row_ensemble: MeasurementEnsemble) -> None:
    """``sqrt(max(y + eps, 0))`` is used and the clamped entries are counted."""

    shifted = row_ensemble.with_measurements([y_r - 1e6 for y_r in row_ensemble.y])
    z = np.ones(shifted.d, dtype=np.complex128)
    breakdown = loss_terms(shifted, z, LossSpec(eps=0.0))
    assert breakdown.clamp_count == shifted.num_blocks
    expected = float(np.sum(np.abs(shifted.apply(z)) ** 2))
    assert breakdown.total == pytest.approx(expected, rel=1e-12)


def test_loss_spec_validation() -> None:
    with pytest.raises(InvalidParameterError):
        LossSpec(eps=-1.0)
    with pytest.raises(InvalidParameterError):
        LossSpec(inf_bound=float("nan"))


@pytest.mark.parametrize("eps", [1e-2, 1.0])
def test_gradient_lipschitz_bound(
    stft_ensemble: MeasurementEnsemble, rng: SeededRng, eps: float
) -> None:
    """``||grad L(z) - grad L(v)|| <= L ||z - v||`` on random pairs."""

    spec = LossSpec(eps=eps)
    constant = lipschitz_constant(spec, stft_ensemble.y, stft_ensemble.norm)
    for _ in range(200):
        z = rng.complex_normal(stft_ensemble.d)
        v = z + 10.0 ** (2.0 * rng.random(1)[0] - 1.0) * rng.complex_normal(stft_ensemble.d)
        lhs = np.linalg.norm(
            wirtinger_gradient(stft_ensemble, z, spec).gradient
            - wirtinger_gradient(stft_ensemble, v, spec).gradient
        )
        assert lhs <= constant * np.linalg.norm(z - v) * (1.0 + 1e-10)


def test_lipschitz_constant_needs_smoothing(stft_ensemble: MeasurementEnsemble) -> None:
    with pytest.raises(InvalidParameterError):
        lipschitz_constant(LossSpec(eps=0.0), stft_ensemble.y, 1.0)


@pytest.mark.parametrize("eps", [0.1, 1.0])
def test_hessian_form_matches_second_difference(
    block_ensemble: MeasurementEnsemble, rng: SeededRng, eps: float
) -> None:
    spec = LossSpec(eps=eps)
    for _ in range(20):
        z = rng.complex_normal(block_ensemble.d)
        u = rng.complex_normal(block_ensemble.d)
        exact = hessian_quadratic_form(block_ensemble, z, u, spec)
        approx = fd_second_directional(block_ensemble, z, u, spec)
        assert abs(exact - approx) <= 1e-4 * max(abs(exact), 1.0)


def test_hessian_form_within_bounds(stft_ensemble: MeasurementEnsemble, rng: SeededRng) -> None:
    spec = LossSpec(eps=1e-2)
    for _ in range(200):
        z = rng.complex_normal(stft_ensemble.d)
        u = rng.complex_normal(stft_ensemble.d)
        lower, upper = hessian_bounds(stft_ensemble, u, spec, stft_ensemble.norm)
        value = hessian_quadratic_form(stft_ensemble, z, u, spec)
        assert lower * (1.0 + 1e-10) <= value <= upper * (1.0 + 1e-10)


@pytest.mark.parametrize("eps", [0.0, 0.1])
def test_descent_inequality(
    row_ensemble: MeasurementEnsemble, rng: SeededRng, eps: float
) -> None:
    """``L(z + v) <= L(z) + 2 Re<grad, v> + ||A||^2 ||v||^2``."""

    spec = LossSpec(eps=eps)
    for _ in range(100):
        z = rng.complex_normal(row_ensemble.d)
        v = rng.complex_normal(row_ensemble.d)
        lhs, rhs = descent_bound(row_ensemble, z, v, spec, row_ensemble.norm)
        assert lhs <= rhs + 1e-10 * (1.0 + abs(rhs))
