"""Tests for measurement blocks, ensembles, windows and simulated intensities."""

from __future__ import annotations

import numpy as np
import pytest

from phaseflow.const import NOISE_GAUSSIAN, NOISE_POISSON, WINDOW_BOX, WINDOW_RANDOM
from phaseflow.errors import DimensionMismatchError, InvalidParameterError
from phaseflow.harness import build_reference_instance
from phaseflow.linalg import DenseOperator, inner, spectral_norm
from phaseflow.measurement import (
    MeasurementEnsemble,
    NoiseSpec,
    StftBlock,
    adjoint_block,
    apply_block,
    build_dense_ensemble,
    build_stft_ensemble,
    evenly_spaced_shifts,
    partition_rows,
    random_dense_operator,
    simulate,
    window,
)
from phaseflow.rng import SeededRng


def test_stft_block_matches_dense_matrix(
    stft_ensemble: MeasurementEnsemble, rng: SeededRng
) -> None:
    """The FFT-based forward map equals ``F diag(S_s w)``."""

    z = rng.complex_normal(stft_ensemble.d)
    np.testing.assert_allclose(
        stft_ensemble.apply(z), stft_ensemble.to_dense() @ z, rtol=0, atol=1e-12
    )


@pytest.mark.parametrize("fixture", ["stft_ensemble", "block_ensemble", "row_ensemble"])
def test_adjoint_identity(fixture: str, request: pytest.FixtureRequest, rng: SeededRng) -> None:
    """``<A z, u> = <z, A^* u>`` for the stacked operator."""

    ensemble: MeasurementEnsemble = request.getfixturevalue(fixture)
    z = rng.complex_normal(ensemble.d)
    u = rng.complex_normal(ensemble.rows)
    lhs = inner(ensemble.apply(z), u)
    rhs = inner(z, ensemble.adjoint(u))
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(ensemble.apply(z)) * np.linalg.norm(u)


@pytest.mark.parametrize("fixture", ["stft_ensemble", "block_ensemble"])
def test_block_maps_match_dense_rows(
    fixture: str, request: pytest.FixtureRequest, rng: SeededRng
) -> None:
    ensemble: MeasurementEnsemble = request.getfixturevalue(fixture)
    z = rng.complex_normal(ensemble.d)
    for block in ensemble.blocks:
        u = rng.complex_normal(block.rows)
        dense = block.to_dense()
        np.testing.assert_allclose(apply_block(block, z), dense @ z, rtol=0, atol=1e-12)
        np.testing.assert_allclose(
            adjoint_block(block, u), dense.conj().T @ u, rtol=0, atol=1e-12
        )


def test_stft_block_norm_closed_form(stft_ensemble: MeasurementEnsemble) -> None:
    """``||A_r||^2 = d ||w||_inf^2`` for every shift."""

    expected = stft_ensemble.d * float(np.max(np.abs(stft_ensemble.window))) ** 2
    for block in stft_ensemble.blocks:
        assert block.norm_sq == pytest.approx(expected, rel=1e-12)
        assert spectral_norm(block) ** 2 == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("fixture", ["stft_ensemble", "block_ensemble"])
def test_ensemble_norms(fixture: str, request: pytest.FixtureRequest) -> None:
    ensemble: MeasurementEnsemble = request.getfixturevalue(fixture)
    dense = ensemble.to_dense()
    assert ensemble.norm == pytest.approx(float(np.linalg.norm(dense, 2)), rel=1e-6)
    assert ensemble.frobenius_norm == pytest.approx(float(np.linalg.norm(dense)), rel=1e-12)


def test_stft_normal_operator_is_diagonal(stft_ensemble: MeasurementEnsemble) -> None:
    """``A^* A = d sum_r diag(|S_{s_r} w|^2)``."""

    dense = stft_ensemble.to_dense()
    gram = dense.conj().T @ dense
    scale = float(np.max(stft_ensemble.normal_diagonal))
    np.testing.assert_allclose(
        gram, np.diag(stft_ensemble.normal_diagonal), rtol=0, atol=1e-12 * scale
    )


def test_stft_norm_is_exact() -> None:
    ensemble, _ = build_reference_instance()
    exact = float(np.linalg.norm(ensemble.to_dense(), 2))
    assert ensemble.norm == pytest.approx(exact, rel=1e-12)
    assert ensemble.norm**2 == pytest.approx(float(np.max(ensemble.normal_diagonal)), rel=1e-14)


def test_normal_diagonal_needs_stft(block_ensemble: MeasurementEnsemble) -> None:
    with pytest.raises(InvalidParameterError):
        _ = block_ensemble.normal_diagonal


def test_single_row_block_norm_is_row_norm(row_ensemble: MeasurementEnsemble) -> None:
    dense = row_ensemble.to_dense()
    expected = np.sum(np.abs(dense) ** 2, axis=1)
    np.testing.assert_allclose(row_ensemble.block_norms_sq, expected, rtol=1e-12)
    assert row_ensemble.is_row_partition


def test_stft_shift_is_reduced_modulo_d() -> None:
    block = StftBlock(np.ones(4, dtype=np.complex128), 6)
    assert block.shift == 2


def test_build_stft_ensemble_validation() -> None:
    """Shifts must be distinct modulo ``d`` and the window non-zero."""

    w = window("gaussian", 8, width=2.0)
    with pytest.raises(InvalidParameterError):
        build_stft_ensemble(w, [0, 8])
    with pytest.raises(InvalidParameterError):
        build_stft_ensemble(np.zeros(8), [0])
    with pytest.raises(InvalidParameterError):
        build_stft_ensemble(w, list(range(9)))
    ensemble = build_stft_ensemble(w, [1, 3])
    assert ensemble.shifts == (1, 3)
    assert ensemble.is_stft


def test_build_dense_ensemble_requires_partition(rng: SeededRng) -> None:
    op = random_dense_operator(6, 3, rng)
    with pytest.raises(InvalidParameterError):
        build_dense_ensemble(op, [2, 2])
    assert build_dense_ensemble(op, [2, 4]).num_blocks == 2
    assert partition_rows(op).num_blocks == 6


def test_ensemble_dimension_checks(rng: SeededRng) -> None:
    ensemble = build_dense_ensemble(DenseOperator(rng.complex_normal((4, 3))))
    with pytest.raises(DimensionMismatchError):
        ensemble.apply(np.ones(4, dtype=np.complex128))
    with pytest.raises(DimensionMismatchError):
        ensemble.with_measurements([np.ones(1)] * 3)


def test_measurements_required(rng: SeededRng) -> None:
    ensemble = build_dense_ensemble(DenseOperator(rng.complex_normal((2, 2))))
    with pytest.raises(InvalidParameterError):
        _ = ensemble.y
    with pytest.raises(InvalidParameterError):
        _ = ensemble.window


def test_simulate_noiseless_is_exact(stft_ensemble: MeasurementEnsemble, rng: SeededRng) -> None:
    x = rng.complex_normal(stft_ensemble.d)
    measured = simulate(stft_ensemble, x)
    for block, y_r in zip(measured.blocks, measured.y, strict=True):
        np.testing.assert_array_equal(y_r, np.abs(block.apply(x)) ** 2)
    assert measured.signal is not None
    np.testing.assert_array_equal(measured.signal, x)


@pytest.mark.parametrize("phase", [0.3, 1.0, -2.5])
def test_simulate_ignores_global_phase(
    stft_ensemble: MeasurementEnsemble, rng: SeededRng, phase: float
) -> None:
    x = rng.complex_normal(stft_ensemble.d)
    rotated = simulate(stft_ensemble, np.exp(1j * phase) * x)
    reference = simulate(stft_ensemble, x)
    for y_rot, y_ref in zip(rotated.y, reference.y, strict=True):
        np.testing.assert_allclose(y_rot, y_ref, rtol=1e-12, atol=1e-12 * float(np.max(y_ref)))


def test_simulate_gaussian_noise_is_seeded(
    stft_ensemble: MeasurementEnsemble, rng: SeededRng
) -> None:
    """The same noise seed gives the same perturbation; the data differ from clean."""

    x = rng.complex_normal(stft_ensemble.d)
    noise = NoiseSpec(kind=NOISE_GAUSSIAN, sigma=0.1, seed=4)
    first = simulate(stft_ensemble, x, noise).stacked_measurements()
    second = simulate(stft_ensemble, x, noise).stacked_measurements()
    clean = simulate(stft_ensemble, x).stacked_measurements()
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, clean)


def test_simulate_poisson_noise_counts(stft_ensemble: MeasurementEnsemble, rng: SeededRng) -> None:
    x = rng.complex_normal(stft_ensemble.d)
    noise = NoiseSpec(kind=NOISE_POISSON, scale=10.0, seed=1)
    counts = simulate(stft_ensemble, x, noise).stacked_measurements() * 10.0
    np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)
    assert np.all(counts >= 0)


def test_noise_spec_validation() -> None:
    with pytest.raises(InvalidParameterError):
        NoiseSpec(kind="laplace")
    with pytest.raises(InvalidParameterError):
        NoiseSpec(kind=NOISE_GAUSSIAN, sigma=-1.0)
    assert NoiseSpec(kind=NOISE_GAUSSIAN, sigma=0.0).is_noiseless


def test_windows() -> None:
    """Gaussian peaks at index 0, box covers its width, random needs a stream."""

    gaussian = window("gaussian", 8, width=2.0)
    assert gaussian[0] == 1.0
    assert gaussian[1] == pytest.approx(gaussian[7])
    box = window(WINDOW_BOX, 6, width=2)
    np.testing.assert_array_equal(box, [1, 1, 0, 0, 0, 0])
    with pytest.raises(InvalidParameterError):
        window(WINDOW_RANDOM, 4)
    assert window(WINDOW_RANDOM, 4, rng=SeededRng(0)).shape == (4,)
    with pytest.raises(InvalidParameterError):
        window("hann", 4)


def test_evenly_spaced_shifts() -> None:
    assert evenly_spaced_shifts(32, 8) == [0, 4, 8, 12, 16, 20, 24, 28]
    assert evenly_spaced_shifts(5, 5) == [0, 1, 2, 3, 4]
    with pytest.raises(InvalidParameterError):
        evenly_spaced_shifts(4, 5)
