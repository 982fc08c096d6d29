"""Tests for the DFT, vector helpers and the power-iteration norm estimate."""

from __future__ import annotations

import numpy as np
import pytest

from phaseflow.errors import ConvergenceError, DimensionMismatchError, InvalidParameterError
from phaseflow.linalg import (
    DenseOperator,
    as_vector,
    check_length,
    circular_shift,
    dft,
    dft_direct,
    fft_radix2,
    frobenius_norm,
    idft,
    inner,
    sgn,
    spectral_norm,
)
from phaseflow.rng import SeededRng

from .conftest import relative_error


@pytest.mark.parametrize("d", [1, 3, 8, 17, 64, 100, 128, 256])
def test_dft_matches_numpy(d: int, rng: SeededRng) -> None:
    """Every dispatch path agrees with numpy's FFT."""

    v = rng.complex_normal(d)
    assert relative_error(dft(v), np.fft.fft(v)) <= 1e-12


@pytest.mark.parametrize("d", [2, 4, 16, 64])
def test_radix2_matches_direct_product(d: int, rng: SeededRng) -> None:
    """The radix-2 butterflies reproduce the explicit matrix product."""

    v = rng.complex_normal(d)
    assert relative_error(fft_radix2(v), dft_direct(v)) <= 1e-12


def test_radix2_rejects_other_lengths() -> None:
    with pytest.raises(InvalidParameterError):
        fft_radix2(np.ones(6, dtype=np.complex128))


@pytest.mark.parametrize("d", [5, 32, 128])
def test_idft_inverts_dft(d: int, rng: SeededRng) -> None:
    v = rng.complex_normal(d)
    assert relative_error(idft(dft(v)), v) <= 1e-12


def test_circular_shift_moves_entries_forward() -> None:
    """``(S_r v)_j = v_{j - r}`` and negative shifts wrap around."""

    v = np.arange(5, dtype=np.complex128)
    np.testing.assert_array_equal(circular_shift(v, 1), [4, 0, 1, 2, 3])
    np.testing.assert_array_equal(circular_shift(v, -1), [1, 2, 3, 4, 0])
    np.testing.assert_array_equal(circular_shift(v, 5), v)


def test_inner_is_conjugate_linear_in_second_argument() -> None:
    u = np.array([1.0 + 1.0j, 2.0])
    v = np.array([1.0j, 1.0])
    assert inner(u, v) == pytest.approx(complex(np.sum(u * np.conj(v))))
    assert inner(u, 1j * v) == pytest.approx(-1j * inner(u, v))


def test_sgn_is_zero_at_origin() -> None:
    values = sgn(np.array([0.0, 3.0 + 4.0j, -2.0], dtype=np.complex128))
    np.testing.assert_allclose(values, [0.0, 0.6 + 0.8j, -1.0])


def test_as_vector_validates_input() -> None:
    """Vectors are one-dimensional, non-empty, finite and read-only."""

    vector = as_vector([1.0, 2.0])
    assert vector.dtype == np.complex128
    assert not vector.flags.writeable
    with pytest.raises(InvalidParameterError):
        as_vector(np.ones((2, 2)))
    with pytest.raises(InvalidParameterError):
        as_vector([])
    with pytest.raises(InvalidParameterError):
        as_vector([1.0, np.nan])


def test_check_length_raises_dimension_mismatch() -> None:
    with pytest.raises(DimensionMismatchError):
        check_length(np.ones(3), 4)


def test_dense_operator_adjoint_identity(rng: SeededRng) -> None:
    """``<A z, u> = <z, A^* u>``."""

    op = DenseOperator(rng.complex_normal((7, 4)))
    z = rng.complex_normal(4)
    u = rng.complex_normal(7)
    assert inner(op.apply(z), u) == pytest.approx(inner(z, op.adjoint(u)), rel=1e-12)


def test_dense_operator_rejects_wrong_length(rng: SeededRng) -> None:
    op = DenseOperator(rng.complex_normal((3, 2)))
    with pytest.raises(DimensionMismatchError):
        op.apply(np.ones(3, dtype=np.complex128))


def test_spectral_norm_matches_svd(rng: SeededRng) -> None:
    op = DenseOperator(rng.complex_normal((20, 8)))
    expected = float(np.linalg.norm(op.matrix, 2))
    assert spectral_norm(op) == pytest.approx(expected, rel=1e-6)
    assert frobenius_norm(op) == pytest.approx(float(np.linalg.norm(op.matrix)), rel=1e-12)


@pytest.mark.parametrize("second", [0.99, 0.999])
def test_spectral_norm_with_close_singular_values(second: float) -> None:
    """A small spectral gap slows the iteration down but does not stop it early."""

    op = DenseOperator(np.diag([1.0, second, 0.5, 0.25, 0.1]))
    assert abs(spectral_norm(op) - 1.0) <= 1e-9


def test_spectral_norm_is_deterministic(rng: SeededRng) -> None:
    op = DenseOperator(rng.complex_normal((6, 6)))
    assert spectral_norm(op) == spectral_norm(op)


def test_spectral_norm_of_zero_operator() -> None:
    assert spectral_norm(DenseOperator(np.zeros((3, 2)))) == 0.0


def test_spectral_norm_reports_non_convergence(rng: SeededRng) -> None:
    """An iteration cap that is too small raises with the last estimate attached."""

    op = DenseOperator(rng.complex_normal((5, 5)))
    with pytest.raises(ConvergenceError) as err:
        spectral_norm(op, max_iter=1)
    assert err.value.iterations == 1
    assert err.value.last_value > 0


def test_spectral_norm_validates_arguments(rng: SeededRng) -> None:
    op = DenseOperator(rng.complex_normal((2, 2)))
    with pytest.raises(InvalidParameterError):
        spectral_norm(op, tol=0.0)
    with pytest.raises(InvalidParameterError):
        spectral_norm(op, max_iter=0)
