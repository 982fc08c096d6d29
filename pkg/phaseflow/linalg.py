"""Complex vector primitives: DFT, circular shifts, inner products and operator norms."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, runtime_checkable

import numpy as np
import numpy.typing as npt

from .const import (
    DFT_DIRECT_MAX,
    SPECTRAL_NORM_MAX_ITER,
    SPECTRAL_NORM_PERTURBATION,
    SPECTRAL_NORM_SEED,
    SPECTRAL_NORM_TOL,
)
from .errors import ConvergenceError, DimensionMismatchError, InvalidParameterError

_LOGGER = logging.getLogger(__name__)

_ROUNDING_FLOOR = 16.0 * float(np.finfo(np.float64).eps)

ComplexVector = npt.NDArray[np.complex128]
RealVector = npt.NDArray[np.float64]
ComplexMatrix = npt.NDArray[np.complex128]


def as_vector(values: npt.ArrayLike, *, name: str = "vector") -> ComplexVector:
    """Return a read-only complex128 copy of ``values`` after validating it."""

    vector = np.array(values, dtype=np.complex128, copy=True)
    if vector.ndim != 1:
        raise InvalidParameterError(f"{name} must be one-dimensional, got shape {vector.shape}")
    if vector.size == 0:
        raise InvalidParameterError(f"{name} must not be empty")
    if not np.all(np.isfinite(vector)):
        raise InvalidParameterError(f"{name} contains NaN or Inf entries")
    vector.setflags(write=False)
    return vector


def check_length(vector: npt.NDArray[np.generic], expected: int, *, name: str = "vector") -> None:
    """Raise :class:`DimensionMismatchError` when ``vector`` has the wrong length."""

    if vector.ndim != 1 or vector.shape[0] != expected:
        raise DimensionMismatchError(
            f"{name} has shape {vector.shape}, expected a vector of length {expected}"
        )


def inner(u: ComplexVector, v: ComplexVector) -> complex:
    """Return ``<u, v> = sum_j u_j conj(v_j)``."""

    return complex(np.vdot(v, u))


def sgn(v: ComplexVector) -> ComplexVector:
    """Entrywise ``v / |v|`` with ``sgn(0) = 0``."""

    magnitude = np.abs(v)
    out = np.zeros_like(v, dtype=np.complex128)
    np.divide(v, magnitude, out=out, where=magnitude > 0)
    return out


@lru_cache(maxsize=32)
def dft_matrix(d: int) -> ComplexMatrix:
    """Return the read-only DFT matrix ``F[k, j] = exp(-2 pi i k j / d)``."""

    if d < 1:
        raise InvalidParameterError(f"DFT size must be positive, got {d}")
    k = np.arange(d)
    # Reduce the exponent modulo d so large k*j products keep full precision.
    phase = np.outer(k, k) % d
    matrix = np.exp(-2j * np.pi * phase / d)
    matrix.setflags(write=False)
    return matrix


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _bit_reverse_indices(n: int) -> npt.NDArray[np.intp]:
    bits = n.bit_length() - 1
    indices = np.arange(n)
    reversed_ = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        reversed_ = (reversed_ << 1) | (indices & 1)
        indices = indices >> 1
    return reversed_


def dft_direct(v: ComplexVector) -> ComplexVector:
    """DFT by explicit matrix-vector product."""

    return dft_matrix(v.shape[0]) @ v


def fft_radix2(v: ComplexVector) -> ComplexVector:
    """Iterative decimation-in-time radix-2 FFT for power-of-two lengths."""

    n = v.shape[0]
    if not _is_power_of_two(n):
        raise InvalidParameterError(f"radix-2 FFT needs a power-of-two length, got {n}")
    x = np.array(v, dtype=np.complex128)[_bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = x.reshape(-1, size)
        upper = blocks[:, :half].copy()
        lower = blocks[:, half:] * twiddle
        blocks[:, :half] = upper + lower
        blocks[:, half:] = upper - lower
        size *= 2
    return x


def dft(v: ComplexVector) -> ComplexVector:
    """Return ``F v``.

    Small sizes use the cached matrix, larger power-of-two sizes the radix-2 FFT and
    everything else ``numpy.fft``.
    """

    d = v.shape[0]
    if d <= DFT_DIRECT_MAX:
        return dft_direct(v)
    if _is_power_of_two(d):
        return fft_radix2(v)
    return np.fft.fft(v)


def idft(v: ComplexVector) -> ComplexVector:
    """Return ``F^{-1} v = (1/d) F^* v``."""

    d = v.shape[0]
    # conj(F conj(v)) = F^* v
    return np.conj(dft(np.conj(v))) / d


def circular_shift(v: ComplexVector, r: int) -> ComplexVector:
    """Return ``S_r v`` with ``(S_r v)_j = v_{(j - r) mod d}``; negative ``r`` allowed."""

    return np.roll(v, int(r) % v.shape[0])


@runtime_checkable
class LinearOperator(Protocol):
    """Anything that can be applied and adjoint-applied to complex vectors."""

    @property
    def rows(self) -> int: ...

    @property
    def cols(self) -> int: ...

    def apply(self, z: ComplexVector) -> ComplexVector: ...

    def adjoint(self, u: ComplexVector) -> ComplexVector: ...


@dataclass(frozen=True, slots=True)
class DenseOperator:
    """Row-major complex matrix acting on ``C^d``."""

    matrix: ComplexMatrix = field(repr=False)

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=np.complex128, copy=True)
        if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
            raise InvalidParameterError(
                f"dense operator needs a non-empty 2-D matrix, got shape {matrix.shape}"
            )
        if not np.all(np.isfinite(matrix)):
            raise InvalidParameterError("dense operator contains NaN or Inf entries")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def rows(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def cols(self) -> int:
        return int(self.matrix.shape[1])

    def apply(self, z: ComplexVector) -> ComplexVector:
        check_length(z, self.cols, name="z")
        return self.matrix @ z

    def adjoint(self, u: ComplexVector) -> ComplexVector:
        check_length(u, self.rows, name="u")
        return self.matrix.conj().T @ u


def frobenius_norm(op: DenseOperator) -> float:
    """Return ``sqrt(sum |a_ij|^2)``."""

    return float(np.sqrt(np.sum(np.abs(op.matrix) ** 2)))


def spectral_norm(
    op: LinearOperator,
    tol: float = SPECTRAL_NORM_TOL,
    max_iter: int = SPECTRAL_NORM_MAX_ITER,
) -> float:
    """Estimate ``||op||`` by power iteration on ``op^* op``.

    The start vector is all ones plus a small perturbation from a fixed seed, so repeated
    calls on the same operator return the same value. The Rayleigh estimate of
    ``||op||^2`` increases monotonically; iteration stops once both the last increment and
    the extrapolated remaining increase are at most ``tol`` relative to the estimate.
    """

    if tol <= 0:
        raise InvalidParameterError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise InvalidParameterError(f"max_iter must be at least 1, got {max_iter}")

    generator = np.random.default_rng(SPECTRAL_NORM_SEED)
    d = op.cols
    v = np.ones(d, dtype=np.complex128) + SPECTRAL_NORM_PERTURBATION * (
        generator.standard_normal(d) + 1j * generator.standard_normal(d)
    )
    v /= np.linalg.norm(v)

    previous = 0.0
    previous_step = 0.0
    for iteration in range(1, max_iter + 1):
        image = op.apply(v)
        estimate = float(np.vdot(image, image).real)
        if estimate == 0.0:
            _LOGGER.debug("Power iteration hit the null space; operator norm is zero")
            return 0.0
        if iteration > 1:
            step = estimate - previous
            if abs(step) <= _ROUNDING_FLOOR * estimate:
                _LOGGER.debug("Power iteration reached rounding level after %d steps", iteration)
                return float(np.sqrt(estimate))
            # remaining error of a geometric tail with ratio ``step / previous_step``
            ratio = step / previous_step if previous_step > 0.0 else -1.0
            if step > 0.0 and 0.0 <= ratio < 1.0:
                remaining = step * ratio / (1.0 - ratio)
                if max(step, remaining) <= tol * estimate:
                    _LOGGER.debug("Power iteration converged after %d steps", iteration)
                    return float(np.sqrt(estimate + remaining))
            previous_step = step
        previous = estimate
        w = op.adjoint(image)
        w_norm = float(np.linalg.norm(w))
        if w_norm == 0.0:
            return 0.0
        v = w / w_norm

    raise ConvergenceError(
        f"power iteration did not converge within {max_iter} iterations",
        last_value=float(np.sqrt(previous)),
        iterations=max_iter,
    )
