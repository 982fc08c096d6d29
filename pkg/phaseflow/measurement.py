"""Block-partitioned measurement ensembles and the intensity forward model."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numpy.typing as npt

from .const import (
    NOISE_GAUSSIAN,
    NOISE_NONE,
    NOISE_POISSON,
    NOISE_STREAM_TAG,
    WINDOW_BOX,
    WINDOW_GAUSSIAN,
    WINDOW_ONES,
    WINDOW_RANDOM,
)
from .errors import DimensionMismatchError, InvalidParameterError
from .linalg import (
    ComplexMatrix,
    ComplexVector,
    DenseOperator,
    RealVector,
    as_vector,
    check_length,
    circular_shift,
    dft,
    dft_matrix,
    idft,
    spectral_norm,
)
from .rng import SeededRng

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class DenseBlock:
    """A block given by an explicit ``m_r x d`` matrix."""

    operator: DenseOperator

    @property
    def rows(self) -> int:
        return self.operator.rows

    @property
    def cols(self) -> int:
        return self.operator.cols

    def apply(self, z: ComplexVector) -> ComplexVector:
        return self.operator.apply(z)

    def adjoint(self, u: ComplexVector) -> ComplexVector:
        return self.operator.adjoint(u)

    def to_dense(self) -> ComplexMatrix:
        return self.operator.matrix

    @property
    def norm_sq(self) -> float:
        if self.rows == 1:
            return float(np.sum(np.abs(self.operator.matrix) ** 2))
        return spectral_norm(self) ** 2


@dataclass(frozen=True, slots=True)
class StftBlock:
    """One diffraction pattern: ``z -> F (S_s w o z)``."""

    window: ComplexVector = field(repr=False)
    shift: int
    shifted_window: ComplexVector = field(init=False, repr=False)

    def __post_init__(self) -> None:
        window = as_vector(self.window, name="window")
        d = window.shape[0]
        shift = int(self.shift) % d
        shifted = circular_shift(window, shift)
        shifted.setflags(write=False)
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "shifted_window", shifted)

    @property
    def rows(self) -> int:
        return int(self.window.shape[0])

    @property
    def cols(self) -> int:
        return int(self.window.shape[0])

    def exit_wave(self, z: ComplexVector) -> ComplexVector:
        """Return the windowed object ``S_s w o z``."""

        check_length(z, self.cols, name="z")
        return self.shifted_window * z

    def apply(self, z: ComplexVector) -> ComplexVector:
        return dft(self.exit_wave(z))

    def adjoint(self, u: ComplexVector) -> ComplexVector:
        check_length(u, self.rows, name="u")
        # F^* = d F^{-1}
        return np.conj(self.shifted_window) * (self.rows * idft(u))

    def to_dense(self) -> ComplexMatrix:
        return dft_matrix(self.cols) * self.shifted_window[np.newaxis, :]

    @property
    def norm_sq(self) -> float:
        """Closed form ``||A_r||^2 = d ||w||_inf^2``."""

        return float(self.cols * np.max(np.abs(self.window)) ** 2)


Block = DenseBlock | StftBlock


def apply_block(block: Block, z: ComplexVector) -> ComplexVector:
    """Return ``A_r z``."""

    return block.apply(z)


def adjoint_block(block: Block, u: ComplexVector) -> ComplexVector:
    """Return ``A_r^* u``."""

    return block.adjoint(u)


@dataclass(frozen=True, slots=True)
class NoiseSpec:
    """Perturbation added to simulated intensities.

    ``gaussian`` adds ``sigma * N(0, 1)`` per entry and may yield negative intensities.
    ``poisson`` replaces ``|Ax|^2`` by ``Poisson(scale |Ax|^2) / scale``.
    """

    kind: str = NOISE_NONE
    sigma: float = 0.0
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (NOISE_NONE, NOISE_GAUSSIAN, NOISE_POISSON):
            raise InvalidParameterError(f"unknown noise kind {self.kind!r}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise InvalidParameterError(f"noise sigma must be finite and >= 0, got {self.sigma}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise InvalidParameterError(f"noise scale must be finite and > 0, got {self.scale}")

    @property
    def is_noiseless(self) -> bool:
        return self.kind == NOISE_NONE or (self.kind == NOISE_GAUSSIAN and self.sigma == 0.0)


@dataclass(frozen=True, eq=False)
class MeasurementEnsemble:
    """Stacked operator ``A = [A_1; ...; A_R]`` with optional measurements ``y^r``.

    Norms are computed on first use and cached on the instance.
    """

    blocks: tuple[Block, ...]
    d: int
    measurements: tuple[RealVector, ...] | None = None
    signal: ComplexVector | None = None

    def __post_init__(self) -> None:
        if not self.blocks:
            raise InvalidParameterError("an ensemble needs at least one block")
        for index, block in enumerate(self.blocks):
            if block.cols != self.d:
                raise DimensionMismatchError(
                    f"block {index} acts on C^{block.cols}, ensemble dimension is {self.d}"
                )
        if self.measurements is not None:
            if len(self.measurements) != len(self.blocks):
                raise DimensionMismatchError(
                    f"{len(self.measurements)} measurement vectors for {len(self.blocks)} blocks"
                )
            frozen: list[RealVector] = []
            for index, (block, y_r) in enumerate(zip(self.blocks, self.measurements, strict=True)):
                values = np.array(y_r, dtype=np.float64, copy=True)
                check_length(values, block.rows, name=f"y[{index}]")
                if not np.all(np.isfinite(values)):
                    raise InvalidParameterError(f"y[{index}] contains NaN or Inf entries")
                values.setflags(write=False)
                frozen.append(values)
            object.__setattr__(self, "measurements", tuple(frozen))
        if self.signal is not None:
            signal = as_vector(self.signal, name="signal")
            check_length(signal, self.d, name="signal")
            object.__setattr__(self, "signal", signal)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def rows(self) -> int:
        return sum(block.rows for block in self.blocks)

    @property
    def cols(self) -> int:
        return self.d

    @property
    def y(self) -> tuple[RealVector, ...]:
        """Return the measurements, raising when :func:`simulate` has not run."""

        if self.measurements is None:
            raise InvalidParameterError("ensemble has no measurements; call simulate() first")
        return self.measurements

    @property
    def is_stft(self) -> bool:
        return all(isinstance(block, StftBlock) for block in self.blocks)

    @property
    def is_row_partition(self) -> bool:
        return all(isinstance(block, DenseBlock) and block.rows == 1 for block in self.blocks)

    @property
    def window(self) -> ComplexVector:
        """Return the shared STFT window."""

        first = self.blocks[0]
        if not self.is_stft or not isinstance(first, StftBlock):
            raise InvalidParameterError("ensemble is not an STFT ensemble")
        return first.window

    @property
    def shifts(self) -> tuple[int, ...]:
        return tuple(block.shift for block in self.blocks if isinstance(block, StftBlock))

    def apply(self, z: ComplexVector) -> ComplexVector:
        check_length(z, self.d, name="z")
        return np.concatenate([block.apply(z) for block in self.blocks])

    def adjoint(self, u: ComplexVector) -> ComplexVector:
        check_length(u, self.rows, name="u")
        total = np.zeros(self.d, dtype=np.complex128)
        offset = 0
        for block in self.blocks:
            total = total + block.adjoint(u[offset : offset + block.rows])
            offset += block.rows
        return total

    @cached_property
    def normal_diagonal(self) -> RealVector:
        """Diagonal of ``A^* A = d sum_r diag(|S_{s_r} w|^2)`` for an STFT ensemble."""

        if not self.is_stft:
            raise InvalidParameterError("A^* A is only diagonal for STFT ensembles")
        total = np.zeros(self.d, dtype=np.float64)
        for block in self.blocks:
            if isinstance(block, StftBlock):
                total += np.abs(block.shifted_window) ** 2
        diagonal = self.d * total
        diagonal.setflags(write=False)
        return diagonal

    @cached_property
    def norm(self) -> float:
        """``||A||``: closed form for STFT ensembles, power iteration otherwise."""

        if self.is_stft:
            value = float(np.sqrt(np.max(self.normal_diagonal)))
        else:
            value = spectral_norm(self)
        _LOGGER.info("Spectral norm of %d-block ensemble: %.6g", self.num_blocks, value)
        return value

    @cached_property
    def frobenius_norm(self) -> float:
        total = 0.0
        for block in self.blocks:
            if isinstance(block, StftBlock):
                # ||F diag(S_s w)||_F^2 = d ||w||_2^2
                total += block.cols * float(np.sum(np.abs(block.window) ** 2))
            else:
                total += float(np.sum(np.abs(block.operator.matrix) ** 2))
        return float(np.sqrt(total))

    @cached_property
    def block_norms_sq(self) -> tuple[float, ...]:
        """``||A_r||^2`` for every block."""

        return tuple(block.norm_sq for block in self.blocks)

    def to_dense(self) -> ComplexMatrix:
        return np.vstack([block.to_dense() for block in self.blocks])

    def stacked_measurements(self) -> RealVector:
        return np.concatenate(self.y)

    def with_measurements(
        self,
        measurements: Sequence[npt.ArrayLike],
        signal: ComplexVector | None = None,
    ) -> MeasurementEnsemble:
        """Return a copy carrying new measurements (and optionally the true signal)."""

        return dataclasses.replace(
            self,
            measurements=tuple(np.asarray(y_r, dtype=np.float64) for y_r in measurements),
            signal=signal if signal is not None else self.signal,
        )


def build_stft_ensemble(w: npt.ArrayLike, shifts: Sequence[int]) -> MeasurementEnsemble:
    """Build one STFT block per shift, in the given order."""

    window = as_vector(w, name="window")
    d = window.shape[0]
    if not np.any(window != 0):
        raise InvalidParameterError("window must not be identically zero")
    if not 1 <= len(shifts) <= d:
        raise InvalidParameterError(f"need between 1 and {d} shifts, got {len(shifts)}")
    reduced = [int(s) % d for s in shifts]
    if len(set(reduced)) != len(reduced):
        raise InvalidParameterError(f"shifts must be pairwise distinct modulo {d}: {list(shifts)}")
    return MeasurementEnsemble(
        blocks=tuple(StftBlock(window, s) for s in reduced),
        d=d,
    )


def build_dense_ensemble(
    op: DenseOperator,
    block_rows: Sequence[int] | None = None,
) -> MeasurementEnsemble:
    """Split ``op`` into contiguous row blocks of the given sizes (one row each by default)."""

    sizes = list(block_rows) if block_rows is not None else [1] * op.rows
    if any(size < 1 for size in sizes) or sum(sizes) != op.rows:
        raise InvalidParameterError(
            f"block sizes {sizes} do not partition the {op.rows} rows of the operator"
        )
    blocks: list[Block] = []
    start = 0
    for size in sizes:
        blocks.append(DenseBlock(DenseOperator(op.matrix[start : start + size])))
        start += size
    return MeasurementEnsemble(blocks=tuple(blocks), d=op.cols)


def partition_rows(op: DenseOperator) -> MeasurementEnsemble:
    """Return the Kaczmarz partition: one single-row block per row of ``op``."""

    return build_dense_ensemble(op)


def simulate(
    ensemble: MeasurementEnsemble,
    x: npt.ArrayLike,
    noise: NoiseSpec | None = None,
) -> MeasurementEnsemble:
    """Return ``ensemble`` with ``y^r = |A_r x|^2 + n^r`` filled in."""

    noise = noise or NoiseSpec()
    signal = as_vector(x, name="x")
    check_length(signal, ensemble.d, name="x")
    clean = [np.abs(block.apply(signal)) ** 2 for block in ensemble.blocks]
    if noise.is_noiseless:
        return ensemble.with_measurements(clean, signal=signal)

    rng = SeededRng(noise.seed, NOISE_STREAM_TAG)
    noisy: list[RealVector] = []
    for intensity in clean:
        if noise.kind == NOISE_GAUSSIAN:
            noisy.append(intensity + noise.sigma * rng.standard_normal(intensity.shape[0]))
        else:
            counts = rng.poisson(noise.scale * intensity)
            noisy.append(counts.astype(np.float64) / noise.scale)
    negatives = sum(int(np.sum(y_r < 0)) for y_r in noisy)
    if negatives:
        _LOGGER.debug("Noise produced %d negative intensities", negatives)
    return ensemble.with_measurements(noisy, signal=signal)


def window(
    kind: str,
    d: int,
    *,
    width: float = 1.0,
    rng: SeededRng | None = None,
) -> ComplexVector:
    """Return a probe window of length ``d``.

    ``gaussian`` is a bump of the given width centred at index 0 (circularly),
    ``box`` is ones on the first ``width`` entries.
    """

    if d < 1:
        raise InvalidParameterError(f"window length must be positive, got {d}")
    if kind == WINDOW_GAUSSIAN:
        if width <= 0:
            raise InvalidParameterError(f"gaussian width must be positive, got {width}")
        index = np.arange(d)
        distance = np.minimum(index, d - index).astype(np.float64)
        values: npt.NDArray[np.complex128] = np.exp(-(distance**2) / (2.0 * width**2)).astype(
            np.complex128
        )
    elif kind == WINDOW_BOX:
        length = int(width)
        if not 1 <= length <= d:
            raise InvalidParameterError(f"box width must lie in [1, {d}], got {width}")
        values = np.zeros(d, dtype=np.complex128)
        values[:length] = 1.0
    elif kind == WINDOW_ONES:
        values = np.ones(d, dtype=np.complex128)
    elif kind == WINDOW_RANDOM:
        if rng is None:
            raise InvalidParameterError("a random window needs a SeededRng")
        values = rng.complex_normal(d)
    else:
        raise InvalidParameterError(f"unknown window kind {kind!r}")
    return as_vector(values, name="window")


def evenly_spaced_shifts(d: int, num_shifts: int) -> list[int]:
    """Return ``num_shifts`` distinct shifts spread evenly over ``0..d-1``."""

    if not 1 <= num_shifts <= d:
        raise InvalidParameterError(f"need between 1 and {d} shifts, got {num_shifts}")
    return [r * d // num_shifts for r in range(num_shifts)]


def random_dense_operator(m: int, d: int, rng: SeededRng) -> DenseOperator:
    """Complex Gaussian ``m x d`` matrix with unit-variance entries."""

    if m < 1 or d < 1:
        raise InvalidParameterError(f"matrix shape must be positive, got {m}x{d}")
    return DenseOperator(rng.complex_normal((m, d)))


def random_signal(d: int, rng: SeededRng, *, scale: float = 1.0) -> ComplexVector:
    """Complex Gaussian vector in ``C^d``."""

    if d < 1:
        raise InvalidParameterError(f"signal length must be positive, got {d}")
    return as_vector(scale * rng.complex_normal(d), name="signal")
