"""Counter-based random streams for reproducible Monte-Carlo runs."""

from __future__ import annotations

import numpy as np
import numpy.typing as npt

from .const import INIT_STREAM_TAG, RNG_ALGORITHM, TRIAL_INDEX_BITS, U64_MASK


class SeededRng:
    """Philox generator keyed by ``(seed, stream)``.

    Two instances with the same seed and stream produce the same sequence on every
    platform. Independent trials use distinct stream ids instead of consecutive seeds.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int, stream: int = 0) -> None:
        self.seed = int(seed) & U64_MASK
        self.stream = int(stream) & U64_MASK
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream})"

    @classmethod
    def for_trial(cls, base_seed: int, config_index: int, trial_index: int) -> SeededRng:
        """Return the sampling stream for one trial of one solver configuration."""

        return cls(base_seed, (config_index << TRIAL_INDEX_BITS) | trial_index)

    @classmethod
    def for_init(cls, base_seed: int, trial_index: int) -> SeededRng:
        """Return the start-point stream of a trial, shared by every configuration."""

        return cls(base_seed, INIT_STREAM_TAG | trial_index)

    def random(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        """Uniform draws on ``[0, 1)``."""

        return self.generator.random(size)

    def standard_normal(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        return self.generator.standard_normal(size)

    def complex_normal(self, size: int | tuple[int, ...]) -> npt.NDArray[np.complex128]:
        """Circular complex Gaussian draws with unit variance."""

        real = self.generator.standard_normal(size)
        imag = self.generator.standard_normal(size)
        return (real + 1j * imag) / np.sqrt(2.0)

    def poisson(self, lam: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
        return self.generator.poisson(lam)

    def unit_phase(self) -> complex:
        """Return ``exp(i phi)`` with ``phi`` uniform on ``[0, 2 pi)``."""

        return complex(np.exp(2j * np.pi * self.generator.random()))
