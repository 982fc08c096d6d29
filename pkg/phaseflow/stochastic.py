"""Block sampling, the unbiased stochastic gradient and its moment constants."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .errors import InvalidParameterError
from .linalg import ComplexVector, RealVector
from .loss import LossSpec, block_gradient
from .measurement import MeasurementEnsemble
from .rng import SeededRng

__all__ = [
    "AbcConstants",
    "SamplingDistribution",
    "abc_constants",
    "sample_index_array",
    "sample_indices",
    "stochastic_gradient",
    "variance_reducing_distribution",
]

_LOGGER = logging.getLogger(__name__)

_SUM_TOL = 1e-12


@dataclass(frozen=True, slots=True)
class SamplingDistribution:
    """Probabilities ``p`` over the ``R`` blocks with precomputed prefix sums."""

    p: RealVector = field(repr=False)
    cumulative: RealVector = field(init=False, repr=False)

    def __post_init__(self) -> None:
        p = np.array(self.p, dtype=np.float64, copy=True)
        if p.ndim != 1 or p.size == 0:
            raise InvalidParameterError("sampling probabilities must be a non-empty vector")
        if not np.all(np.isfinite(p)):
            raise InvalidParameterError("sampling probabilities must be finite")
        if p.size == 1:
            if abs(p[0] - 1.0) > _SUM_TOL:
                raise InvalidParameterError(f"a single block must have p = 1, got {p[0]}")
        elif np.any(p <= 0) or np.any(p >= 1):
            raise InvalidParameterError("sampling probabilities must satisfy 0 < p_r < 1")
        if abs(float(np.sum(p)) - 1.0) > _SUM_TOL:
            raise InvalidParameterError(f"sampling probabilities sum to {np.sum(p)}, not 1")
        cumulative = np.cumsum(p)
        p.setflags(write=False)
        cumulative.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "cumulative", cumulative)

    @classmethod
    def uniform(cls, num_blocks: int) -> SamplingDistribution:
        if num_blocks < 1:
            raise InvalidParameterError(f"need at least one block, got {num_blocks}")
        return cls(np.full(num_blocks, 1.0 / num_blocks))

    @classmethod
    def from_weights(cls, weights: npt.ArrayLike) -> SamplingDistribution:
        """Normalise nonnegative weights into probabilities."""

        values = np.asarray(weights, dtype=np.float64)
        if values.ndim != 1 or values.size == 0 or np.any(values <= 0):
            raise InvalidParameterError("sampling weights must be a non-empty positive vector")
        return cls(values / np.sum(values))

    @property
    def num_blocks(self) -> int:
        return int(self.p.shape[0])

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.p, 1.0 / self.num_blocks, rtol=0.0, atol=_SUM_TOL))


@dataclass(frozen=True, slots=True)
class AbcConstants:
    """Constants of the bound ``E||g||^2 <= alpha (L - L_inf) + beta ||grad||^2 + delta``."""

    alpha: float
    beta: float
    delta_upper: float
    block_norms_sq: tuple[float, ...]

    def second_moment_bound(self, loss_gap: float, grad_norm_sq: float) -> float:
        return self.alpha * loss_gap + self.beta * grad_norm_sq + self.delta_upper


def _lookup(dist: SamplingDistribution, uniforms: npt.NDArray[np.float64]) -> npt.NDArray[np.intp]:
    indices = np.searchsorted(dist.cumulative, uniforms, side="right")
    return np.minimum(indices, dist.num_blocks - 1)


def sample_indices(dist: SamplingDistribution, k: int, rng: SeededRng) -> tuple[int, ...]:
    """Draw ``k`` block indices i.i.d. from ``dist`` with replacement."""

    if k < 1:
        raise InvalidParameterError(f"batch size K must be at least 1, got {k}")
    return tuple(int(r) for r in _lookup(dist, rng.random(k)))


def sample_index_array(
    dist: SamplingDistribution,
    n: int,
    k: int,
    rng: SeededRng,
) -> npt.NDArray[np.intp]:
    """Draw an ``(n, k)`` index array, same stream as ``n`` calls of :func:`sample_indices`."""

    if k < 1 or n < 1:
        raise InvalidParameterError(f"need n >= 1 and K >= 1, got n={n}, K={k}")
    return _lookup(dist, rng.random((n, k)))


def stochastic_gradient(
    ensemble: MeasurementEnsemble,
    z: ComplexVector,
    spec: LossSpec,
    indices: Sequence[int],
    dist: SamplingDistribution,
) -> ComplexVector:
    """Return ``(1/K) sum_k grad L_{eps, r_k}(z) / p_{r_k}``."""

    if not indices:
        raise InvalidParameterError("at least one sampled index is required")
    total = np.zeros(ensemble.d, dtype=np.complex128)
    for r in indices:
        total = total + block_gradient(ensemble, r, z, spec) / dist.p[r]
    return total / len(indices)


def abc_constants(
    ensemble: MeasurementEnsemble,
    k: int,
    dist: SamplingDistribution,
    inf_bound: float = 0.0,
    block_inf_bounds: Sequence[float] | None = None,
) -> AbcConstants:
    """Return ``alpha = max_r ||A_r||^2 / (K p_r)``, ``beta = 1 - 1/K`` and ``delta``.

    ``delta_upper`` is ``alpha`` times the gap between the supplied lower bound on the
    loss infimum and the sum of the supplied per-block bounds; both default to zero.
    """

    if k < 1:
        raise InvalidParameterError(f"batch size K must be at least 1, got {k}")
    if dist.num_blocks != ensemble.num_blocks:
        raise InvalidParameterError(
            f"distribution has {dist.num_blocks} entries for {ensemble.num_blocks} blocks"
        )
    norms_sq = ensemble.block_norms_sq
    alpha = max(n / p for n, p in zip(norms_sq, dist.p, strict=True)) / k
    beta = 1.0 - 1.0 / k
    block_sum = float(sum(block_inf_bounds)) if block_inf_bounds is not None else 0.0
    gap = inf_bound - block_sum
    if gap < 0:
        _LOGGER.warning(
            "Per-block infimum bounds sum to %.6g, above the global bound %.6g; delta set to 0",
            block_sum,
            inf_bound,
        )
        gap = 0.0
    return AbcConstants(
        alpha=float(alpha),
        beta=beta,
        delta_upper=float(alpha * gap),
        block_norms_sq=tuple(norms_sq),
    )


def variance_reducing_distribution(ensemble: MeasurementEnsemble) -> SamplingDistribution:
    """Return ``p_r`` proportional to ``||A_r||^2``.

    For single-row blocks this is ``||a_r||^2 / ||A||_F^2``; for general blocks it
    equalises ``||A_r||^2 / p_r`` and therefore minimises ``alpha``.
    """

    norms_sq = np.asarray(ensemble.block_norms_sq, dtype=np.float64)
    zero = np.flatnonzero(norms_sq <= 0)
    if zero.size:
        raise InvalidParameterError(f"blocks {zero.tolist()} have zero norm and cannot be sampled")
    return SamplingDistribution.from_weights(norms_sq)
