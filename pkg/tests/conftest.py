"""Pytest fixtures: small seeded instances shared by the phaseflow test modules."""

from __future__ import annotations

import numpy as np
import pytest

from phaseflow.const import INSTANCE_DENSE, INSTANCE_STFT
from phaseflow.harness import InstanceSpec, build_instance
from phaseflow.linalg import ComplexVector
from phaseflow.measurement import MeasurementEnsemble
from phaseflow.rng import SeededRng


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """Return ``||actual - expected|| / ||expected||``."""

    return float(np.linalg.norm(actual - expected) / max(np.linalg.norm(expected), 1e-300))


@pytest.fixture()
def rng() -> SeededRng:
    """Seeded stream for drawing test points."""

    return SeededRng(1234, 7)


@pytest.fixture()
def stft_instance() -> tuple[MeasurementEnsemble, ComplexVector]:
    """Noiseless STFT instance with ``d = 8`` and four shifts."""

    return build_instance(
        InstanceSpec(kind=INSTANCE_STFT, d=8, num_blocks=4, window_width=2.0, seed=3)
    )


@pytest.fixture()
def stft_ensemble(stft_instance: tuple[MeasurementEnsemble, ComplexVector]) -> MeasurementEnsemble:
    return stft_instance[0]


@pytest.fixture()
def row_instance() -> tuple[MeasurementEnsemble, ComplexVector]:
    """Noiseless dense instance split into single rows (``d = 6``, 24 rows)."""

    return build_instance(
        InstanceSpec(kind=INSTANCE_DENSE, d=6, rows=24, rows_per_block=1, seed=5)
    )


@pytest.fixture()
def row_ensemble(row_instance: tuple[MeasurementEnsemble, ComplexVector]) -> MeasurementEnsemble:
    return row_instance[0]


@pytest.fixture()
def block_ensemble() -> MeasurementEnsemble:
    """Noiseless dense instance split into four blocks of six rows."""

    ensemble, _ = build_instance(
        InstanceSpec(kind=INSTANCE_DENSE, d=6, rows=24, rows_per_block=6, seed=9)
    )
    return ensemble
