"""Tests for the seeded random streams."""

from __future__ import annotations

import numpy as np

import phaseflow
from phaseflow import stochastic
from phaseflow.rng import SeededRng


def test_same_key_same_sequence() -> None:
    first = SeededRng(42, 3).complex_normal(16)
    np.testing.assert_array_equal(first, SeededRng(42, 3).complex_normal(16))
    assert not np.array_equal(first, SeededRng(42, 4).complex_normal(16))
    assert not np.array_equal(first, SeededRng(43, 3).complex_normal(16))


def test_trial_streams_are_distinct() -> None:
    streams = {
        SeededRng.for_trial(7, config, trial).stream for config in range(3) for trial in range(4)
    }
    streams |= {SeededRng.for_init(7, trial).stream for trial in range(4)}
    assert len(streams) == 16
    assert SeededRng.for_trial(7, 1, 2).seed == 7


def test_init_stream_is_shared_across_configurations() -> None:
    np.testing.assert_array_equal(
        SeededRng.for_init(5, 1).complex_normal(4), SeededRng.for_init(5, 1).complex_normal(4)
    )


def test_unit_phase_has_unit_modulus() -> None:
    rng = SeededRng(0)
    assert all(abs(abs(rng.unit_phase()) - 1.0) <= 1e-15 for _ in range(20))


def test_complex_normal_variance() -> None:
    draws = SeededRng(9).complex_normal(20_000)
    assert abs(float(np.mean(np.abs(draws) ** 2)) - 1.0) < 0.05


def test_package_exports_rng_from_its_own_module() -> None:
    assert phaseflow.SeededRng is SeededRng
    assert "SeededRng" not in stochastic.__all__
