"""Tests for the self-check suite."""

from __future__ import annotations

import pytest

from phaseflow.checks import (
    CHECK_NAMES,
    FAULT_GRADIENT,
    CheckOptions,
    kaczmarz_nulling_residual,
    run_check_suite,
)
from phaseflow.const import KACZMARZ_NULL_TOL
from phaseflow.errors import InvalidParameterError
from phaseflow.measurement import MeasurementEnsemble
from phaseflow.rng import SeededRng


def test_gradient_check_passes() -> None:
    report = run_check_suite(CheckOptions(fd_only=True))
    assert report.passed
    assert [result.name for result in report.results] == ["fd_gradient"]
    details = report.results[0].details
    assert details["dimensions"] == [4, 8, 16]
    assert details["cases"] == 2 * 6 * 5


def test_injected_gradient_fault_is_caught() -> None:
    report = run_check_suite(CheckOptions(fd_only=True, fault=FAULT_GRADIENT))
    assert not report.passed
    assert report.failed == ["fd_gradient"]
    document = report.to_dict()
    assert document["passed"] is False
    assert document["checks"]["fd_gradient"]["max_relative_error"] > 1e-3


def test_default_resamples() -> None:
    assert CheckOptions().resamples == 200_000


def test_check_options_validation() -> None:
    with pytest.raises(InvalidParameterError):
        CheckOptions(fault="loss")
    with pytest.raises(InvalidParameterError):
        CheckOptions(eps=-0.1)
    with pytest.raises(InvalidParameterError):
        CheckOptions(resamples=0)


def test_kaczmarz_nulling_residual(row_ensemble: MeasurementEnsemble, rng: SeededRng) -> None:
    residual = kaczmarz_nulling_residual(
        row_ensemble, rng.complex_normal(row_ensemble.d), 200, SeededRng(4)
    )
    assert residual <= KACZMARZ_NULL_TOL


@pytest.mark.slow
def test_full_suite_passes() -> None:
    report = run_check_suite(CheckOptions(samples=500, kaczmarz_steps=2000, descent_iters=200))
    assert report.failed == []
    assert [result.name for result in report.results] == list(CHECK_NAMES)
