"""Tests for the ``phaseflow`` command line."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import colorlog
import pytest

from phaseflow.cli import main
from phaseflow.const import (
    CHECK_REPORT_FILENAME,
    ENSEMBLE_FILENAME,
    EXIT_CHECK_FAILURE,
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_ABORT,
    EXIT_OK,
    MANIFEST_FILENAME,
    SUMMARY_FILENAME,
)

SMALL_STFT = ["--set", "instance.d=8", "--set", "instance.window_width=2"]
SMALL_ROWS = ["--set", "instance.kind=dense", "--set", "instance.d=4", "--set", "instance.rows=16"]


@pytest.fixture(autouse=True)
def _drop_cli_log_handlers() -> Iterator[None]:
    """Remove the colored stderr handler ``main`` installs on the root logger."""

    yield
    for handler in list(logging.root.handlers):
        if isinstance(handler.formatter, colorlog.ColoredFormatter):
            logging.root.removeHandler(handler)


def _simulate(out: Path, *extra: str) -> None:
    assert main(["simulate", "--out", str(out), *extra]) == EXIT_OK


def _summary(out: Path) -> dict[str, Any]:
    return json.loads((out / SUMMARY_FILENAME).read_text(encoding="utf-8"))


def test_simulate_writes_ensemble_and_manifest(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    _simulate(tmp_path, *SMALL_STFT)
    lines = capsys.readouterr().out.splitlines()
    assert "d=8" in lines
    assert "R=4" in lines
    assert "m=32" in lines
    assert "loss_at_signal=0" in lines
    manifest = json.loads((tmp_path / MANIFEST_FILENAME).read_text(encoding="utf-8"))
    assert manifest["command"] == "simulate"
    assert len(manifest["config_hash"]) == 64
    assert manifest["outputs"] == [str(tmp_path / ENSEMBLE_FILENAME)]


def test_simulate_is_deterministic(tmp_path: Path) -> None:
    _simulate(tmp_path / "a", *SMALL_STFT, "--seed", "4")
    _simulate(tmp_path / "b", *SMALL_STFT, "--seed", "4")
    first = (tmp_path / "a" / ENSEMBLE_FILENAME).read_bytes()
    assert first == (tmp_path / "b" / ENSEMBLE_FILENAME).read_bytes()


def test_invalid_override_exits_with_config_error(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(["simulate", "--out", str(tmp_path), "--set", "instance.d=0"])
    assert code == EXIT_CONFIG_ERROR
    assert "config error at instance.d" in capsys.readouterr().err


def test_malformed_override_is_rejected(tmp_path: Path) -> None:
    assert main(["simulate", "--out", str(tmp_path), "--set", "instance.d"]) == EXIT_CONFIG_ERROR


def test_solve_af_with_automatic_step(tmp_path: Path) -> None:
    """``--mu auto`` gives AF the step ``1/||A||^2``, under which every step descends."""

    _simulate(tmp_path, *SMALL_STFT)
    assert main(["solve", "--out", str(tmp_path), "--algo", "af", "--iters", "40"]) == EXIT_OK
    summary = _summary(tmp_path)
    entry = summary["configs"]["af"]
    norm = summary["ensemble"]["norm"]
    assert entry["mu_auto"] is True
    assert entry["schedule"]["mu"] == pytest.approx(1.0 / norm**2)
    assert entry["descent"]["passed"] is True
    assert entry["warnings"] == []
    assert (tmp_path / "af.csv").is_file()
    assert summary["aborted"] == []


def test_solve_pie_with_constant_step_warns(tmp_path: Path) -> None:
    _simulate(tmp_path, *SMALL_STFT)
    args = ["solve", "--out", str(tmp_path), "--algo", "pie", "--iters", "20", "--trials", "2"]
    assert main(args) == EXIT_OK
    entry = _summary(tmp_path)["configs"]["pie"]
    assert entry["schedule"] == {"kind": "constant", "mu": 0.05, "theta": None}
    assert any("constant alpha" in warning for warning in entry["warnings"])
    assert entry["equivalent_saf_step"] > 0


def test_solve_kaczmarz_reports_nulling(tmp_path: Path) -> None:
    _simulate(tmp_path, *SMALL_ROWS)
    assert main(["solve", "--out", str(tmp_path), "--algo", "kaczmarz", "--iters", "50"]) == 0
    entry = _summary(tmp_path)["configs"]["kaczmarz"]
    assert entry["sampling"] == "variance_reducing"
    assert entry["kaczmarz_nulling"]["passed"] is True


def test_kaczmarz_on_stft_is_a_config_error(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    _simulate(tmp_path, *SMALL_STFT)
    code = main(["solve", "--out", str(tmp_path), "--algo", "kaczmarz", "--iters", "5"])
    assert code == EXIT_CONFIG_ERROR
    assert "config error at solver.algo" in capsys.readouterr().err


def test_solve_without_ensemble(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["solve", "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR
    assert "run simulate first" in capsys.readouterr().err


def test_divergent_solve_exits_with_numerical_abort(tmp_path: Path) -> None:
    """Aborted trials are listed in the summary and their partial traces written."""

    _simulate(tmp_path, *SMALL_STFT)
    args = ["solve", "--out", str(tmp_path), "--algo", "af", "--mu", "1e6", "--iters", "500"]
    assert main(args) == EXIT_NUMERICAL_ABORT
    summary = _summary(tmp_path)
    assert [item["trial"] for item in summary["aborted"]] == [0]
    assert (tmp_path / "af.trial0.partial.csv").is_file()
    assert (tmp_path / MANIFEST_FILENAME).is_file()


def test_sweep_runs_every_solver(tmp_path: Path) -> None:
    config = tmp_path / "sweep.json"
    config.write_text(
        json.dumps(
            {
                "output": str(tmp_path / "out"),
                "instance": {"d": 8, "window_width": 2.0},
                "solvers": [
                    {"algo": "af"},
                    {"algo": "saf", "mu": 0.001, "theta": 0.25, "k": 2},
                ],
                "harness": {"trials": 2, "gamma": 0.5},
            }
        ),
        encoding="utf-8",
    )
    assert main(["simulate", "--config", str(config)]) == EXIT_OK
    assert main(["sweep", "--config", str(config), "--iters", "30"]) == EXIT_OK
    summary = _summary(tmp_path / "out")
    assert set(summary["configs"]) == {"00-af", "01-saf"}
    assert summary["configs"]["01-saf"]["iters"] == 30
    assert summary["configs"]["01-saf"]["schedule"]["kind"] == "polynomial"
    assert summary["trials"]["01-saf"] == {"used": 2, "failed": []}
    decaying = summary["configs"]["01-saf"]["budget"]
    assert set(decaying) == {"iterations", "c_sq", "gradient_bound"}
    assert decaying["c_sq"] > 0
    assert decaying["gradient_bound"] > 0
    assert summary["configs"]["00-af"]["budget"]["step_size"] > 0
    assert (tmp_path / "out" / "00-af.csv").is_file()


def test_check_gradient_only(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["check", "--out", str(tmp_path), "--fd"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ["fd_gradient: PASS"]
    report = json.loads((tmp_path / CHECK_REPORT_FILENAME).read_text(encoding="utf-8"))
    assert report["passed"] is True


def test_check_detects_injected_fault(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(["check", "--out", str(tmp_path), "--fd", "--fault", "gradient"])
    assert code == EXIT_CHECK_FAILURE
    captured = capsys.readouterr()
    assert "fd_gradient: FAIL" in captured.out
    assert "failed checks: fd_gradient" in captured.err
