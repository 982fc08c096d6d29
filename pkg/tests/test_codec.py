"""Tests for the JSON ensemble container."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from phaseflow.codec import ensemble_from_dict, ensemble_to_dict, load_ensemble, save_ensemble
from phaseflow.errors import EnsembleFormatError
from phaseflow.measurement import MeasurementEnsemble, StftBlock, build_stft_ensemble


def _assert_same(left: MeasurementEnsemble, right: MeasurementEnsemble) -> None:
    assert left.d == right.d
    assert left.num_blocks == right.num_blocks
    np.testing.assert_array_equal(left.to_dense(), right.to_dense())
    for y_left, y_right in zip(left.y, right.y, strict=True):
        assert y_left.tobytes() == y_right.tobytes()


def test_stft_ensemble_survives_save_and_load(
    stft_ensemble: MeasurementEnsemble, tmp_path: Path
) -> None:
    """Windows, shifts, intensities and the signal come back bit for bit."""

    path = tmp_path / "ensemble.json"
    save_ensemble(stft_ensemble, path)
    loaded = load_ensemble(path)
    _assert_same(stft_ensemble, loaded)
    assert loaded.shifts == stft_ensemble.shifts
    assert loaded.signal is not None and stft_ensemble.signal is not None
    assert loaded.signal.tobytes() == stft_ensemble.signal.tobytes()


def test_dense_blocks_survive_round_trip(block_ensemble: MeasurementEnsemble) -> None:
    loaded = ensemble_from_dict(json.loads(json.dumps(ensemble_to_dict(block_ensemble))))
    _assert_same(block_ensemble, loaded)
    assert [block.rows for block in loaded.blocks] == [6, 6, 6, 6]


def test_saving_twice_gives_identical_files(
    stft_ensemble: MeasurementEnsemble, tmp_path: Path
) -> None:
    save_ensemble(stft_ensemble, tmp_path / "a.json")
    save_ensemble(stft_ensemble, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_unmeasured_ensemble_encodes_null() -> None:
    ensemble = build_stft_ensemble(np.ones(4), [0, 2])
    document = ensemble_to_dict(ensemble)
    assert document["y"] is None
    assert ensemble_from_dict(document).measurements is None


def test_mixed_windows_are_rejected() -> None:
    blocks = (StftBlock(np.ones(4), 0), StftBlock(np.arange(1, 5), 1))
    with pytest.raises(EnsembleFormatError):
        ensemble_to_dict(MeasurementEnsemble(blocks=blocks, d=4))


@pytest.mark.parametrize(
    ("key", "value"),
    [
        ("format", "something.else"),
        ("version", 99),
        ("d", 0),
        ("window", "not base64!"),
        ("blocks", []),
        ("y", "nope"),
    ],
)
def test_malformed_documents_raise(
    stft_ensemble: MeasurementEnsemble, key: str, value: object
) -> None:
    document = ensemble_to_dict(stft_ensemble)
    document[key] = value
    with pytest.raises(EnsembleFormatError):
        ensemble_from_dict(document)


def test_inconsistent_documents_are_wrapped(stft_ensemble: MeasurementEnsemble) -> None:
    """Errors raised while rebuilding the ensemble surface as format errors."""

    document = ensemble_to_dict(stft_ensemble)
    document["y"] = document["y"][:-1]
    with pytest.raises(EnsembleFormatError):
        ensemble_from_dict(document)
    document = ensemble_to_dict(stft_ensemble)
    document["blocks"][0]["type"] = "sparse"
    with pytest.raises(EnsembleFormatError):
        ensemble_from_dict(document)


def test_load_rejects_invalid_json(tmp_path: Path) -> None:
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(EnsembleFormatError):
        load_ensemble(path)
