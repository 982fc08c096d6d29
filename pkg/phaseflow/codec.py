"""JSON container for measurement ensembles.

Arrays are stored as base64 of their little-endian bytes (``<c16`` for complex data,
``<f8`` for intensities), which keeps the round trip bit exact.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from .const import BLOCK_TYPE_DENSE, BLOCK_TYPE_STFT, ENSEMBLE_FORMAT, ENSEMBLE_FORMAT_VERSION
from .errors import EnsembleFormatError, PhaseFlowError
from .linalg import DenseOperator
from .measurement import Block, DenseBlock, MeasurementEnsemble, StftBlock

_LOGGER = logging.getLogger(__name__)

_COMPLEX_DTYPE = np.dtype("<c16")
_REAL_DTYPE = np.dtype("<f8")


def _encode(values: npt.NDArray[Any], dtype: np.dtype[Any]) -> str:
    return base64.b64encode(np.ascontiguousarray(values, dtype=dtype).tobytes()).decode("ascii")


def _decode(text: Any, dtype: np.dtype[Any], *, what: str) -> npt.NDArray[Any]:
    if not isinstance(text, str):
        raise EnsembleFormatError(f"{what} must be a base64 string")
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as err:
        raise EnsembleFormatError(f"{what} is not valid base64") from err
    if len(raw) % dtype.itemsize:
        raise EnsembleFormatError(
            f"{what} has {len(raw)} bytes, not a multiple of {dtype.itemsize}"
        )
    return np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))


def ensemble_to_dict(ensemble: MeasurementEnsemble) -> dict[str, Any]:
    """Serialise ``ensemble`` into a JSON-compatible mapping."""

    window: str | None = None
    blocks: list[dict[str, Any]] = []
    for block in ensemble.blocks:
        if isinstance(block, StftBlock):
            encoded = _encode(block.window, _COMPLEX_DTYPE)
            if window is not None and window != encoded:
                raise EnsembleFormatError("STFT blocks with different windows cannot be encoded")
            window = encoded
            blocks.append({"type": BLOCK_TYPE_STFT, "shift": block.shift})
        else:
            blocks.append(
                {
                    "type": BLOCK_TYPE_DENSE,
                    "rows": block.rows,
                    "matrix": _encode(block.operator.matrix, _COMPLEX_DTYPE),
                }
            )

    document: dict[str, Any] = {
        "format": ENSEMBLE_FORMAT,
        "version": ENSEMBLE_FORMAT_VERSION,
        "d": ensemble.d,
        "window": window,
        "blocks": blocks,
        "y": (
            [_encode(y_r, _REAL_DTYPE) for y_r in ensemble.measurements]
            if ensemble.measurements is not None
            else None
        ),
    }
    if ensemble.signal is not None:
        document["signal"] = _encode(ensemble.signal, _COMPLEX_DTYPE)
    return document


def _decode_block(entry: Any, d: int, window: npt.NDArray[np.complex128] | None) -> Block:
    if not isinstance(entry, dict):
        raise EnsembleFormatError("every block entry must be an object")
    kind = entry.get("type")
    if kind == BLOCK_TYPE_STFT:
        if window is None:
            raise EnsembleFormatError("STFT block present but the document has no window")
        shift = entry.get("shift")
        if not isinstance(shift, int) or isinstance(shift, bool):
            raise EnsembleFormatError(f"STFT shift must be an integer, got {shift!r}")
        return StftBlock(window, shift)
    if kind == BLOCK_TYPE_DENSE:
        rows = entry.get("rows")
        if not isinstance(rows, int) or rows < 1:
            raise EnsembleFormatError(f"dense block rows must be a positive integer, got {rows!r}")
        flat = _decode(entry.get("matrix"), _COMPLEX_DTYPE, what="dense block matrix")
        if flat.size != rows * d:
            raise EnsembleFormatError(
                f"dense block matrix has {flat.size} entries, expected {rows}x{d}"
            )
        return DenseBlock(DenseOperator(flat.reshape(rows, d)))
    raise EnsembleFormatError(f"unknown block type {kind!r}")


def ensemble_from_dict(document: Any) -> MeasurementEnsemble:
    """Rebuild an ensemble from :func:`ensemble_to_dict` output."""

    if not isinstance(document, dict):
        raise EnsembleFormatError("ensemble document must be a JSON object")
    if document.get("format", ENSEMBLE_FORMAT) != ENSEMBLE_FORMAT:
        raise EnsembleFormatError(f"unexpected document format {document.get('format')!r}")
    version = document.get("version", ENSEMBLE_FORMAT_VERSION)
    if version != ENSEMBLE_FORMAT_VERSION:
        raise EnsembleFormatError(f"unsupported ensemble format version {version!r}")

    d = document.get("d")
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise EnsembleFormatError(f"'d' must be a positive integer, got {d!r}")
    raw_window = document.get("window")
    window = (
        _decode(raw_window, _COMPLEX_DTYPE, what="window") if raw_window is not None else None
    )
    if window is not None and window.size != d:
        raise EnsembleFormatError(f"window has {window.size} entries, expected {d}")

    raw_blocks = document.get("blocks")
    if not isinstance(raw_blocks, list) or not raw_blocks:
        raise EnsembleFormatError("'blocks' must be a non-empty list")

    try:
        blocks = tuple(_decode_block(entry, d, window) for entry in raw_blocks)
        raw_y = document.get("y")
        measurements = None
        if raw_y is not None:
            if not isinstance(raw_y, list):
                raise EnsembleFormatError("'y' must be a list or null")
            measurements = tuple(
                _decode(item, _REAL_DTYPE, what=f"y[{index}]") for index, item in enumerate(raw_y)
            )
        raw_signal = document.get("signal")
        signal = (
            _decode(raw_signal, _COMPLEX_DTYPE, what="signal") if raw_signal is not None else None
        )
        return MeasurementEnsemble(blocks=blocks, d=d, measurements=measurements, signal=signal)
    except EnsembleFormatError:
        raise
    except PhaseFlowError as err:
        raise EnsembleFormatError(f"ensemble document is inconsistent: {err}") from err


def save_ensemble(ensemble: MeasurementEnsemble, path: Path) -> None:
    """Write ``ensemble`` as JSON to ``path``."""

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(ensemble_to_dict(ensemble), indent=2) + "\n", encoding="utf-8")
    _LOGGER.info("Wrote ensemble with %d blocks to %s", ensemble.num_blocks, path)


def load_ensemble(path: Path) -> MeasurementEnsemble:
    """Read an ensemble previously written by :func:`save_ensemble`."""

    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise EnsembleFormatError(f"{path} is not valid JSON: {err}") from err
    return ensemble_from_dict(document)
