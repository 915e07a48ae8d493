"""Deterministic file helpers: raw arrays, canonical JSON, provenance."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import LoadError


def read_f32(path: str | Path, shape: tuple[int, ...]) -> np.ndarray:
    """Little-endian float32 array with a hard size check."""
    path = Path(path)
    expected = int(np.prod(shape))
    try:
        data = np.fromfile(path, dtype="<f4")
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    if data.size != expected:
        raise LoadError(
            f"{path}: expected {expected} float32 values for shape {shape}, found {data.size}"
        )
    return data.reshape(shape).astype(np.float64)


def write_f32(path: str | Path, array: np.ndarray) -> None:
    np.ascontiguousarray(array, dtype="<f4").tofile(path)


def read_u32(path: str | Path, shape: tuple[int, ...]) -> np.ndarray:
    path = Path(path)
    expected = int(np.prod(shape))
    try:
        data = np.fromfile(path, dtype="<u4")
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    if data.size != expected:
        raise LoadError(
            f"{path}: expected {expected} uint32 values for shape {shape}, found {data.size}"
        )
    return data.reshape(shape).astype(np.int64)


def write_u32(path: str | Path, array: np.ndarray) -> None:
    np.ascontiguousarray(array, dtype="<u4").tofile(path)


def canonical_json(obj) -> str:
    """Stable rendering: sorted keys, fixed separators, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(canonical_json(obj) + "\n")


def read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON: {exc}") from exc


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_provenance(path: str | Path, seed: int | None, config: dict) -> None:
    """Sidecar with the config hash, seed and tool version (no timestamps,
    outputs must be byte-identical across reruns)."""
    record = {
        "tool": "uvbody",
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash(config),
        "config": config,
    }
    write_json(path, record)
