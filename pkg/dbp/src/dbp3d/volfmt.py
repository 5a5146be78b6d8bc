"""Readers and writers for the ect3d on-disk formats.

The refiner talks to the measurement toolkit only through files: one
line of JSON, then a little-endian raw payload.  This module implements
that contract directly so the two packages stay decoupled.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

_MAGIC = "ect3d"


class FormatError(RuntimeError):
    pass


def _read_header(fh) -> dict:
    line = fh.readline()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(f"unreadable header: {err}") from err
    if header.get("magic") != _MAGIC:
        raise FormatError("not an ect3d file")
    return header


def read_volume(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        if header.get("record") != "volume":
            raise FormatError(f"{path}: expected a volume record")
        data = np.frombuffer(fh.read(), dtype="<f4")
    shape = tuple(header["shape"])
    if data.size != int(np.prod(shape)):
        raise FormatError(f"{path}: payload does not match shape {shape}")
    return data.reshape(shape).astype(np.float32), header


def write_volume(path, values: np.ndarray, grid_hash: str | None = None) -> None:
    """Lumen-ordered float32 volume in the evaluator's .vol format."""
    values = np.asarray(values, dtype=np.float32)
    header = {
        "magic": _MAGIC,
        "version": 1,
        "record": "volume",
        "kind": "g",
        "order": "lumen",
        "shape": list(values.shape),
        "dtype": "<f4",
    }
    if grid_hash is not None:
        header["grid_hash"] = grid_hash
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(values.astype("<f4").tobytes())
    os.replace(tmp, path)


def read_sensitivity(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        if header.get("record") != "sensitivity":
            raise FormatError(f"{path}: expected a sensitivity record")
        data = np.frombuffer(fh.read(), dtype="<f4")
    shape = tuple(header["shape"])
    if data.size != shape[0] * shape[1]:
        raise FormatError(f"{path}: payload does not match shape {shape}")
    return data.reshape(shape).astype(np.float64), header


def read_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise FormatError(f"no manifest.json under {dataset_dir}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != 1:
        raise FormatError(f"unsupported format_version {manifest.get('format_version')}")
    return manifest


def read_lumen_mask(dataset_dir, manifest: dict) -> np.ndarray:
    shape = tuple(manifest["grid"]["shape"])
    raw = (Path(dataset_dir) / manifest["lumen_mask_file"]).read_bytes()
    mask = np.frombuffer(raw, dtype="u1").reshape(shape).astype(bool)
    return mask


def read_sample_arrays(dataset_dir, entry: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(clean, noisy, g_true) float32 arrays for one manifest entry."""
    base = Path(dataset_dir)
    cap = np.frombuffer((base / entry["cap_file"]).read_bytes(), dtype="<f4")
    vol = np.frombuffer((base / entry["vol_file"]).read_bytes(), dtype="<f4")
    m = cap.size // 2
    return cap[:m].copy(), cap[m:].copy(), vol.copy()
