"""On-disk formats: JSON header + little-endian raw payload.

Every file starts with one line of JSON (UTF-8, '\\n'-terminated) that
names the record type, dtype, and shape, followed by the raw bytes.
Writes go to a temporary file and are renamed into place, so readers
never observe partial files.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError
from .geometry import VoxelGrid

_MAGIC = "ect3d"
FORMAT_VERSION = 1


def _atomic_write(path: Path, header: dict, payload: bytes) -> None:
    path = Path(path)
    header = {"magic": _MAGIC, "version": FORMAT_VERSION, **header}
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def _read_header(fh) -> dict:
    line = fh.readline()
    if not line:
        raise DatasetError("empty file")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DatasetError(f"unreadable header: {err}") from err
    if header.get("magic") != _MAGIC:
        raise DatasetError("not an ect3d file")
    return header


def write_volume(
    path,
    values: np.ndarray,
    kind: str,
    grid_hash: str | None = None,
    order: str = "lumen",
    time: float | None = None,
) -> None:
    """Write a volume (.vol): lumen-ordered vector or dense box, float32."""
    values = np.asarray(values)
    header = {
        "record": "volume",
        "kind": kind,
        "order": order,
        "shape": list(values.shape),
        "dtype": "<f4",
    }
    if grid_hash is not None:
        header["grid_hash"] = grid_hash
    if time is not None:
        header["time"] = time
    _atomic_write(Path(path), header, values.astype("<f4").tobytes())


def read_volume(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        if header.get("record") != "volume":
            raise DatasetError(f"{path}: expected a volume record, got {header.get('record')}")
        data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    shape = tuple(header["shape"])
    if data.size != int(np.prod(shape)):
        raise DatasetError(f"{path}: payload size {data.size} does not match shape {shape}")
    return data.reshape(shape), header


def write_sensitivity(path, sens) -> None:
    """Write a sensitivity matrix (.smat) with pair order and row scales."""
    header = {
        "record": "sensitivity",
        "shape": list(sens.matrix.shape),
        "dtype": "<f4",
        "pairs": [list(p) for p in sens.pairs],
        "grid_hash": sens.grid_hash,
        "row_scale": [float(x) for x in sens.row_scale],
    }
    _atomic_write(Path(path), header, sens.matrix.astype("<f4").tobytes())


def read_sensitivity(path):
    from .electrostatics import SensitivityMatrix

    with open(path, "rb") as fh:
        header = _read_header(fh)
        if header.get("record") != "sensitivity":
            raise DatasetError(f"{path}: expected a sensitivity record")
        data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    shape = tuple(header["shape"])
    if data.size != shape[0] * shape[1]:
        raise DatasetError(f"{path}: payload does not match shape {shape}")
    return SensitivityMatrix(
        matrix=data.reshape(shape),
        pairs=tuple(tuple(p) for p in header["pairs"]),
        grid_hash=header["grid_hash"],
        row_scale=np.array(header["row_scale"]),
    )


def write_frame_csv(path, frame) -> None:
    """Capacitance frame as CSV (electrode_i, electrode_j, value) for inspection."""
    lines = ["electrode_i,electrode_j,value"]
    for (i, j), value in zip(frame.pairs, frame.values):
        lines.append(f"{i},{j},{float(value)!r}")
    tmp = Path(path).with_name(Path(path).name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def write_frame(path, frame, grid_hash: str | None = None, extra: dict | None = None) -> None:
    """Capacitance frame as header + float32 payload."""
    header = {
        "record": "frame",
        "kind": frame.kind,
        "pairs": [list(p) for p in frame.pairs],
        "shape": [len(frame)],
        "dtype": "<f4",
    }
    if grid_hash:
        header["grid_hash"] = grid_hash
    if extra:
        header.update(extra)
    _atomic_write(Path(path), header, frame.values.astype("<f4").tobytes())


def read_frame(path):
    from .electrostatics import CapacitanceFrame

    with open(path, "rb") as fh:
        header = _read_header(fh)
        if header.get("record") != "frame":
            raise DatasetError(f"{path}: expected a frame record")
        data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    pairs = tuple(tuple(p) for p in header["pairs"])
    return CapacitanceFrame(values=data, kind=header["kind"], pairs=pairs), header


def write_grid(path, grid: VoxelGrid) -> None:
    """Grid export: descriptor header + region/electrode/shield uint8 payloads."""
    if grid.n_electrodes > 254:
        raise ConfigError("uint8 electrode export supports at most 254 electrodes")
    header = {
        "record": "grid",
        "descriptor": grid.descriptor(),
        "arrays": ["region", "electrode_plus_one", "shield"],
        "dtype": "u1",
    }
    payload = (
        grid.region.astype("u1").tobytes()
        + (grid.electrode_id.astype(np.int16) + 1).astype("u1").tobytes()
        + grid.shield.astype("u1").tobytes()
    )
    _atomic_write(Path(path), header, payload)
