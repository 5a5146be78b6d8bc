"""Synthetic dataset generation: working conditions, noise, on-disk layout.

A dataset directory holds ``manifest.json``, a ``lumen_mask.u8`` raw
mask that maps lumen vectors back into the box grid, and per-sample
payloads: ``cap_XXXXXX.f32`` (66 clean then 66 noisy normalized
capacitances, little-endian float32) and ``vol_XXXXXX.f32`` (the
lumen-ordered ground-truth normalized permittivity g = 1 - phi).
Everything is deterministic for fixed seeds, so regeneration is
byte-identical and suitable for integrity checking by hash.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import GAS_VELOCITY_RANGE, LIQUID_VELOCITY_RANGE
from .electrostatics import (
    CapacitanceFrame,
    calibration_frames,
    measure_frame,
    normalize_frame,
)
from .errors import ConfigError, DatasetError, SimulationError, SolverError
from .flow import FlowConditions, FluidProperties, phase_to_permittivity, simulate_flow
from .geometry import VoxelGrid

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian measurement noise at a target per-frame SNR."""

    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if not self.snr_db > 0:
            raise ConfigError("snr_db must be positive")


@dataclass(frozen=True)
class DatasetSample:
    """One loaded sample: measurements plus ground truth."""

    sample_id: int
    condition_id: str
    frame_time: float
    snr_db: float
    capacitance_clean: np.ndarray
    capacitance_noisy: np.ndarray
    g_true: np.ndarray


def add_noise(frame: CapacitanceFrame, spec: NoiseSpec) -> CapacitanceFrame:
    """Zero-mean Gaussian noise scaled so 20*log10(|signal|/|noise|) targets snr_db.

    The per-entry variance is |signal|^2 / (M * 10^(snr/10)); an all-zero
    frame has no defined signal power and is returned unchanged.
    Deterministic for a fixed seed.
    """
    if frame.kind != "normalized":
        raise ConfigError("noise is injected into normalized frames")
    power = float(np.sum(frame.values**2))
    if power == 0.0:
        return CapacitanceFrame(values=frame.values.copy(), kind=frame.kind, pairs=frame.pairs)
    # 10**(-snr/20) underflows to zero for huge SNR, giving the identity limit
    sigma = np.sqrt(power / len(frame)) * 10.0 ** (-spec.snr_db / 20.0)
    rng = np.random.default_rng(spec.seed)
    noisy = frame.values + rng.normal(0.0, sigma, size=len(frame))
    return CapacitanceFrame(values=noisy, kind=frame.kind, pairs=frame.pairs)


def sample_conditions(
    gas_range: tuple[float, float] = GAS_VELOCITY_RANGE,
    liquid_range: tuple[float, float] = LIQUID_VELOCITY_RANGE,
    count: int = 60,
    seed: int = 0,
    duration: float = 1.0,
    output_interval: float = 0.1,
    inlet_fluctuation: float = 0.0,
    admissible_gas: tuple[float, float] = GAS_VELOCITY_RANGE,
    admissible_liquid: tuple[float, float] = LIQUID_VELOCITY_RANGE,
) -> list[FlowConditions]:
    """Deterministic stratified (Latin hypercube) sampling of the velocity box.

    Gas strata are visited in order while the liquid strata are paired
    through a seeded permutation; samples sit at stratum centers, so
    count=1 yields the rectangle center.  Initial fills alternate.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    for name, (lo, hi) in (("gas", gas_range), ("liquid", liquid_range)):
        if lo > hi:
            raise ConfigError(f"inverted {name} velocity range ({lo}, {hi})")
    for name, (lo, hi), (alo, ahi) in (
        ("gas", gas_range, admissible_gas),
        ("liquid", liquid_range, admissible_liquid),
    ):
        if lo < alo - 1e-12 or hi > ahi + 1e-12:
            raise ConfigError(
                f"{name} range ({lo}, {hi}) outside the admissible envelope ({alo}, {ahi})"
            )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(count)
    conditions = []
    for i in range(count):
        gas = gas_range[0] + (i + 0.5) / count * (gas_range[1] - gas_range[0])
        liq = liquid_range[0] + (perm[i] + 0.5) / count * (liquid_range[1] - liquid_range[0])
        conditions.append(
            FlowConditions(
                inlet_gas_velocity=float(gas),
                inlet_liquid_velocity=float(liq),
                initial_fill="liquid" if i % 2 == 0 else "gas",
                duration=duration,
                output_interval=output_interval,
                inlet_fluctuation=inlet_fluctuation,
            )
        )
    return conditions


def _derived_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0])


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_raw(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _compute_condition(args) -> dict:
    """One condition's frames: simulate, measure, normalize (worker-safe)."""
    grid, props, cond, cond_id, cond_seed, v_exc, c_low, c_high = args
    try:
        snapshots = simulate_flow(grid, props, cond, seed=cond_seed)
    except (SimulationError, SolverError) as err:
        return {"condition_id": cond_id, "error": str(err), "frames": []}
    frames = []
    errors = []
    for fi, (t, phi) in enumerate(snapshots):
        perm = phase_to_permittivity(phi, grid, props)
        try:
            raw = measure_frame(grid, perm, v_exc=v_exc)
        except SolverError as err:
            errors.append({"condition_id": cond_id, "frame_index": fi, "error": str(err)})
            continue
        clean = normalize_frame(raw, c_low, c_high)
        g_true = np.clip(1.0 - grid.extract_lumen(phi), 0.0, 1.0)
        frames.append({"frame_index": fi, "time": t, "clean": clean.values, "g": g_true})
    return {"condition_id": cond_id, "frames": frames, "frame_errors": errors}


def generate_dataset(
    grid: VoxelGrid,
    props: FluidProperties,
    conditions: list[FlowConditions],
    noise_specs: list[NoiseSpec],
    out_path,
    seed: int = 0,
    v_exc: float = 1.0,
    jobs: int = 1,
    progress=None,
) -> dict:
    """Simulate every condition, measure every snapshot, write the dataset.

    Per snapshot: mixture permittivity -> raw frame -> normalized frame ->
    one noisy copy per noise spec.  The ground truth is g = 1 - phi in
    lumen order (liquid-high convention).  Conditions that fail are
    recorded in the manifest's ``errors`` list and do not abort the rest.
    Conditions may run in parallel (``jobs``); files and the manifest are
    written by this process in condition order, so the output is
    independent of the parallelism degree.  Returns the manifest dict.
    """
    if not conditions:
        raise ConfigError("no conditions given")
    if not noise_specs:
        raise ConfigError("no noise specs given")
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)

    c_low, c_high = calibration_frames(
        grid,
        v_exc=v_exc,
        gas_permittivity=props.eps_g,
        liquid_permittivity=props.eps_l,
    )

    snaps_per_cond = [int(np.floor(c.duration / c.output_interval + 1e-9)) for c in conditions]
    per_cond_samples = [s * len(noise_specs) for s in snaps_per_cond]
    offsets = np.concatenate([[0], np.cumsum(per_cond_samples)])

    work = [
        (grid, props, cond, f"cond_{ci:03d}", _derived_seed(seed, ci), v_exc, c_low, c_high)
        for ci, cond in enumerate(conditions)
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_compute_condition, work))
    else:
        results = [_compute_condition(w) for w in work]

    samples = []
    errors = []
    for ci, result in enumerate(results):
        cond_id = result["condition_id"]
        if "error" in result:
            logger.warning("%s failed: %s", cond_id, result["error"])
            errors.append({"condition_id": cond_id, "error": result["error"]})
            continue
        errors.extend(result.get("frame_errors", []))
        for frame in result["frames"]:
            fi = frame["frame_index"]
            clean = CapacitanceFrame(values=frame["clean"], kind="normalized", pairs=c_low.pairs)
            vol_bytes = frame["g"].astype("<f4").tobytes()
            for ni, spec in enumerate(noise_specs):
                sample_id = int(offsets[ci]) + fi * len(noise_specs) + ni
                noise_seed = _derived_seed(spec.seed, seed, ci, fi, ni)
                noisy = add_noise(clean, NoiseSpec(spec.snr_db, noise_seed))
                cap_bytes = (
                    clean.values.astype("<f4").tobytes()
                    + noisy.values.astype("<f4").tobytes()
                )
                cap_name = f"cap_{sample_id:06d}.f32"
                vol_name = f"vol_{sample_id:06d}.f32"
                _write_raw(out / cap_name, cap_bytes)
                _write_raw(out / vol_name, vol_bytes)
                samples.append(
                    {
                        "sample_id": sample_id,
                        "condition_id": cond_id,
                        "frame_index": fi,
                        "frame_time": frame["time"],
                        "snr_db": spec.snr_db,
                        "noise_seed": noise_seed,
                        "cap_file": cap_name,
                        "vol_file": vol_name,
                        "cap_bytes": len(cap_bytes),
                        "vol_bytes": len(vol_bytes),
                        "cap_sha256": _sha256(cap_bytes),
                        "vol_sha256": _sha256(vol_bytes),
                    }
                )
        if progress is not None:
            progress(cond_id, len(result["frames"]))

    mask_bytes = grid.lumen_mask.astype("u1").tobytes()
    _write_raw(out / "lumen_mask.u8", mask_bytes)

    manifest = {
        "format_version": FORMAT_VERSION,
        "grid": grid.descriptor(),
        "geometry": grid.geometry.to_dict() if grid.geometry else None,
        "fluid_properties": props.to_dict(),
        "conditions": [
            {"condition_id": f"cond_{ci:03d}", "seed": _derived_seed(seed, ci), **c.to_dict()}
            for ci, c in enumerate(conditions)
        ],
        "noise_specs": [{"snr_db": s.snr_db, "seed": s.seed} for s in noise_specs],
        "calibration": {
            "v_exc": v_exc,
            "pairs": [list(p) for p in c_low.pairs],
            "c_low": [float(x) for x in c_low.values],
            "c_high": [float(x) for x in c_high.values],
        },
        "lumen_mask_file": "lumen_mask.u8",
        "lumen_mask_sha256": _sha256(mask_bytes),
        "master_seed": seed,
        "samples": samples,
        "errors": errors,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    os.replace(tmp, out / "manifest.json")
    logger.info("dataset at %s: %d samples, %d errors", out, len(samples), len(errors))
    return manifest


def read_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"no manifest.json under {dataset_dir}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DatasetError(f"corrupt manifest: {err}") from err
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(
            f"unsupported format_version {manifest.get('format_version')}"
        )
    return manifest


def load_sample(dataset_dir, entry: dict) -> DatasetSample:
    base = Path(dataset_dir)
    cap = np.frombuffer((base / entry["cap_file"]).read_bytes(), dtype="<f4")
    vol = np.frombuffer((base / entry["vol_file"]).read_bytes(), dtype="<f4")
    m = cap.size // 2
    return DatasetSample(
        sample_id=entry["sample_id"],
        condition_id=entry["condition_id"],
        frame_time=entry["frame_time"],
        snr_db=entry["snr_db"],
        capacitance_clean=cap[:m].astype(np.float64),
        capacitance_noisy=cap[m:].astype(np.float64),
        g_true=vol.astype(np.float64),
    )


def load_lumen_mask(dataset_dir, manifest: dict | None = None) -> np.ndarray:
    manifest = manifest or read_manifest(dataset_dir)
    shape = tuple(manifest["grid"]["shape"])
    raw = (Path(dataset_dir) / manifest["lumen_mask_file"]).read_bytes()
    mask = np.frombuffer(raw, dtype="u1").reshape(shape).astype(bool)
    return mask


def validate_dataset(dataset_dir) -> dict:
    """Integrity report: missing, truncated, or corrupted files, bad values.

    Returns {"n_samples": int, "problems": [str, ...]}; an empty problem
    list means the dataset passes.
    """
    problems: list[str] = []
    base = Path(dataset_dir)
    try:
        manifest = read_manifest(base)
    except DatasetError as err:
        return {"n_samples": 0, "problems": [str(err)]}

    mask_file = base / manifest.get("lumen_mask_file", "lumen_mask.u8")
    if not mask_file.exists():
        problems.append(f"missing {mask_file.name}")
    elif _sha256(mask_file.read_bytes()) != manifest.get("lumen_mask_sha256"):
        problems.append(f"checksum mismatch for {mask_file.name}")

    n_lumen = manifest["grid"]["n_lumen"]
    n_pairs = len(manifest["calibration"]["pairs"])
    for entry in manifest["samples"]:
        for key, expected_len in (("cap_file", 2 * n_pairs * 4), ("vol_file", n_lumen * 4)):
            path = base / entry[key]
            if not path.exists():
                problems.append(f"missing {entry[key]}")
                continue
            data = path.read_bytes()
            if len(data) != entry[f"{key.split('_')[0]}_bytes"]:
                problems.append(
                    f"{entry[key]}: size {len(data)} != recorded {entry[key.split('_')[0] + '_bytes']}"
                )
                continue
            if len(data) != expected_len:
                problems.append(f"{entry[key]}: size {len(data)} != expected {expected_len}")
                continue
            if _sha256(data) != entry[f"{key.split('_')[0]}_sha256"]:
                problems.append(f"{entry[key]}: checksum mismatch")
                continue
            values = np.frombuffer(data, dtype="<f4")
            if not np.all(np.isfinite(values)):
                problems.append(f"{entry[key]}: non-finite values")
            elif key == "vol_file" and (values.min() < 0.0 or values.max() > 1.0):
                problems.append(f"{entry[key]}: g values outside [0, 1]")
    return {"n_samples": len(manifest["samples"]), "problems": problems}
