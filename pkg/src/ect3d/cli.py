"""Command-line entry point.

One JSON configuration file drives every subcommand; all randomness
flows from seeds recorded in it.  Subcommands: forward, simulate,
dataset, reconstruct, evaluate, validate.  Exit codes: 0 success,
1 configuration/validation problem, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import electrostatics as es
from . import flow, recon, volio
from .errors import (
    ConfigError,
    DatasetError,
    Ect3dError,
    SimulationError,
    SolverError,
    StabilityError,
)
from .geometry import SensorGeometry, build_grid

logger = logging.getLogger("ect3d")

_CONFIG_KEYS = {
    "geometry", "resolution", "fluid", "conditions", "noise",
    "v_exc", "seed", "reconstruction",
}


class RunConfig:
    """Validated run configuration: every section is checked up front so
    invalid settings never reach numeric code."""

    def __init__(self, raw: dict):
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        self.geometry = SensorGeometry.from_dict(raw.get("geometry", {}))
        resolution = raw.get("resolution", [32, 32, 64])
        if len(resolution) != 3:
            raise ConfigError("resolution must have three entries")
        self.resolution = tuple(int(r) for r in resolution)
        self.fluid = flow.FluidProperties.from_dict(raw.get("fluid", {}))
        self.v_exc = float(raw.get("v_exc", 1.0))
        if self.v_exc <= 0:
            raise ConfigError("v_exc must be positive")
        self.seed = int(raw.get("seed", 0))
        self.conditions = self._parse_conditions(raw.get("conditions", {}))
        self.noise_specs = [
            ds.NoiseSpec(float(n["snr_db"]), int(n.get("seed", 0)))
            for n in raw.get("noise", [{"snr_db": 50.0}])
        ]
        self.reconstruction = raw.get("reconstruction", {})

    def _parse_conditions(self, section) -> list[flow.FlowConditions]:
        if isinstance(section, list):
            return [flow.FlowConditions.from_dict(c) for c in section]
        if "sample" in section:
            return ds.sample_conditions(**{
                k: tuple(v) if k.endswith("range") or k.startswith("admissible") else v
                for k, v in section["sample"].items()
            })
        if not section:
            return []
        raise ConfigError("conditions must be a list or {'sample': {...}}")

    def build_grid(self):
        return build_grid(self.geometry, self.resolution)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        return cls(raw)


def _load_phase(path, grid) -> np.ndarray:
    values, header = volio.read_volume(path)
    if header.get("order") == "lumen":
        return grid.embed_lumen(1.0 - values)  # stored g -> phi
    if tuple(values.shape) != grid.shape:
        raise ConfigError(
            f"phase volume shape {values.shape} does not match grid {grid.shape}"
        )
    return values


def cmd_forward(args) -> int:
    config = RunConfig.load(args.config)
    if args.phase is not None and not Path(args.phase).exists():
        raise ConfigError(f"phase file {args.phase} does not exist")
    grid = config.build_grid()
    props = config.fluid
    if args.phase is not None:
        phi = _load_phase(args.phase, grid)
    else:
        phi = flow.uniform_phase(grid, 0.0 if args.fill == "liquid" else 1.0)

    perm = flow.phase_to_permittivity(phi, grid, props)
    raw = es.measure_frame(grid, perm, v_exc=config.v_exc)
    c_low, c_high = es.calibration_frames(
        grid, v_exc=config.v_exc,
        gas_permittivity=props.eps_g, liquid_permittivity=props.eps_l,
    )
    norm = es.normalize_frame(raw, c_low, c_high)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    volio.write_frame(out / "raw.frame", raw, grid.grid_hash)
    volio.write_frame(out / "c_low.frame", c_low, grid.grid_hash)
    volio.write_frame(out / "c_high.frame", c_high, grid.grid_hash)
    volio.write_frame(out / "normalized.frame", norm, grid.grid_hash)
    volio.write_frame_csv(out / "raw.csv", raw)
    volio.write_frame_csv(out / "normalized.csv", norm)
    if args.print_values:
        for (i, j), value in zip(norm.pairs, norm.values):
            print(f"{i:2d} {j:2d} {value: .9f}")
    print(f"forward: {len(norm)} measurements -> {out}")
    return 0


def cmd_simulate(args) -> int:
    config = RunConfig.load(args.config)
    if not config.conditions:
        raise ConfigError("config has no flow conditions")
    grid = config.build_grid()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for ci, cond in enumerate(config.conditions):
        cond_id = f"cond_{ci:03d}"
        seed = ds._derived_seed(config.seed, ci)
        snapshots = flow.simulate_flow(grid, config.fluid, cond, seed=seed)
        files = []
        for fi, (t, phi) in enumerate(snapshots):
            name = f"phase_{cond_id}_{fi:04d}.vol"
            volio.write_volume(out / name, phi, kind="phase",
                               grid_hash=grid.grid_hash, order="box", time=t)
            files.append({"file": name, "time": t})
            print(f"{cond_id} frame {fi + 1}/{len(snapshots)} t={t:.3f}s")
        index.append({"condition_id": cond_id, "seed": seed,
                      "condition": cond.to_dict(), "frames": files})
    tmp = out / "index.json.tmp"
    tmp.write_text(json.dumps(
        {"grid": grid.descriptor(), "conditions": index}, indent=1, sort_keys=True
    ), encoding="utf-8")
    os.replace(tmp, out / "index.json")
    return 0


def cmd_dataset(args) -> int:
    config = RunConfig.load(args.config)
    if not config.conditions:
        raise ConfigError("config has no flow conditions")
    out = Path(args.out)
    if args.resume and (out / "manifest.json").exists():
        report = ds.validate_dataset(out)
        expected = sum(
            int(np.floor(c.duration / c.output_interval + 1e-9)) * len(config.noise_specs)
            for c in config.conditions
        )
        if not report["problems"] and report["n_samples"] == expected:
            print(f"dataset at {out} already complete ({report['n_samples']} samples)")
            return 0
    grid = config.build_grid()
    manifest = ds.generate_dataset(
        grid, config.fluid, config.conditions, config.noise_specs, out,
        seed=config.seed, v_exc=config.v_exc, jobs=args.jobs,
        progress=lambda cond_id, n: print(f"{cond_id}: {n} frames"),
    )
    print(f"dataset: {len(manifest['samples'])} samples, "
          f"{len(manifest['errors'])} condition errors -> {out}")
    return 0


def _grid_from_manifest(manifest) -> "object":
    geometry = SensorGeometry.from_dict(manifest["geometry"])
    grid = build_grid(geometry, tuple(manifest["grid"]["shape"]))
    if grid.grid_hash != manifest["grid"]["grid_hash"]:
        raise DatasetError("rebuilt grid does not match the dataset's grid hash")
    return grid


def cmd_reconstruct(args) -> int:
    manifest = ds.read_manifest(args.dataset)
    grid = _grid_from_manifest(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    smat_path = out / "sensitivity.smat"
    sens = None
    if smat_path.exists():
        cached = volio.read_sensitivity(smat_path)
        if cached.grid_hash == grid.grid_hash:
            sens = cached
    if sens is None:
        sens = es.compute_sensitivity(grid, v_exc=manifest["calibration"]["v_exc"])
        volio.write_sensitivity(smat_path, sens)

    params = {}
    if args.iterations is not None:
        params["iterations"] = args.iterations
    if args.step is not None:
        params["step"] = args.step

    reports = []
    for entry in manifest["samples"]:
        sample = ds.load_sample(args.dataset, entry)
        if args.method == "lbp":
            g_hat = recon.lbp(sens, sample.capacitance_noisy)
        else:
            g_hat = recon.landweber(sens, sample.capacitance_noisy, **params)
        name = f"recon_{sample.sample_id:06d}.vol"
        volio.write_volume(out / name, g_hat, kind="g",
                           grid_hash=grid.grid_hash, order="lumen")
        report = recon.metrics(sample.g_true, g_hat)
        reports.append({
            "sample_id": sample.sample_id,
            "condition_id": sample.condition_id,
            "snr_db": sample.snr_db,
            "file": name,
            **report.to_dict(),
        })
    tmp = out / "reports.json.tmp"
    tmp.write_text(json.dumps(
        {"method": args.method, "params": params, "samples": reports},
        indent=1, sort_keys=True,
    ), encoding="utf-8")
    os.replace(tmp, out / "reports.json")
    print(f"reconstruct[{args.method}]: {len(reports)} volumes -> {out}")
    return 0


def _aggregate(rows: list[dict]) -> dict:
    keys = ("ssim", "rmse", "psnr", "lvc")
    agg = {}
    for key in keys:
        values = np.array([
            r[key] for r in rows if r[key] is not None and np.isfinite(r[key])
        ])
        agg[key] = {
            "mean": float(values.mean()) if values.size else None,
            "std": float(values.std()) if values.size else None,
        }
    return agg


def cmd_evaluate(args) -> int:
    manifest = ds.read_manifest(args.truth)
    estimate_dir = Path(args.estimates)
    if not estimate_dir.is_dir():
        raise ConfigError(f"estimate directory {estimate_dir} does not exist")
    vol_files = {}
    for path in estimate_dir.glob("*.vol"):
        stem = path.stem
        digits = "".join(ch for ch in stem if ch.isdigit())
        if digits:
            vol_files[int(digits)] = path

    wanted = [entry["sample_id"] for entry in manifest["samples"]]
    missing = sorted(set(wanted) - set(vol_files))
    if missing:
        raise ConfigError(
            f"estimates missing for {len(missing)} sample(s): "
            f"{missing[:10]}{'...' if len(missing) > 10 else ''}"
        )

    rows = []
    for entry in manifest["samples"]:
        sample = ds.load_sample(args.truth, entry)
        estimate, header = volio.read_volume(vol_files[entry["sample_id"]])
        if header.get("order") != "lumen" or estimate.shape != sample.g_true.shape:
            raise ConfigError(
                f"{vol_files[entry['sample_id']].name}: not a lumen volume of length "
                f"{sample.g_true.size}"
            )
        report = recon.metrics(sample.g_true, estimate)
        rows.append({
            "sample_id": sample.sample_id,
            "snr_db": sample.snr_db,
            **report.to_dict(),
        })

    result = {"overall": _aggregate(rows), "per_snr": {}, "samples": rows}
    for snr in sorted({r["snr_db"] for r in rows}):
        result["per_snr"][str(snr)] = _aggregate([r for r in rows if r["snr_db"] == snr])
    text = json.dumps(result, indent=1, sort_keys=True)
    if args.out:
        out = Path(args.out)
        tmp = out.with_name(out.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, out)
    overall = result["overall"]
    print("evaluate: n=%d  ssim %.4f  rmse %.4f  psnr %s  lvc %.4f" % (
        len(rows), overall["ssim"]["mean"], overall["rmse"]["mean"],
        f"{overall['psnr']['mean']:.2f}" if overall["psnr"]["mean"] is not None else "inf",
        overall["lvc"]["mean"],
    ))
    return 0


def cmd_validate(args) -> int:
    report = ds.validate_dataset(args.dataset)
    for problem in report["problems"]:
        print(f"PROBLEM: {problem}")
    print(f"validate: {report['n_samples']} samples, {len(report['problems'])} problems")
    return 1 if report["problems"] else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ect3d",
        description="Digital-twin toolkit for 3D electrical capacitance tomography",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="solve the electrostatic forward problem")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--phase", help=".vol phase volume; omit to use --fill")
    p.add_argument("--fill", choices=["liquid", "gas"], default="liquid",
                   help="uniform fill when no phase volume is given")
    p.add_argument("--out", required=True, help="output directory for frames")
    p.add_argument("--print", dest="print_values", action="store_true",
                   help="print the normalized measurements")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("simulate", help="run the two-phase flow simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="snapshot output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="generate a labeled measurement dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel conditions (default: cores)")
    p.add_argument("--resume", action="store_true",
                   help="exit 0 without work if the dataset is already complete")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("reconstruct", help="invert dataset measurements")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--method", choices=["lbp", "landweber"], default="lbp")
    p.add_argument("--iterations", type=int, help="landweber iterations")
    p.add_argument("--step", type=float, help="landweber step size")
    p.add_argument("--out", required=True, help="reconstruction output directory")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score estimate volumes against a dataset")
    p.add_argument("--truth", required=True, help="dataset directory with ground truth")
    p.add_argument("--estimates", required=True, help="directory of .vol estimates")
    p.add_argument("--out", help="write the aggregate report JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate", help="check dataset integrity")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (SolverError, SimulationError, StabilityError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except Ect3dError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
