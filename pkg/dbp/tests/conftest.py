"""Fixtures: small real datasets produced through the ect3d CLI.

The refiner only ever sees the toolkit's files, so the fixtures shell
out to the installed `ect3d` entry point rather than importing it.
"""

import json
import subprocess

import pytest


def run_ect3d(*args):
    result = subprocess.run(["ect3d", *args], capture_output=True, text=True)
    if result.returncode != 0:
        raise RuntimeError(f"ect3d {' '.join(args)} failed:\n{result.stderr}")
    return result.stdout


def make_dataset(out_dir, config: dict, jobs: int = 2):
    cfg_path = out_dir / "config.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(json.dumps(config))
    data = out_dir / "data"
    lbp = out_dir / "lbp"
    run_ect3d("dataset", "--config", str(cfg_path), "--out", str(data),
              "--jobs", str(jobs))
    run_ect3d("reconstruct", "--dataset", str(data), "--method", "lbp",
              "--out", str(lbp))
    return data, lbp


@pytest.fixture(scope="session")
def small_workspace(tmp_path_factory):
    """10-sample dataset on a 16^3 grid plus its LBP volumes."""
    config = {
        "geometry": {"pipe_outer_diameter": 0.060},
        "resolution": [16, 16, 16],
        "conditions": [
            {"inlet_gas_velocity": 0.425, "inlet_liquid_velocity": 0.709,
             "initial_fill": "liquid", "duration": 0.25, "output_interval": 0.05}
        ],
        "noise": [{"snr_db": 50.0, "seed": 1}, {"snr_db": 40.0, "seed": 1}],
        "seed": 5,
    }
    root = tmp_path_factory.mktemp("small")
    data, lbp = make_dataset(root, config)
    return {"root": root, "data": data, "lbp": lbp}
