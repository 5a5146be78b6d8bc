"""Batch inference: refined volumes written back in the evaluator's format."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from . import volfmt
from .data import RefinerDataset
from .train import load_checkpoint

logger = logging.getLogger(__name__)


def infer(checkpoint_path, dataset: RefinerDataset, out_dir,
          records=None, batch_size: int = 16) -> list[Path]:
    """Refine every sample's back-projected volume and write .vol files.

    Outputs are clamped to [0, 1] and keep the dataset's lumen ordering
    and grid hash, so the measurement toolkit's evaluate/validate commands
    consume them directly.  Raises on a checkpoint/grid mismatch.
    """
    model, payload = load_checkpoint(checkpoint_path)
    if payload.get("grid_hash") != dataset.grid_hash:
        raise volfmt.FormatError(
            "checkpoint was trained on a different grid than this dataset"
        )
    records = dataset.samples if records is None else records
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    written = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            x = np.stack([dataset.embed(r.lbp) for r in chunk])[:, None]
            pred = model(torch.from_numpy(x)).clamp_(0.0, 1.0).numpy()
            for record, box in zip(chunk, pred[:, 0]):
                path = out / f"dbp_{record.sample_id:06d}.vol"
                volfmt.write_volume(path, dataset.extract(box),
                                    grid_hash=dataset.grid_hash)
                written.append(path)
    logger.info("wrote %d refined volumes to %s", len(written), out)
    return written
