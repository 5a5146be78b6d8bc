"""Dataset access for the refiner: files in, tensors out.

Inputs are back-projected volumes (read from the toolkit's reconstruction
directory, or computed here from an exported sensitivity matrix); targets
are the stored ground-truth volumes.  Lumen-ordered vectors are embedded
into dense padded boxes for the convolutional network, with a mask that
restricts the loss to real voxels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import volfmt
from .model import pad_to_multiple


def positive_back_projection(sensitivity: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """LBP variant used by the toolkit: average the measurements under the
    nonnegative sensitivity weights, clamped to [0, 1]."""
    positive = np.maximum(sensitivity, 0.0)
    g = (positive.T @ frame) / (positive.T @ np.ones(sensitivity.shape[0]))
    return np.clip(g, 0.0, 1.0)


@dataclass
class SampleRecord:
    sample_id: int
    condition_id: str
    snr_db: float
    lbp: np.ndarray     # lumen-ordered float32
    target: np.ndarray  # lumen-ordered float32


class RefinerDataset:
    """All samples of one ect3d dataset, with box embedding helpers."""

    def __init__(self, dataset_dir, lbp_dir=None, sensitivity_path=None):
        self.dataset_dir = Path(dataset_dir)
        self.manifest = volfmt.read_manifest(self.dataset_dir)
        self.grid_shape = tuple(self.manifest["grid"]["shape"])
        self.grid_hash = self.manifest["grid"]["grid_hash"]
        self.mask = volfmt.read_lumen_mask(self.dataset_dir, self.manifest)
        self.lumen_indices = np.flatnonzero(self.mask.ravel())
        self.padded_shape, self.pads = pad_to_multiple(self.grid_shape)

        if lbp_dir is None and sensitivity_path is None:
            raise ValueError("need a directory of LBP volumes or a sensitivity matrix")
        sensitivity = None
        if lbp_dir is None:
            sensitivity, header = volfmt.read_sensitivity(sensitivity_path)
            if header.get("grid_hash") != self.grid_hash:
                raise volfmt.FormatError(
                    "sensitivity matrix was computed on a different grid"
                )

        self.samples: list[SampleRecord] = []
        for entry in self.manifest["samples"]:
            _, noisy, target = volfmt.read_sample_arrays(self.dataset_dir, entry)
            if lbp_dir is not None:
                path = Path(lbp_dir) / f"recon_{entry['sample_id']:06d}.vol"
                lbp, header = volfmt.read_volume(path)
                if header.get("order") != "lumen":
                    raise volfmt.FormatError(f"{path}: expected a lumen-ordered volume")
            else:
                lbp = positive_back_projection(sensitivity, noisy.astype(np.float64))
            if lbp.shape != target.shape:
                raise volfmt.FormatError(
                    f"sample {entry['sample_id']}: input shape {lbp.shape} "
                    f"!= target shape {target.shape}"
                )
            self.samples.append(SampleRecord(
                sample_id=entry["sample_id"],
                condition_id=entry["condition_id"],
                snr_db=entry["snr_db"],
                lbp=lbp.astype(np.float32),
                target=target.astype(np.float32),
            ))

    def __len__(self) -> int:
        return len(self.samples)

    def embed(self, vector: np.ndarray) -> np.ndarray:
        """Lumen vector -> dense padded box (exterior zeros)."""
        box = np.zeros(np.prod(self.grid_shape), dtype=np.float32)
        box[self.lumen_indices] = vector
        box = box.reshape(self.grid_shape)
        return np.pad(box, self.pads)

    def extract(self, box: np.ndarray) -> np.ndarray:
        """Padded box -> lumen vector."""
        slices = tuple(
            slice(before, before + size)
            for (before, _), size in zip(self.pads, self.grid_shape)
        )
        return box[slices].reshape(-1)[self.lumen_indices].copy()

    def mask_box(self) -> np.ndarray:
        return self.embed(np.ones(self.lumen_indices.size, dtype=np.float32))

    def tensors(self, records=None) -> tuple[np.ndarray, np.ndarray]:
        """(inputs, targets) arrays of shape (n, 1, *padded_shape)."""
        records = self.samples if records is None else records
        x = np.stack([self.embed(r.lbp) for r in records])[:, None]
        y = np.stack([self.embed(r.target) for r in records])[:, None]
        return x, y


def split_by_condition(records, val_fraction=0.15, test_fraction=0.15, seed=0):
    """Deterministic condition-level split, so no flow sequence leaks
    between training and evaluation.

    With fewer than three conditions there is nothing to hold out at the
    condition level; the split falls back to hashing sample ids.
    """
    conditions = sorted({r.condition_id for r in records})

    def rank(key) -> str:
        return hashlib.sha256(f"{seed}:{key}".encode()).hexdigest()

    split = {"train": [], "val": [], "test": []}
    if len(conditions) >= 3:
        order = sorted(conditions, key=rank)
        n_val = max(1, round(val_fraction * len(order)))
        n_test = max(1, round(test_fraction * len(order)))
        val_set = set(order[:n_val])
        test_set = set(order[n_val:n_val + n_test])
        for record in records:
            if record.condition_id in val_set:
                split["val"].append(record)
            elif record.condition_id in test_set:
                split["test"].append(record)
            else:
                split["train"].append(record)
    else:
        order = sorted(records, key=lambda r: rank(r.sample_id))
        n_val = max(1, round(val_fraction * len(order)))
        n_test = max(1, round(test_fraction * len(order)))
        split["val"] = order[:n_val]
        split["test"] = order[n_val:n_val + n_test]
        split["train"] = order[n_val + n_test:]
    if not split["train"] or not split["val"]:
        raise ValueError("split produced an empty train or val partition")
    return split
