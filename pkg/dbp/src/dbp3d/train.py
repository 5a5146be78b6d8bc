"""Training loop: Adam with step decay, lumen-masked MSE, best-val selection."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import RefinerDataset, split_by_condition
from .model import NetworkConfig, UNet3d, build_network

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-6
    decay_factor: float = 0.2
    decay_every: int = 20
    batch_size: int = 16
    epochs: int = 100
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        numeric = (self.learning_rate, self.weight_decay, self.decay_factor,
                   self.batch_size, self.epochs, self.decay_every)
        if any(v <= 0 for v in numeric):
            raise ValueError("all training hyperparameters must be positive")


@dataclass
class TrainResult:
    checkpoint_path: Path
    curves_path: Path
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_loss(self) -> float:
        return self.val_losses[self.best_epoch]


def masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over lumen voxels only."""
    diff = (pred - target) ** 2 * mask
    return diff.sum() / (mask.sum() * pred.shape[0])


def _epoch_pass(model, x, y, mask, batch_size, optimizer=None, order=None):
    n = x.shape[0]
    order = np.arange(n) if order is None else order
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        xb = x[idx]
        yb = y[idx]
        if optimizer is not None:
            optimizer.zero_grad()
            loss = masked_mse(model(xb), yb, mask)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss in batch starting at sample index {start}"
                )
            loss.backward()
            optimizer.step()
        else:
            with torch.no_grad():
                loss = masked_mse(model(xb), yb, mask)
        total += float(loss.detach()) * len(idx)
    return total / n


def train(
    dataset: RefinerDataset,
    net_cfg: NetworkConfig,
    cfg: TrainConfig,
    out_dir,
    records=None,
    val_records=None,
) -> TrainResult:
    """Train on a dataset split and keep the minimum-validation checkpoint.

    By default the split is condition-level from ``cfg``; explicit record
    lists override it (the overfit sanity check trains on its own val set).
    Writes ``checkpoint.pt`` (weights + embedded network config) and
    ``curves.csv`` (per-epoch train/val loss).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    if records is None:
        split = split_by_condition(dataset.samples, cfg.val_fraction,
                                   cfg.test_fraction, cfg.seed)
        records, val_records = split["train"], split["val"]
    elif val_records is None:
        val_records = records

    x_train, y_train = dataset.tensors(records)
    x_val, y_val = dataset.tensors(val_records)
    x_train = torch.from_numpy(x_train)
    y_train = torch.from_numpy(y_train)
    x_val = torch.from_numpy(x_val)
    y_val = torch.from_numpy(y_val)
    mask = torch.from_numpy(dataset.mask_box()[None, None])

    model = build_network(net_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=cfg.decay_every, gamma=cfg.decay_factor
    )

    result = TrainResult(checkpoint_path=out / "checkpoint.pt",
                         curves_path=out / "curves.csv")
    best_state = None
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(records))
        train_loss = _epoch_pass(model, x_train, y_train, mask,
                                 cfg.batch_size, optimizer, order)
        model.eval()
        val_loss = _epoch_pass(model, x_val, y_val, mask, cfg.batch_size)
        scheduler.step()
        result.train_losses.append(train_loss)
        result.val_losses.append(val_loss)
        if best_state is None or val_loss < result.val_losses[result.best_epoch]:
            result.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        logger.info("epoch %3d train %.3e val %.3e", epoch, train_loss, val_loss)

    torch.save(
        {
            "state_dict": best_state,
            "network_config": net_cfg.to_json(),
            "train_config": asdict(cfg),
            "best_epoch": result.best_epoch,
            "train_losses": result.train_losses,
            "val_losses": result.val_losses,
            "grid_hash": dataset.grid_hash,
            "grid_shape": list(dataset.grid_shape),
        },
        result.checkpoint_path,
    )
    with open(result.curves_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, (tl, vl) in enumerate(zip(result.train_losses, result.val_losses)):
            writer.writerow([epoch, repr(tl), repr(vl)])
    return result


def load_checkpoint(path) -> tuple[UNet3d, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    net_cfg = NetworkConfig.from_json(payload["network_config"])
    model = build_network(net_cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
