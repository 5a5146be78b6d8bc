"""Command line for the refiner: train on an ect3d dataset, then infer.

The only inputs are files produced by the measurement toolkit: a dataset
directory, plus either its LBP reconstruction directory or the exported
sensitivity matrix (to back-project internally).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .data import RefinerDataset, split_by_condition
from .infer import infer
from .model import NetworkConfig
from .train import TrainConfig, load_checkpoint, train


def _dataset_from_args(args) -> RefinerDataset:
    return RefinerDataset(args.dataset, lbp_dir=args.lbp,
                          sensitivity_path=args.sensitivity)


def cmd_train(args) -> int:
    dataset = _dataset_from_args(args)
    net_cfg = NetworkConfig(base_channels=args.base_channels)
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    result = train(dataset, net_cfg, cfg, args.out)
    print(f"best epoch {result.best_epoch} "
          f"(val loss {result.best_val_loss:.3e}) -> {result.checkpoint_path}")
    return 0


def cmd_infer(args) -> int:
    dataset = _dataset_from_args(args)
    records = None
    if args.split:
        _, payload = load_checkpoint(args.checkpoint)
        tc = payload["train_config"]
        split = split_by_condition(dataset.samples, tc["val_fraction"],
                                   tc["test_fraction"], tc["seed"])
        records = split[args.split]
    written = infer(args.checkpoint, dataset, args.out, records=records)
    print(f"{len(written)} refined volumes -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dbp3d", description="3D deep-back-projection refiner"
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p):
        p.add_argument("--dataset", required=True, help="ect3d dataset directory")
        p.add_argument("--lbp", help="directory of recon_*.vol LBP volumes")
        p.add_argument("--sensitivity", help=".smat file to back-project internally")

    p = sub.add_parser("train", help="fit the refiner on a dataset")
    add_io(p)
    p.add_argument("--out", required=True, help="run directory for checkpoint/curves")
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write refined volumes for a dataset")
    add_io(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "val", "test"],
                   help="restrict to one split of the training partition")
    p.set_defaults(func=cmd_infer)
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
    except Exception as err:  # file-format and config problems -> exit 1
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
