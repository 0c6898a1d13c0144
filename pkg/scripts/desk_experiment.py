#!/usr/bin/env python3
"""Synthetic desk-scale run of the full pipeline: sources, dataset, train, evaluate, report.

    python3 scripts/desk_experiment.py --out runs/desk --noise gaussian --factor 2
"""
import argparse
import logging
from pathlib import Path

from noisr.dataset import write_desk_images
from noisr.net import NetworkConfig, param_count
from noisr.noise import NoiseSpec
from noisr.pipeline import cmd_dataset, cmd_evaluate, cmd_report, cmd_train
from noisr.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--noise", choices=("gaussian", "speckle"), default="gaussian")
    ap.add_argument("--sigma", type=float, default=0.02)
    ap.add_argument("--factor", type=int, choices=(2, 4), default=2)
    ap.add_argument("--images", default="20/4/4", help="train/val/test counts")
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    splits = tuple(int(x) for x in args.images.split("/"))
    write_desk_images(out / "src", sum(splits), size=args.size, seed=args.seed)
    manifest = cmd_dataset(out / "src", out / "ds", NoiseSpec(args.noise, 0.0, args.sigma), args.factor,
                           args.seed, splits)

    net = NetworkConfig(args.factor, seed=args.seed)
    print(f"network: width {net.width}, kernel {net.kernel_size}, {param_count(net):,} parameters")
    cfg = TrainConfig(max_epochs=args.epochs, seed=args.seed)
    with open(out / "train_progress.csv", "w") as progress:
        ckpt, trace = cmd_train(out / "ds" / "manifest.csv", out / "model.ckpt", net, cfg, progress=progress)
    print(f"best epoch {ckpt.meta['epoch']} of {len(trace.records)}")

    cmd_evaluate(out / "ds" / "manifest.csv", out / "eval", out / "model.ckpt")
    print(cmd_report([out / "eval" / "report.csv"]))
    print(f"outputs in {out} ({manifest.counts()})")


if __name__ == "__main__":
    main()
