#!/usr/bin/env python3
"""Residual histograms N-G and P-G for one trained model on every test image of a manifest."""
import argparse
from pathlib import Path

import numpy as np

from noisr.dataset import load_manifest
from noisr.net import load_checkpoint
from noisr.noise import histogram_from_residuals, histogram_half_range
from noisr.resample import upsample_cc
from noisr.train import predict


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--manifest", required=True)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--bins", type=int, default=101)
    args = ap.parse_args()

    manifest = load_manifest(args.manifest)
    ckpt = load_checkpoint(args.checkpoint, manifest.factor)
    test = manifest.load_split("test")
    residuals = {
        "input": np.concatenate([(t.noisy - t.truth).ravel() for t in test]),
        "our": np.concatenate([(predict(ckpt, t.low) - t.truth).ravel() for t in test]),
        "cc": np.concatenate([(upsample_cc(t.low, manifest.factor) - t.truth).ravel() for t in test]),
    }
    half = max(histogram_half_range(r, manifest.noise.sigma) for r in residuals.values())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, res in residuals.items():
        hist = histogram_from_residuals(res, args.bins, half)
        hist.to_csv(out / f"hist_{name}.csv")
        print(f"{name:6s} mean {hist.sample_mean:+.5f} std {hist.sample_std:.5f} (target sigma {manifest.noise.sigma})")


if __name__ == "__main__":
    main()
