"""``noisr`` command line: dataset | train | predict | evaluate | histogram | report.

Exit codes: 0 success, 2 usage/input error, 3 data or checkpoint corruption,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .dataset import ManifestError
from .image import ImageReadError
from .net import CheckpointError, ConfigMismatchError, NetworkConfig
from .noise import DEFAULT_BINS, NoiseSpec
from .pipeline import (METHODS, cmd_dataset, cmd_evaluate, cmd_histogram, cmd_predict, cmd_report,
                       cmd_train)
from .train import NonFiniteError, TrainConfig

EXIT_USAGE, EXIT_CORRUPT, EXIT_NUMERIC = 2, 3, 4

# fallback values for options that may also come from --config
DEFAULTS = {
    "noise": "gaussian", "sigma": 0.02, "mu": 0.0, "factor": 2, "seed": 0, "splits": "400/70/30",
    "methods": ",".join(METHODS), "bins": DEFAULT_BINS, "threads": 0,
    "epochs": 60, "lam": -10.0, "lr": 1e-3, "patience": 10, "batch_size": 8, "patch_size": 64,
    "fit": "rms", "width": None, "blocks": 8, "net_seed": 0,
}


class UsageError(Exception):
    pass


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment. Keys use flag names."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip().lstrip("-").replace("-", "_")
        values["lam" if key == "lambda" else key] = value.strip()
    return values


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from the config file, then from DEFAULTS."""
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if value is not None:
            continue
        if key in file_values:
            default = DEFAULTS.get(key)
            kind = type(default) if default is not None else str
            if key in ("width",):
                kind = int
            setattr(args, key, kind(file_values[key]))
        elif key in DEFAULTS:
            setattr(args, key, DEFAULTS[key])
    return args


def parse_splits(text: str) -> tuple[int, int, int]:
    parts = text.split("/")
    if len(parts) != 3 or not all(p.strip().isdigit() for p in parts):
        raise UsageError(f"--splits must look like a/b/c, got {text!r}")
    return tuple(int(p) for p in parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisr", description=__doc__.splitlines()[0])
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress and reference points")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        opts = {
            "config": dict(help="flat key = value file mirroring the flags"),
            "noise": dict(choices=("gaussian", "speckle")),
            "sigma": dict(type=float), "mu": dict(type=float),
            "factor": dict(type=int, choices=(2, 4)), "seed": dict(type=int),
            "threads": dict(type=int, help="0 = single-thread deterministic reference mode"),
            "bins": dict(type=int), "checkpoint": dict(), "out": dict(), "src": dict(),
        }
        for name in names:
            p.add_argument(f"--{name}", default=None, **opts[name])

    p = sub.add_parser("dataset", parents=[shared], help="build G/N/L triplets and a manifest")
    common(p, "config", "src", "out", "noise", "sigma", "mu", "factor", "seed")
    p.add_argument("--splits", default=None, help="train/val/test counts, e.g. 400/70/30")

    p = sub.add_parser("train", parents=[shared], help="train the network on a manifest")
    common(p, "config", "checkpoint", "seed", "threads")
    p.add_argument("--manifest", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--fit", choices=("rms", "frobenius", "mse"), default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--net-seed", type=int, default=None)

    p = sub.add_parser("predict", parents=[shared], help="super-resolve one image")
    common(p, "config", "checkpoint", "out", "factor")
    p.add_argument("--input", default=None)

    p = sub.add_parser("evaluate", parents=[shared], help="score methods on the test split")
    common(p, "config", "checkpoint", "out", "bins", "threads")
    p.add_argument("--manifest", default=None)
    p.add_argument("--methods", default=None, help="comma list of our,cc,bilinear")

    p = sub.add_parser("histogram", parents=[shared], help="residual histograms N-G and P-G")
    common(p, "config", "out", "bins", "sigma")
    p.add_argument("--prediction", default=None)
    p.add_argument("--truth", default=None)
    p.add_argument("--noisy", default=None)

    p = sub.add_parser("report", parents=[shared], help="table of per-method means from evaluation CSVs")
    common(p, "config")
    p.add_argument("csvs", nargs="+")
    return parser


def require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join(f"--{n.replace('_', '-')}" for n in missing))


def run(args: argparse.Namespace) -> int:
    cmd = args.command
    if cmd == "dataset":
        require(args, "src", "out")
        manifest = cmd_dataset(args.src, args.out, NoiseSpec(args.noise, args.mu, args.sigma), args.factor,
                               args.seed, parse_splits(args.splits))
        print(f"wrote {len(manifest.records)} triplets to {args.out} ({manifest.counts()})")
    elif cmd == "train":
        require(args, "manifest", "checkpoint")
        if not Path(args.manifest).is_file():
            raise UsageError(f"{args.manifest}: manifest not found")
        from .dataset import load_manifest
        factor = load_manifest(args.manifest).factor
        net = NetworkConfig(factor=factor, width=args.width, num_blocks=args.blocks, seed=args.net_seed)
        cfg = TrainConfig(lam=args.lam, learning_rate=args.lr, max_epochs=args.epochs, patience=args.patience,
                          batch_size=args.batch_size, patch_size=args.patch_size, seed=args.seed,
                          fit=args.fit, threads=args.threads)
        ckpt, trace = cmd_train(args.manifest, args.checkpoint, net, cfg, progress=sys.stdout)
        print(f"best epoch {ckpt.meta['epoch']} of {len(trace.records)}; saved {args.checkpoint}")
    elif cmd == "predict":
        require(args, "checkpoint", "input", "out")
        elapsed = cmd_predict(args.checkpoint, args.input, args.out, args.factor)
        print(f"prediction time: {elapsed:.3f} s")
    elif cmd == "evaluate":
        require(args, "manifest", "out")
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        report = cmd_evaluate(args.manifest, args.out, args.checkpoint, methods, args.bins, args.threads)
        for method, rep in report.means.items():
            print(f"{method}: PSNR {rep.psnr:.3f} dB, SSIM {rep.ssim:.4f}, MSE {rep.mse:.2f}")
    elif cmd == "histogram":
        require(args, "prediction", "truth", "noisy", "out")
        *_, summary = cmd_histogram(args.prediction, args.truth, args.noisy, args.out, args.bins, args.sigma)
        print(summary)
    elif cmd == "report":
        print(cmd_report(args.csvs))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(resolve(args))
    except (CheckpointError, ManifestError) as exc:
        print(f"noisr: error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"noisr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigMismatchError, ImageReadError, FileNotFoundError, ValueError) as exc:
        print(f"noisr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"noisr: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
