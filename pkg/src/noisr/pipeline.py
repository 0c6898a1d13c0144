"""Experiment drivers behind the ``noisr`` subcommands."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .dataset import Manifest, build_dataset, load_manifest
from .image import check_same_shape, load_image, save_image
from .metrics import (LOWER_IS_BETTER, METRIC_NAMES, FsimParams, MetricReport, SsimParams,
                      evaluate_all, format_value, mean_report, read_report_csv, write_report_csv)
from .net import Checkpoint, ConfigMismatchError, NetworkConfig, load_checkpoint, save_checkpoint
from .noise import (DEFAULT_BINS, Histogram, histogram_from_residuals, histogram_half_range,
                    residual_histogram)
from .resample import upsample_bilinear, upsample_cc
from .train import TrainConfig, TrainingTrace, predict, train

log = logging.getLogger(__name__)

METHODS = ("our", "cc", "bilinear")
# published test-set averages (500-image ImageNet subset); orientation only, never asserted
PUBLISHED_REFERENCE = {
    "gaussian": {2: {"cc": {"psnr": 23.09, "mse": 406.76}, "our": {"psnr": 23.81, "mse": 304.11}},
                 4: {"cc": {"psnr": 20.11, "mse": 1112.0}, "our": {"psnr": 20.64, "mse": 949.0}}},
    "speckle": {2: {"cc": {"psnr": 22.01, "mse": 408.81}, "our": {"psnr": 24.19, "mse": 247.67}}},
}


def cmd_dataset(src_dir, out_dir, noise, factor: int, seed: int = 0,
                splits: tuple[int, int, int] = (400, 70, 30)) -> Manifest:
    return build_dataset(src_dir, out_dir, noise, factor, seed, splits)


def trace_path(checkpoint: str | Path) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.stem + ".trace.csv")


def cmd_train(manifest_path, checkpoint_path, net_config: NetworkConfig | None = None,
              train_config: TrainConfig = TrainConfig(), progress: TextIO | None = None):
    manifest = load_manifest(manifest_path)
    if net_config is None:
        net_config = NetworkConfig(manifest.factor)
    if net_config.factor != manifest.factor:
        raise ConfigMismatchError(f"network factor {net_config.factor} != dataset factor {manifest.factor}")
    ckpt, trace = train(manifest.load_split("train"), manifest.load_split("val"), manifest.noise,
                        net_config, train_config, stats=manifest.stats, progress=progress)
    save_checkpoint(checkpoint_path, ckpt)
    trace.to_csv(trace_path(checkpoint_path))
    return ckpt, trace


def cmd_predict(checkpoint_path, input_path, output_path, factor: int | None = None) -> float:
    """Write the prediction; returns wall-clock prediction time in seconds."""
    ckpt = load_checkpoint(checkpoint_path, factor)
    low = load_image(input_path)
    start = time.perf_counter()
    pred = predict(ckpt, low)
    elapsed = time.perf_counter() - start
    save_image(pred, output_path)
    return elapsed


@dataclass
class ExperimentReport:
    rows: list[tuple[str, str, MetricReport]]
    means: dict[str, MetricReport]
    histograms: dict[str, Histogram] = field(default_factory=dict)

    def psnr_table(self) -> dict[str, dict[str, float]]:
        table: dict[str, dict[str, float]] = {}
        for image_id, method, rep in self.rows:
            table.setdefault(image_id, {})[method] = rep.psnr
        return table


def _upsample(method: str, ckpt: Checkpoint | None, low: np.ndarray, k: int) -> np.ndarray:
    if method == "our":
        return predict(ckpt, low, k)
    if method == "cc":
        return upsample_cc(low, k)
    if method == "bilinear":
        return upsample_bilinear(low, k)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def cmd_evaluate(manifest_path, out_dir, checkpoint_path=None, methods: Sequence[str] = METHODS,
                 bins: int = DEFAULT_BINS, threads: int = 0,
                 ssim_params: SsimParams = SsimParams(), fsim_params: FsimParams = FsimParams()) -> ExperimentReport:
    """Score every method on the test split against the noisy targets.

    Writes ``report.csv``, ``means.csv``, ``psnr_boxplot.csv`` and one
    residual histogram per method plus ``hist_input.csv`` (N - G), all
    sharing bin edges.
    """
    manifest = load_manifest(manifest_path)
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    ckpt = None
    if "our" in methods:
        if checkpoint_path is None:
            raise ValueError("method 'our' needs --checkpoint")
        ckpt = load_checkpoint(checkpoint_path, manifest.factor)
    test = manifest.load_split("test")
    if not test:
        raise ValueError(f"{manifest_path}: no test split")
    k = manifest.factor

    def run(t):
        preds = {m: _upsample(m, ckpt, t.low, k) for m in methods}
        return {m: evaluate_all(t.noisy, p, ssim_params, fsim_params) for m, p in preds.items()}, preds

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, test))
    else:
        results = [run(t) for t in test]

    rows = [(t.image_id, m, reps[m]) for t, (reps, _) in zip(test, results) for m in methods]
    means = {m: mean_report([r for _, mm, r in rows if mm == m]) for m in methods}

    residuals = {"input": np.concatenate([(t.noisy - t.truth).ravel() for t in test])}
    for m in methods:
        residuals[m] = np.concatenate([(preds[m] - t.truth).ravel() for t, (_, preds) in zip(test, results)])
    half = max(histogram_half_range(r, manifest.noise.sigma) for r in residuals.values())
    hists = {name: histogram_from_residuals(r, bins, half) for name, r in residuals.items()}

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "report.csv", rows)
    write_means_csv(out / "means.csv", means)
    for name, hist in hists.items():
        hist.to_csv(out / f"hist_{name}.csv")
    report = ExperimentReport(rows, means, hists)
    with open(out / "psnr_boxplot.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", *methods])
        for image_id, vals in report.psnr_table().items():
            writer.writerow([image_id, *(format_value(vals[m]) for m in methods)])

    ordering = sorted(methods, key=lambda m: -means[m].psnr)
    log.info("mean PSNR ordering: %s", " >= ".join(f"{m} ({means[m].psnr:.2f} dB)" for m in ordering))
    ref = PUBLISHED_REFERENCE.get(manifest.noise.kind, {}).get(k)
    if ref:
        log.info("published reference points (different data, orientation only): %s", ref)
    return report


def write_means_csv(path, means: dict[str, MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("method",) + METRIC_NAMES)
        for method, rep in means.items():
            writer.writerow([method, *(format_value(v) for v in rep.as_tuple())])


def cmd_histogram(prediction_path, truth_path, noisy_path, out_dir, bins: int = DEFAULT_BINS,
                  sigma: float = 0.02) -> tuple[Histogram, Histogram, str]:
    """Histograms of N - G and P - G on shared edges, plus a one-line comparison."""
    p, g, n = load_image(prediction_path), load_image(truth_path), load_image(noisy_path)
    check_same_shape(p, g, n)
    half = max(histogram_half_range(n - g, sigma), histogram_half_range(p - g, sigma))
    h_input = residual_histogram(n, g, bins, sigma, half)
    h_pred = residual_histogram(p, g, bins, sigma, half)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h_input.to_csv(out / "hist_input.csv")
    h_pred.to_csv(out / "hist_prediction.csv")
    summary = (f"N-G mean={h_input.sample_mean:.6g} std={h_input.sample_std:.6g}; "
               f"P-G mean={h_pred.sample_mean:.6g} std={h_pred.sample_std:.6g}")
    return h_input, h_pred, summary


def best_methods(means: dict[str, MetricReport], metric: str) -> set[str]:
    """Methods achieving the best mean for ``metric``; ties all count as best."""
    vals = {m: getattr(r, metric) for m, r in means.items() if not math.isnan(getattr(r, metric))}
    if not vals:
        return set()
    target = min(vals.values()) if metric in LOWER_IS_BETTER else max(vals.values())
    return {m for m, v in vals.items() if v == target}


def collect_means(paths: Sequence[str | Path]) -> dict[str, MetricReport]:
    grouped: dict[str, list[MetricReport]] = {}
    for path in paths:
        for _, method, rep in read_report_csv(path):
            grouped.setdefault(method, []).append(rep)
    if not grouped:
        raise ValueError("no report rows found")
    return {m: mean_report(reps) for m, reps in grouped.items()}


def cmd_report(paths: Sequence[str | Path]) -> str:
    """Metrics-by-method table of test means; ``*`` marks the best per row."""
    if not paths:
        raise ValueError("need at least one evaluation CSV")
    means = collect_means(paths)
    methods = list(means)
    width = max(10, *(len(m) + 2 for m in methods))
    lines = ["metric".ljust(8) + "".join(m.rjust(width) for m in methods)]
    for metric in METRIC_NAMES:
        best = best_methods(means, metric)
        cells = []
        for m in methods:
            v = getattr(means[m], metric)
            text = "inf" if v == math.inf else f"{v:.4g}" if abs(v) >= 1000 else f"{v:.4f}"
            cells.append((text + ("*" if m in best else " ")).rjust(width))
        lines.append(metric.ljust(8) + "".join(cells))
    return "\n".join(lines)
