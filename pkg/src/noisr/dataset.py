"""Triplet datasets (ground truth, noisy, low-res) and their CSV manifests."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image import (NormalizationStats, center_crop_to_multiple, compute_dataset_stats,
                    load_image, quantize, save_image)
from .noise import NoiseSpec, apply_noise
from .resample import check_factor, decimate
from .train import Triplet

MANIFEST_TAG = "noisr-manifest v1"
MANIFEST_COLUMNS = ("image_id", "split", "ground_truth", "noisy", "low_res")
SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = (".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class ManifestError(Exception):
    """Malformed or inconsistent manifest."""


@dataclass(frozen=True)
class Record:
    image_id: str
    split: str
    ground_truth: str
    noisy: str
    low_res: str


@dataclass
class Manifest:
    noise: NoiseSpec
    factor: int
    seed: int
    stats: NormalizationStats
    records: list[Record]
    root: Path = Path(".")

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}

    def to_text(self) -> str:
        buf = io.StringIO()
        header = [MANIFEST_TAG, f"noise={self.noise.kind}", f"mu={self.noise.mu!r}",
                  f"sigma={self.noise.sigma!r}", f"factor={self.factor}", f"seed={self.seed}",
                  f"stats_mean={self.stats.mean!r}", f"stats_std={self.stats.std!r}"]
        for line in header:
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in self.records:
            writer.writerow([r.image_id, r.split, r.ground_truth, r.noisy, r.low_res])
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    def load_split(self, name: str) -> list[Triplet]:
        return [Triplet(r.image_id, load_image(self.root / r.low_res), load_image(self.root / r.noisy),
                        load_image(self.root / r.ground_truth)) for r in self.split(name)]


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    text = path.read_text()
    header, body = {}, []
    lines = text.splitlines()
    if not lines or lines[0] != f"# {MANIFEST_TAG}":
        raise ManifestError(f"{path}: missing '{MANIFEST_TAG}' header")
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
        else:
            body.append(line)
    try:
        noise = NoiseSpec(header["noise"], float(header["mu"]), float(header["sigma"]))
        factor = check_factor(int(header["factor"]))
        stats = NormalizationStats(float(header["stats_mean"]), float(header["stats_std"]))
        seed = int(header["seed"])
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"{path}: bad header ({exc})") from exc
    reader = csv.reader(body)
    if tuple(next(reader, ())) != MANIFEST_COLUMNS:
        raise ManifestError(f"{path}: expected columns {','.join(MANIFEST_COLUMNS)}")
    records = []
    for rec in reader:
        if not rec:
            continue
        if len(rec) != len(MANIFEST_COLUMNS) or rec[1] not in SPLITS:
            raise ManifestError(f"{path}: malformed record {rec}")
        records.append(Record(*rec))
    return Manifest(noise, factor, seed, stats, records, path.parent)


def list_images(src_dir: str | Path) -> list[Path]:
    src = Path(src_dir)
    if not src.is_dir():
        raise FileNotFoundError(f"{src}: not a directory")
    return sorted(p for p in src.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def build_dataset(src_dir: str | Path, out_dir: str | Path, noise: NoiseSpec, factor: int,
                  seed: int = 0, splits: tuple[int, int, int] = (400, 70, 30)) -> Manifest:
    """Shuffle, split, crop, add noise and decimate; writes images and ``manifest.csv``.

    Ground truth is quantized to 8 bits before noise is added, and the noisy
    image before decimation, so stored files reproduce every relation exactly.
    """
    check_factor(factor)
    if any(s < 0 for s in splits):
        raise ValueError(f"split sizes must be non-negative: {splits}")
    files = list_images(src_dir)
    total = sum(splits)
    if total == 0 or len(files) < total:
        raise ValueError(f"{src_dir}: need {total} images, found {len(files)}")
    stems = [f.stem for f in files]
    if len(set(stems)) != len(stems):
        raise ValueError(f"{src_dir}: duplicate image names")

    out = Path(out_dir)
    for sub in ("gt", "noisy", "low"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    order = np.random.default_rng(seed).permutation(len(files))[:total]
    labels = [name for name, count in zip(SPLITS, splits) for _ in range(count)]

    records, train_lows = [], []
    for rank, (idx, split) in enumerate(zip(order, labels)):
        src = files[idx]
        truth = quantize(center_crop_to_multiple(load_image(src), factor)) / 255.0
        noisy = quantize(apply_noise(truth, noise, (seed, rank))) / 255.0
        low = decimate(noisy, factor)
        rec = Record(src.stem, split, f"gt/{src.stem}.png", f"noisy/{src.stem}.png", f"low/{src.stem}.png")
        save_image(truth, out / rec.ground_truth)
        save_image(noisy, out / rec.noisy)
        save_image(low, out / rec.low_res)
        records.append(rec)
        if split == "train":
            train_lows.append(low)

    stats = compute_dataset_stats(train_lows) if train_lows else NormalizationStats()
    manifest = Manifest(noise, factor, seed, stats, records, out)
    manifest.save(out / "manifest.csv")
    return manifest


def desk_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Synthetic scene: shaded background, blurred shapes and a textured patch, in ``[0.1, 0.9]``."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.5 + rng.uniform(-0.2, 0.2) * xx + rng.uniform(-0.2, 0.2) * yy
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.05, 0.3, size=2)
        angle = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(angle) + dy * np.sin(angle)
        v = -dx * np.sin(angle) + dy * np.cos(angle)
        if rng.random() < 0.5:
            mask = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        else:
            mask = (np.abs(u) <= rx) & (np.abs(v) <= ry)
        img = np.where(mask, img + rng.uniform(-0.35, 0.35), img)
    fy, fx = rng.uniform(-0.15, 0.15, size=2) * size
    cy, cx = rng.uniform(0.2, 0.8, size=2)
    bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.15 ** 2))
    img += 0.08 * bump * np.sin(2 * np.pi * (fy * yy + fx * xx))
    img = ndimage.gaussian_filter(img, 0.8, mode="nearest")
    lo, hi = img.min(), img.max()
    return 0.1 + 0.8 * (img - lo) / max(hi - lo, 1e-12)


def write_desk_images(out_dir: str | Path, count: int, size: int = 128, seed: int = 0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        path = out / f"desk_{i:03d}.png"
        save_image(desk_image(size, rng), path)
        paths.append(path)
    return paths
