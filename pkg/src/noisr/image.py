"""Grayscale image grids: I/O, normalization and cropping.

An image is a 2-D ``float64`` numpy array of intensities in normalized
units, nominally in ``[0, 1]``. Ground truth, noisy targets, low-resolution
inputs and predictions all share this representation.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image, UnidentifiedImageError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SUPPORTED_SUFFIXES = (".png", ".pgm")


class ImageReadError(ValueError):
    """Raised when a raster cannot be decoded into a grayscale grid."""


def as_grid(img) -> np.ndarray:
    """Validate ``img`` as an image grid and return it as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite intensities")
    return arr


def check_same_shape(*imgs: np.ndarray) -> None:
    shapes = {np.shape(x) for x in imgs}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def clip(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB raster as intensities in ``[0, 1]``.

    RGB is collapsed to luminance with BT.601 weights, computed in float
    (not via Pillow's rounded ``L`` conversion).
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            if mode == "L":
                data = np.asarray(im, dtype=np.float64)
            elif mode in ("RGB", "RGBA"):
                rgb = np.asarray(im, dtype=np.float64)[..., :3]
                data = rgb @ np.asarray(LUMA_WEIGHTS)
            else:
                raise ImageReadError(f"{path}: unsupported pixel mode {mode!r}")
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageReadError(f"{path}: cannot read image ({exc})") from exc
    if data.size == 0:
        raise ImageReadError(f"{path}: zero-size image")
    return data / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """8-bit codes with round-half-up after clipping to ``[0, 1]``."""
    return np.floor(clip(np.asarray(img, dtype=np.float64)) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ValueError(f"{path}: unsupported output format (use .png or .pgm)")
    codes = quantize(as_grid(img))
    Image.fromarray(codes, mode="L").save(path)


@dataclass(frozen=True)
class NormalizationStats:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"normalization std must be positive, got {self.std}")


def normalize(img, stats: NormalizationStats):
    return (img - stats.mean) / stats.std


def denormalize(img, stats: NormalizationStats):
    return img * stats.std + stats.mean


def compute_dataset_stats(images: Iterable[np.ndarray]) -> NormalizationStats:
    """Pooled mean/std over every pixel of every image."""
    total = 0.0
    total_sq = 0.0
    count = 0
    arrays = [as_grid(x) for x in images]
    if not arrays:
        raise ValueError("cannot compute statistics of an empty collection")
    # two-pass for accuracy: pooled mean first
    for x in arrays:
        total += float(x.sum())
        count += x.size
    mean = total / count
    for x in arrays:
        total_sq += float(((x - mean) ** 2).sum())
    std = (total_sq / count) ** 0.5
    if std < 1e-8:
        std = 1.0
    return NormalizationStats(mean=mean, std=std)


def center_crop_to_multiple(img: np.ndarray, k: int) -> np.ndarray:
    """Crop to the largest dims divisible by ``k``; odd leftovers go from bottom/right."""
    img = as_grid(img)
    if k not in (2, 4):
        raise ValueError(f"factor must be 2 or 4, got {k}")
    h, w = img.shape
    if h < k or w < k:
        raise ValueError(f"image {h}x{w} smaller than factor {k}")
    nh, nw = h - h % k, w - w % k
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top:top + nh, left:left + nw]
