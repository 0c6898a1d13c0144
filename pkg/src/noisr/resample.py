"""Decimation and classical up-sampling baselines.

Geometry is sample-aligned: low-resolution pixel ``(r, c)`` sits at
high-resolution position ``(k*r, k*c)``, which is exactly the pixel kept by
:func:`decimate`. Both interpolators therefore reproduce kept pixels exactly.
"""
from __future__ import annotations

import numpy as np

from .image import as_grid

FACTORS = (2, 4)
KEYS_A = -0.5


def check_factor(k: int) -> int:
    if k not in FACTORS:
        raise ValueError(f"sampling factor must be one of {FACTORS}, got {k}")
    return int(k)


def decimate(n: np.ndarray, k: int) -> np.ndarray:
    """Keep rows and columns whose index is a multiple of ``k``."""
    n = as_grid(n)
    check_factor(k)
    h, w = n.shape
    if h % k or w % k:
        raise ValueError(f"image {h}x{w} not divisible by factor {k}")
    return n[::k, ::k].copy()


def cubic_kernel(s, a: float = KEYS_A):
    """Keys cubic-convolution kernel."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    s2, s3 = s * s, s * s * s
    near = (a + 2.0) * s3 - (a + 3.0) * s2 + 1.0
    far = a * s3 - 5.0 * a * s2 + 8.0 * a * s - 4.0 * a
    out = np.where(s <= 1.0, near, np.where(s < 2.0, far, 0.0))
    return out if out.ndim else float(out)


def _interp_matrix(n: int, k: int, taps: range, weight) -> np.ndarray:
    """(k*n, n) matrix mapping samples to the k-times denser aligned grid.

    Tap indices falling outside ``[0, n)`` are clamped (edge replication).
    """
    mat = np.zeros((k * n, n))
    for o in range(k * n):
        i, rem = divmod(o, k)
        phase = rem / k
        for t in taps:
            j = min(max(i + t, 0), n - 1)
            mat[o, j] += weight(phase - t)
    return mat


def _separable(l: np.ndarray, k: int, taps: range, weight) -> np.ndarray:
    h, w = l.shape
    rows = _interp_matrix(h, k, taps, weight)
    cols = _interp_matrix(w, k, taps, weight)
    return rows @ l @ cols.T


def upsample_cc(l: np.ndarray, k: int, a: float = KEYS_A) -> np.ndarray:
    """Cubic-convolution up-sampling over the 4-tap neighbourhood per axis."""
    l = as_grid(l)
    check_factor(k)
    if min(l.shape) < 4:
        raise ValueError(f"cubic convolution needs at least 4x4 input, got {l.shape}")
    out = _separable(l, k, range(-1, 3), lambda s: cubic_kernel(s, a))
    return np.clip(out, 0.0, 1.0)


def _tent(s: float) -> float:
    return max(0.0, 1.0 - abs(s))


def upsample_bilinear(l: np.ndarray, k: int) -> np.ndarray:
    l = as_grid(l)
    check_factor(k)
    if min(l.shape) < 2:
        raise ValueError(f"bilinear interpolation needs at least 2x2 input, got {l.shape}")
    out = _separable(l, k, range(0, 2), _tent)
    return np.clip(out, 0.0, 1.0)


UPSAMPLERS = {"cc": upsample_cc, "bilinear": upsample_bilinear}
