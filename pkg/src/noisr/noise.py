"""Synthetic noise, residual log-likelihood and residual histograms."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .image import as_grid, check_same_shape

KINDS = ("gaussian", "speckle")
# floor on the reference intensity in the speckle density, keeps it non-singular at G=0
SPECKLE_EPS = 1e-3
DEFAULT_BINS = 101


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    mu: float = 0.0
    sigma: float = 0.02

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if not self.sigma > 0:
            raise ValueError(f"noise sigma must be positive, got {self.sigma}")
        if self.kind == "speckle" and self.mu != 0.0:
            object.__setattr__(self, "mu", 0.0)


def noise_rng(seed) -> np.random.Generator:
    # Philox is counter-based: draws are a fixed function of (key, position)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def apply_noise(g: np.ndarray, spec: NoiseSpec, seed) -> np.ndarray:
    """Return ``clip(G + eta)`` (gaussian) or ``clip(G + G * eta)`` (speckle).

    ``seed`` is anything accepted by :class:`numpy.random.SeedSequence`, so
    per-image streams can be keyed as ``(base_seed, index)``.
    """
    g = as_grid(g)
    eta = noise_rng(seed).standard_normal(g.shape)
    if spec.kind == "gaussian":
        noisy = g + (spec.mu + spec.sigma * eta)
    else:
        noisy = g + g * (spec.sigma * eta)
    return np.clip(noisy, 0.0, 1.0)


def log_likelihood(residual, reference, spec: NoiseSpec):
    """Mean log-density of ``residual`` under the noise model.

    Works on numpy arrays (returns a float) and on torch tensors (returns a
    differentiable scalar tensor). For speckle the per-pixel std is
    ``sigma * max(reference, SPECKLE_EPS)``.
    """
    if tuple(residual.shape) != tuple(reference.shape):
        raise ValueError(f"dimension mismatch: {tuple(residual.shape)} vs {tuple(reference.shape)}")
    half_log_2pi = 0.5 * math.log(2.0 * math.pi)
    if spec.kind == "gaussian":
        z = (residual - spec.mu) / spec.sigma
        logp = -0.5 * z * z - (math.log(spec.sigma) + half_log_2pi)
    elif isinstance(residual, torch.Tensor):
        scale = spec.sigma * torch.clamp(torch.as_tensor(reference, dtype=residual.dtype), min=SPECKLE_EPS)
        z = residual / scale
        logp = -0.5 * z * z - torch.log(scale) - half_log_2pi
    else:
        scale = spec.sigma * np.maximum(np.asarray(reference, dtype=np.float64), SPECKLE_EPS)
        z = np.asarray(residual, dtype=np.float64) / scale
        logp = -0.5 * z * z - np.log(scale) - half_log_2pi
    out = logp.mean()
    return out if isinstance(out, torch.Tensor) else float(out)


def log_likelihood_grad(residual: np.ndarray, reference: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Closed-form gradient of :func:`log_likelihood` w.r.t. each residual pixel."""
    residual = np.asarray(residual, dtype=np.float64)
    m = residual.size
    if spec.kind == "gaussian":
        return -(residual - spec.mu) / (spec.sigma ** 2 * m)
    scale = spec.sigma * np.maximum(np.asarray(reference, dtype=np.float64), SPECKLE_EPS)
    return -residual / (scale ** 2 * m)


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    sample_mean: float
    sample_std: float

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path: str | Path) -> None:
        lines = ["bin_left,bin_right,count"]
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            lines.append(f"{float(lo)!r},{float(hi)!r},{int(c)}")
        lines.append(f"# mean={self.sample_mean!r} std={self.sample_std!r} n={self.n}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "Histogram":
        left, right, counts = [], [], []
        mean = std = float("nan")
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                fields = dict(kv.split("=", 1) for kv in line[1:].split())
                mean, std = float(fields["mean"]), float(fields["std"])
            elif line and not line.startswith("bin_left"):
                lo, hi, c = line.split(",")
                left.append(float(lo))
                right.append(float(hi))
                counts.append(int(c))
        edges = np.asarray(left + right[-1:])
        return cls(edges, np.asarray(counts, dtype=np.int64), mean, std)


def histogram_half_range(residual: np.ndarray, sigma: float) -> float:
    return max(4.0 * sigma, float(np.max(np.abs(residual))))


def residual_histogram(p, g, bins: int = DEFAULT_BINS, sigma: float = 0.02,
                       half_range: float | None = None) -> Histogram:
    """Histogram of ``P - G`` over ``[-r, r]`` with ``r = max(4 sigma, max|P - G|)``.

    Pass ``half_range`` to share bin edges across several histograms.
    Clipping during noise synthesis truncates the tails near 0 and 1.
    """
    p, g = as_grid(p), as_grid(g)
    check_same_shape(p, g)
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    residual = (p - g).ravel()
    r = histogram_half_range(residual, sigma) if half_range is None else float(half_range)
    return histogram_from_residuals(residual, bins, r)


def histogram_from_residuals(residual: np.ndarray, bins: int, half_range: float) -> Histogram:
    """Histogram of pooled residual samples over ``[-half_range, half_range]``."""
    residual = np.asarray(residual, dtype=np.float64).ravel()
    edges = np.linspace(-half_range, half_range, bins + 1)
    counts, _ = np.histogram(residual, bins=edges)
    return Histogram(edges, counts.astype(np.int64), float(residual.mean()), float(residual.std()))
