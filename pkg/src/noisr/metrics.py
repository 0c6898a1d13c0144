"""Full-reference quality metrics on the 8-bit intensity scale.

Every metric takes ``(n, p)``: the reference (noisy target) first, then the
candidate. Inputs are grids in ``[0, 1]``; they are clipped and scaled by
255 here so values are comparable with published 8-bit tables.
"""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage, signal

from .image import as_grid, check_same_shape
from .phasecong import FsimParams, phase_congruency

PEAK = 255.0
SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0
SCHARR_Y = SCHARR_X.T.copy()


def to_8bit_scale(img) -> np.ndarray:
    return np.clip(as_grid(img), 0.0, 1.0) * PEAK


def _pair(n, p) -> tuple[np.ndarray, np.ndarray]:
    n, p = to_8bit_scale(n), to_8bit_scale(p)
    check_same_shape(n, p)
    return n, p


def mse(n, p) -> float:
    n, p = _pair(n, p)
    return float(np.mean((n - p) ** 2))


def nrmse(n, p) -> float:
    """``sqrt(sum (N-P)^2 / sum N^2)``, anchored on the reference."""
    n, p = _pair(n, p)
    num = float(np.sum((n - p) ** 2))
    den = float(np.sum(n ** 2))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return math.sqrt(num / den)


def ncc(n, p) -> float:
    """Pearson correlation of the two pixel populations.

    Constant inputs have no defined correlation: identical images give 1,
    anything else 0.
    """
    n, p = _pair(n, p)
    dn, dp = n - n.mean(), p - p.mean()
    den = math.sqrt(float(np.sum(dn * dn)) * float(np.sum(dp * dp)))
    if den == 0.0:
        return 1.0 if np.array_equal(n, p) else 0.0
    return float(np.clip(np.sum(dn * dp) / den, -1.0, 1.0))


def psnr(n, p) -> float:
    """PSNR with the reference maximum as peak; ``inf`` marks identical images."""
    err = mse(n, p)
    if err == 0.0:
        return math.inf
    peak = float(to_8bit_scale(n).max())
    if peak == 0.0:
        return -math.inf
    return 10.0 * math.log10(peak * peak / err)


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    window_size: int = 11
    window_sigma: float = 1.5
    mode: str = "window"

    def __post_init__(self):
        if self.mode not in ("window", "global"):
            raise ValueError(f"unknown SSIM mode {self.mode!r}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("SSIM stabilizers must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * PEAK) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * PEAK) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2.0


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def lcs(mu_n, mu_p, var_n, var_p, cov, params: SsimParams):
    """Luminance, contrast and structure terms from (local) moments."""
    sd_n = np.sqrt(np.maximum(var_n, 0.0))
    sd_p = np.sqrt(np.maximum(var_p, 0.0))
    lum = (2.0 * mu_n * mu_p + params.c1) / (mu_n ** 2 + mu_p ** 2 + params.c1)
    con = (2.0 * sd_n * sd_p + params.c2) / (var_n + var_p + params.c2)
    struct = (cov + params.c3) / (sd_n * sd_p + params.c3)
    return lum, con, struct


def global_moments(n: np.ndarray, p: np.ndarray):
    dn, dp = n - n.mean(), p - p.mean()
    return n.mean(), p.mean(), np.mean(dn * dn), np.mean(dp * dp), np.mean(dn * dp)


def local_moments(n: np.ndarray, p: np.ndarray, window: np.ndarray):
    """Weighted means, variances and covariance at every valid window position."""
    def filt(x):
        return signal.correlate(x, window, mode="valid", method="direct")

    mu_n, mu_p = filt(n), filt(p)
    var_n = filt(n * n) - mu_n ** 2
    var_p = filt(p * p) - mu_p ** 2
    cov = filt(n * p) - mu_n * mu_p
    return mu_n, mu_p, var_n, var_p, cov


def ssim_map(n, p, params: SsimParams = SsimParams()) -> np.ndarray:
    n, p = _pair(n, p)
    if params.mode == "global":
        mom = global_moments(n, p)
    else:
        if min(n.shape) < params.window_size:
            raise ValueError(f"image {n.shape} smaller than the {params.window_size}px SSIM window")
        mom = local_moments(n, p, gaussian_window(params.window_size, params.window_sigma))
    mu_n, mu_p, var_n, var_p, cov = mom
    lum = (2.0 * mu_n * mu_p + params.c1) / (mu_n ** 2 + mu_p ** 2 + params.c1)
    # with C3 = C2/2 the contrast and structure terms collapse to one ratio
    con_struct = (2.0 * cov + params.c2) / (var_n + var_p + params.c2)
    return np.atleast_2d(lum * con_struct)


def ssim(n, p, params: SsimParams = SsimParams()) -> float:
    return float(np.mean(ssim_map(n, p, params)))


def gradient_magnitude(x: np.ndarray) -> np.ndarray:
    """Scharr gradient magnitude with edge-replicated borders."""
    gx = ndimage.correlate(x, SCHARR_X, mode="nearest")
    gy = ndimage.correlate(x, SCHARR_Y, mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def fsim_from_maps(pc_n, pc_p, gm_n, gm_p, params: FsimParams = FsimParams()) -> float:
    """Pool the PC and gradient similarity maps into a single FSIM score."""
    s_pc = (2.0 * pc_n * pc_p + params.t1) / (pc_n ** 2 + pc_p ** 2 + params.t1)
    s_g = (2.0 * gm_n * gm_p + params.t2) / (gm_n ** 2 + gm_p ** 2 + params.t2)
    s_l = s_pc * s_g
    weight = np.maximum(pc_n, pc_p)
    total = float(weight.sum())
    if total == 0.0:
        # featureless pair: fall back to unweighted pooling
        return float(s_l.mean())
    return float((s_l * weight).sum() / total)


def fsim(n, p, params: FsimParams = FsimParams()) -> float:
    n, p = _pair(n, p)
    return fsim_from_maps(phase_congruency(n, params), phase_congruency(p, params),
                          gradient_magnitude(n), gradient_magnitude(p), params)


def _uiq_value(mu_n, mu_p, var_n, var_p, cov):
    mean_term = mu_n ** 2 + mu_p ** 2
    var_term = var_n + var_p
    with np.errstate(divide="ignore", invalid="ignore"):
        only_mean = 2.0 * mu_n * mu_p / mean_term
        only_var = 2.0 * cov / var_term
        # product of ratios: the product of denominators can underflow for tiny inputs
        full = only_var * only_mean
    out = np.where(var_term == 0.0,
                   np.where(mean_term == 0.0, 1.0, only_mean),
                   np.where(mean_term == 0.0, only_var, full))
    return out


def uiq(n, p, window: int | None = None) -> float:
    """Universal image quality index with the reference as second image.

    ``window=None`` evaluates one global index; an integer gives Wang and
    Bovik's sliding uniform window, mean-pooled over valid positions.
    """
    n, p = _pair(n, p)
    if window is None:
        return float(np.clip(_uiq_value(*global_moments(n, p)), -1.0, 1.0))
    if min(n.shape) < window:
        raise ValueError(f"image {n.shape} smaller than the {window}px UIQ window")
    box = np.full((window, window), 1.0 / window ** 2)
    vals = _uiq_value(*local_moments(n, p, box))
    return float(np.clip(vals, -1.0, 1.0).mean())


@dataclass(frozen=True)
class MetricReport:
    mse: float
    nrmse: float
    ncc: float
    psnr: float
    ssim: float
    fsim: float
    uiq: float

    @property
    def identical(self) -> bool:
        return math.isinf(self.psnr) and self.psnr > 0

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


METRIC_NAMES = tuple(f.name for f in fields(MetricReport))
LOWER_IS_BETTER = frozenset({"mse", "nrmse"})


def evaluate_all(n, p, ssim_params: SsimParams = SsimParams(),
                 fsim_params: FsimParams = FsimParams()) -> MetricReport:
    n, p = as_grid(n), as_grid(p)
    check_same_shape(n, p)
    return MetricReport(
        mse=mse(n, p), nrmse=nrmse(n, p), ncc=ncc(n, p), psnr=psnr(n, p),
        ssim=ssim(n, p, ssim_params), fsim=fsim(n, p, fsim_params), uiq=uiq(n, p),
    )


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise ValueError("no reports to average")
    cols = zip(*(r.as_tuple() for r in reports))
    return MetricReport(*(math.fsum(c) / len(reports) for c in cols))


def format_value(x: float) -> str:
    return "inf" if x == math.inf else repr(float(x))


REPORT_HEADER = ("image_id", "method") + METRIC_NAMES


def write_report_csv(path: str | Path, rows: Iterable[tuple[str, str, MetricReport]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for image_id, method, rep in rows:
            writer.writerow([image_id, method, *(format_value(v) for v in rep.as_tuple())])


def read_report_csv(path: str | Path) -> list[tuple[str, str, MetricReport]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != REPORT_HEADER:
            raise ValueError(f"{path}: expected header {','.join(REPORT_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(REPORT_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(REPORT_HEADER)} fields, got {len(rec)}")
            try:
                values = [float(v) for v in rec[2:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            rows.append((rec[0], rec[1], MetricReport(*values)))
    return rows
