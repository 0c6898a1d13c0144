"""Phase congruency from a log-Gabor filter bank.

Follows Kovesi's frequency-domain construction in the variant used by FSIM
(energy and amplitude summed over orientations before the ratio is taken),
with a noise threshold estimated from the finest scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class FsimParams:
    scales: int = 4
    orientations: int = 4
    min_wavelength: float = 6.0
    mult: float = 2.0
    sigma_onf: float = 0.55
    d_theta_on_sigma: float = 1.2
    noise_k: float = 2.0
    t1: float = 0.85
    t2: float = 160.0
    eps: float = 1e-4

    def __post_init__(self):
        if self.scales < 1 or self.orientations < 1:
            raise ValueError("scales and orientations must be >= 1")
        if not (self.t1 > 0 and self.t2 > 0):
            raise ValueError("T1 and T2 must be positive")


@lru_cache(maxsize=32)
def filter_bank(shape: tuple[int, int], params: FsimParams):
    """Radial log-Gabor filters per scale and angular spreads per orientation.

    Cached per (shape, params); returned arrays are read-only.
    """
    rows, cols = shape
    u = np.fft.fftfreq(cols)[None, :]
    v = np.fft.fftfreq(rows)[:, None]
    radius = np.sqrt(u * u + v * v)
    radius[0, 0] = 1.0
    theta = np.arctan2(-v, u)
    sintheta, costheta = np.sin(theta), np.cos(theta)

    # suppress the corners of the spectrum
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)
    log_gabor = []
    for s in range(params.scales):
        fo = 1.0 / (params.min_wavelength * params.mult ** s)
        lg = np.exp(-(np.log(radius / fo) ** 2) / (2.0 * np.log(params.sigma_onf) ** 2))
        lg *= lowpass
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    theta_sigma = np.pi / params.orientations / params.d_theta_on_sigma
    spreads = []
    for o in range(params.orientations):
        angle = o * np.pi / params.orientations
        ds = sintheta * np.cos(angle) - costheta * np.sin(angle)
        dc = costheta * np.cos(angle) + sintheta * np.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spreads.append(np.exp(-(dtheta ** 2) / (2.0 * theta_sigma ** 2)))

    bank = np.stack(log_gabor), np.stack(spreads)
    for arr in bank:
        arr.setflags(write=False)
    return bank


def phase_congruency(x: np.ndarray, params: FsimParams = FsimParams()) -> np.ndarray:
    """Per-pixel phase congruency in ``[0, 1]``.

    The image is standardized first, which makes the map exactly invariant
    to positive affine intensity changes; constant images give zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    if std <= 1e-12 * max(1.0, abs(float(x.mean()))):
        return np.zeros_like(x)
    img = (x - x.mean()) / std
    log_gabor, spreads = filter_bank(x.shape, params)
    spectrum = np.fft.fft2(img)

    energy_all = np.zeros(x.shape)
    amplitude_all = np.zeros(x.shape)
    for spread in spreads:
        filters = log_gabor * spread
        responses = np.fft.ifft2(spectrum[None] * filters, axes=(-2, -1))
        even, odd = responses.real, responses.imag
        amplitude = np.abs(responses)
        sum_even, sum_odd = even.sum(0), odd.sum(0)
        x_energy = np.sqrt(sum_even ** 2 + sum_odd ** 2) + params.eps
        mean_even, mean_odd = sum_even / x_energy, sum_odd / x_energy
        energy = (even * mean_even + odd * mean_odd
                  - np.abs(even * mean_odd - odd * mean_even)).sum(0)

        # noise energy from the finest scale, Rayleigh model
        em_n = float((filters[0] ** 2).sum())
        median_e2n = float(np.median(amplitude[0] ** 2))
        noise_power = -median_e2n / np.log(0.5) / em_n
        ifft_filters = np.real(np.fft.ifft2(filters, axes=(-2, -1))) * np.sqrt(x.size)
        sum_an2 = float((ifft_filters ** 2).sum())
        sum_aiaj = 0.0
        for i in range(params.scales - 1):
            for j in range(i + 1, params.scales):
                sum_aiaj += float((ifft_filters[i] * ifft_filters[j]).sum())
        noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj
        tau = np.sqrt(max(noise_energy2, 0.0) / 2.0)
        noise_mean = tau * np.sqrt(np.pi / 2.0)
        noise_sigma = np.sqrt((2.0 - np.pi / 2.0) * tau ** 2)
        threshold = (noise_mean + params.noise_k * noise_sigma) / 1.7

        energy_all += np.maximum(energy - threshold, 0.0)
        amplitude_all += amplitude.sum(0)
    return energy_all / (amplitude_all + params.eps)
