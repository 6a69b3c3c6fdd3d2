"""Full-reference similarity metrics: PSNR, SSIM and FSIM.

FSIM follows the phase-congruency formulation of Zhang et al. (2011) on the
luma channel, with Kovesi's log-Gabor phase congruency and a Scharr gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .distortions import as_image

LUMA = np.array([0.299, 0.587, 0.114])


def luma(img) -> np.ndarray:
    """Rec. 601 luma on the 0..255 scale."""
    return as_image(img) @ LUMA * 255.0


def _check_pair(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB over all channels on the 8-bit scale; ``inf`` for identical inputs."""
    a, b = _check_pair(a, b)
    mse = np.mean((a * 255.0 - b * 255.0) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * math.log10(255.0 ** 2 / mse))


# ---------------------------------------------------------------------------
# SSIM

SSIM_WIN = 11
SSIM_SIGMA = 1.5


def _ssim_window() -> np.ndarray:
    x = np.arange(SSIM_WIN) - SSIM_WIN // 2
    g = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


_WIN1D = _ssim_window()


def _valid_filter(x: np.ndarray) -> np.ndarray:
    r = SSIM_WIN // 2
    y = ndimage.correlate1d(x, _WIN1D, axis=0, mode="constant")
    y = ndimage.correlate1d(y, _WIN1D, axis=1, mode="constant")
    return y[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim_map(a, b) -> np.ndarray:
    a, b = _check_pair(a, b)
    x, y = luma(a), luma(b)
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"image smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    mx, my = _valid_filter(x), _valid_filter(y)
    sxx = _valid_filter(x * x) - mx * mx
    syy = _valid_filter(y * y) - my * my
    sxy = _valid_filter(x * y) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(a, b) -> float:
    return float(np.mean(ssim_map(a, b)))


# ---------------------------------------------------------------------------
# phase congruency

@dataclass(frozen=True)
class PCParams:
    scales: int = 4
    orientations: int = 4
    min_wavelength: float = 6.0
    mult: float = 2.0
    sigma_on_f: float = 0.55
    theta_sigma: float = 0.4
    k: float = 2.0
    noise_rescale: float = 1.7
    eps: float = 1e-4


PC_DEFAULTS = PCParams()


@lru_cache(maxsize=32)
def _filter_bank(rows: int, cols: int, p: PCParams):
    def freq(n):
        # matches fftfreq ordering: 0 at index 0, range [-0.5, 0.5)
        return np.fft.fftfreq(n)

    fx = freq(cols)[None, :]
    fy = freq(rows)[:, None]
    radius = np.sqrt(fx ** 2 + fy ** 2)
    theta = np.arctan2(-fy, fx)
    radius[0, 0] = 1.0
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** (2 * 15))

    log_gabor = []
    for s in range(p.scales):
        fo = 1.0 / (p.min_wavelength * p.mult ** s)
        lg = np.exp(-(np.log(radius / fo)) ** 2 / (2 * math.log(p.sigma_on_f) ** 2)) * lowpass
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    bank = np.empty((p.orientations, p.scales, rows, cols))
    for o in range(p.orientations):
        angle = o * math.pi / p.orientations
        ds = sin_t * math.cos(angle) - cos_t * math.sin(angle)
        dc = cos_t * math.cos(angle) + sin_t * math.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-dtheta ** 2 / (2 * p.theta_sigma ** 2))
        for s in range(p.scales):
            bank[o, s] = log_gabor[s] * spread
    spatial = np.real(np.fft.ifft2(bank)) * math.sqrt(rows * cols)
    sum_an2 = np.sum(spatial ** 2, axis=(1, 2, 3))
    sum_aiaj = np.zeros(p.orientations)
    for si in range(p.scales - 1):
        for sj in range(si + 1, p.scales):
            sum_aiaj += np.sum(spatial[:, si] * spatial[:, sj], axis=(1, 2))
    em_n = np.sum(bank[:, 0] ** 2, axis=(1, 2))
    bank.setflags(write=False)
    return bank, sum_an2, sum_aiaj, em_n


def phase_congruency(plane: np.ndarray, p: PCParams = PC_DEFAULTS) -> np.ndarray:
    """Kovesi phase congruency map (summed over orientations) of a 2-D array."""
    rows, cols = plane.shape
    bank, sum_an2, sum_aiaj, em_n = _filter_bank(rows, cols, p)
    eo = np.fft.ifft2(np.fft.fft2(plane)[None, None] * bank)  # O x S x H x W complex
    even, odd = eo.real, eo.imag
    an = np.abs(eo)
    sum_e = even.sum(axis=1)
    sum_o = odd.sum(axis=1)
    x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + p.eps
    mean_e = (sum_e / x_energy)[:, None]
    mean_o = (sum_o / x_energy)[:, None]
    energy = np.sum(even * mean_e + odd * mean_o - np.abs(even * mean_o - odd * mean_e), axis=1)

    median_e2n = np.median((an[:, 0] ** 2).reshape(p.orientations, -1), axis=1)
    mean_e2n = -median_e2n / math.log(0.5)
    noise_power = mean_e2n / em_n
    noise_energy2 = 2 * noise_power * sum_an2 + 4 * noise_power * sum_aiaj
    tau = np.sqrt(noise_energy2 / 2)
    threshold = (tau * math.sqrt(math.pi / 2) + p.k * np.sqrt((2 - math.pi / 2) * tau ** 2)) / p.noise_rescale
    energy = np.maximum(energy - threshold[:, None, None], 0.0)

    an_all = an.sum(axis=(0, 1))
    energy_all = energy.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        pc = np.where(an_all > 0, energy_all / np.where(an_all > 0, an_all, 1.0), 0.0)
    return pc


SCHARR_X = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]], dtype=np.float64) / 16.0


def gradient_magnitude(plane: np.ndarray) -> np.ndarray:
    # replicate borders so a constant offset leaves the map unchanged
    gx = ndimage.correlate(plane, SCHARR_X, mode="nearest")
    gy = ndimage.correlate(plane, SCHARR_X.T, mode="nearest")
    return np.sqrt(gx ** 2 + gy ** 2)


def _downsample(plane: np.ndarray) -> np.ndarray:
    f = max(1, round(min(plane.shape) / 256))
    if f == 1:
        return plane
    smoothed = ndimage.uniform_filter(plane, size=f, mode="constant") if f > 1 else plane
    return smoothed[::f, ::f]


T1 = 0.85
T2 = 160.0
MIN_FSIM_SIZE = 32


def fsim(a, b, p: PCParams = PC_DEFAULTS) -> tuple[float, float]:
    """Return (FSIM score, phase-congruency mass sum(PC_m)).

    A pair with no phase-congruency mass at all is scored 1.0.
    """
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < MIN_FSIM_SIZE:
        raise ValueError(f"FSIM needs images of at least {MIN_FSIM_SIZE}x{MIN_FSIM_SIZE}")
    ya, yb = _downsample(luma(a)), _downsample(luma(b))
    pc_a, pc_b = phase_congruency(ya, p), phase_congruency(yb, p)
    g_a, g_b = gradient_magnitude(ya), gradient_magnitude(yb)
    s_pc = (2 * pc_a * pc_b + T1) / (pc_a ** 2 + pc_b ** 2 + T1)
    s_g = (2 * g_a * g_b + T2) / (g_a ** 2 + g_b ** 2 + T2)
    pc_m = np.maximum(pc_a, pc_b)
    mass = float(pc_m.sum())
    if mass == 0:
        return 1.0, 0.0
    return float(np.sum(s_pc * s_g * pc_m) / mass), mass


@dataclass(frozen=True)
class PatchLabel:
    s0: float
    w0: float


def patch_pseudo_labels(distorted, pristine) -> PatchLabel:
    """FSIM score as the quality label; PC mass per pixel as the weight label."""
    distorted, pristine = _check_pair(distorted, pristine)
    score, mass = fsim(distorted, pristine)
    h, w = distorted.shape[:2]
    return PatchLabel(score, mass / (h * w))
