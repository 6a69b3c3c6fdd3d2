"""Synthetic distortions: Gaussian blur, white noise, JPEG-like and JPEG2000-like
compression, each at five severity levels.

Images are float arrays of shape (H, W, 3) with values in [0, 1].
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class Family(str, enum.Enum):
    GAUSSIAN_BLUR = "GaussianBlur"
    WHITE_NOISE = "WhiteNoise"
    JPEG = "JpegLike"
    JP2K = "Jp2kLike"


FAMILIES = tuple(Family)

# level 1 (mild) .. level 5 (severe)
SEVERITY = {
    Family.GAUSSIAN_BLUR: (0.9, 1.7, 3.0, 5.0, 8.0),
    Family.WHITE_NOISE: (0.02, 0.045, 0.09, 0.18, 0.35),
    Family.JPEG: (85, 60, 35, 18, 8),
    Family.JP2K: (0.2, 0.1, 0.05, 0.025, 0.012),
}


@dataclass(frozen=True)
class DistortionSpec:
    family: Family
    level: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.level not in (1, 2, 3, 4, 5):
            raise ValueError(f"level must be in 1..5, got {self.level}")

    @property
    def parameter(self):
        return SEVERITY[self.family][self.level - 1]


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected an H x W x 3 image, got shape {arr.shape}")
    return arr


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_axis(arr: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="reflect")
    out = np.zeros_like(arr)
    n = arr.shape[axis]
    for i, kv in enumerate(k):
        out += kv * np.take(padded, range(i, i + n), axis=axis)
    return out


def gaussian_blur(img, sigma: float) -> np.ndarray:
    img = as_image(img)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel1d(sigma)
    out = _filter_axis(_filter_axis(img, k, 0), k, 1)
    return np.clip(out, 0.0, 1.0)


def white_noise(img, sigma: float, seed: int) -> np.ndarray:
    img = as_image(img)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return np.clip(img + rng.normal(0.0, sigma, img.shape), 0.0, 1.0)


# ---------------------------------------------------------------------------
# JPEG-like

LUMA_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    m[0] /= math.sqrt(2.0)
    return m


DCT8 = _dct_matrix(8)


def quant_table(quality: int) -> np.ndarray:
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.maximum(1.0, np.round(LUMA_QTABLE * scale / 100.0))


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128, ycc[..., 2] - 128
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _pad_to_multiple(arr: np.ndarray, m: int) -> np.ndarray:
    h, w = arr.shape[:2]
    ph, pw = (-h) % m, (-w) % m
    if ph == 0 and pw == 0:
        return arr
    return np.pad(arr, ((0, ph), (0, pw)) + ((0, 0),) * (arr.ndim - 2), mode="edge")


def jpeg_like(img, quality: int) -> np.ndarray:
    """Quantize 8x8 block DCT coefficients of Y, Cb and Cr (no subsampling)."""
    img = as_image(img)
    if not isinstance(quality, (int, np.integer)) or not 1 <= quality <= 100:
        raise ValueError(f"quality must be an int in 1..100, got {quality!r}")
    h, w = img.shape[:2]
    ycc = _pad_to_multiple(rgb_to_ycbcr(img * 255.0), 8) - 128.0
    hp, wp = ycc.shape[:2]
    blocks = ycc.reshape(hp // 8, 8, wp // 8, 8, 3).transpose(0, 2, 4, 1, 3)
    coef = DCT8 @ blocks @ DCT8.T
    q = quant_table(int(quality))
    coef = np.round(coef / q) * q
    blocks = DCT8.T @ coef @ DCT8
    ycc = blocks.transpose(0, 3, 1, 4, 2).reshape(hp, wp, 3)[:h, :w] + 128.0
    return np.clip(ycbcr_to_rgb(ycc) / 255.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# JPEG2000-like (orthonormal Haar)

HAAR_LEVELS = 4
_S = 1.0 / math.sqrt(2.0)


def _haar_rows(a: np.ndarray) -> np.ndarray:
    lo = (a[:, 0::2] + a[:, 1::2]) * _S
    hi = (a[:, 0::2] - a[:, 1::2]) * _S
    return np.concatenate([lo, hi], axis=1)


def _ihaar_rows(a: np.ndarray) -> np.ndarray:
    n = a.shape[1] // 2
    lo, hi = a[:, :n], a[:, n:]
    out = np.empty_like(a)
    out[:, 0::2] = (lo + hi) * _S
    out[:, 1::2] = (lo - hi) * _S
    return out


def haar2d(plane: np.ndarray, levels: int = HAAR_LEVELS) -> np.ndarray:
    out = plane.astype(np.float64, copy=True)
    h, w = out.shape
    for _ in range(levels):
        sub = out[:h, :w]
        sub = _haar_rows(sub)
        sub = _haar_rows(sub.T).T
        out[:h, :w] = sub
        h, w = h // 2, w // 2
    return out


def ihaar2d(coef: np.ndarray, levels: int = HAAR_LEVELS) -> np.ndarray:
    out = coef.astype(np.float64, copy=True)
    hs = [(out.shape[0] >> i, out.shape[1] >> i) for i in range(levels)]
    for h, w in reversed(hs):
        sub = out[:h, :w]
        sub = _ihaar_rows(sub.T).T
        sub = _ihaar_rows(sub)
        out[:h, :w] = sub
    return out


def jp2k_like(img, keep_fraction: float) -> np.ndarray:
    """Keep the largest-magnitude Haar coefficients of each channel."""
    img = as_image(img)
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    h, w = img.shape[:2]
    m = 2 ** HAAR_LEVELS
    padded = _pad_to_multiple(img, m)
    out = np.empty_like(padded)
    for c in range(3):
        coef = haar2d(padded[..., c])
        if keep_fraction < 1:
            flat = np.abs(coef).ravel()
            k = max(1, int(round(keep_fraction * flat.size)))
            drop = np.argpartition(flat, flat.size - k)[: flat.size - k]
            coef.ravel()[drop] = 0.0
        out[..., c] = ihaar2d(coef)
    return np.clip(out[:h, :w], 0.0, 1.0)


def apply(spec: DistortionSpec | None, img) -> np.ndarray:
    """Distort ``img`` according to ``spec``; ``None`` returns an untouched copy."""
    img = as_image(img)
    if spec is None:
        return img.copy()
    p = spec.parameter
    if spec.family is Family.GAUSSIAN_BLUR:
        return gaussian_blur(img, p)
    if spec.family is Family.WHITE_NOISE:
        return white_noise(img, p, spec.seed)
    if spec.family is Family.JPEG:
        return jpeg_like(img, p)
    return jp2k_like(img, p)
