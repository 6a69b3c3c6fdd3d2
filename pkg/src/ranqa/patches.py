"""Non-overlapping patch grids."""
from __future__ import annotations

import numpy as np

from .distortions import as_image


def extract_patches(img, size: int = 64) -> tuple[list[np.ndarray], tuple[int, int]]:
    """Row-major P x P tiles; trailing partial rows/columns are dropped."""
    img = as_image(img)
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than one {size}x{size} patch")
    rows, cols = h // size, w // size
    tiles = [img[r * size:(r + 1) * size, c * size:(c + 1) * size].copy()
             for r in range(rows) for c in range(cols)]
    return tiles, (rows, cols)


def assemble_patches(tiles, grid: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`extract_patches` over the covered region."""
    rows, cols = grid
    return np.concatenate([np.concatenate(tiles[r * cols:(r + 1) * cols], axis=1) for r in range(rows)], axis=0)


def patch_array(img, size: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Patches as an N x 3 x P x P float32 batch."""
    tiles, grid = extract_patches(img, size)
    return np.stack(tiles).transpose(0, 3, 1, 2).astype(np.float32), grid
