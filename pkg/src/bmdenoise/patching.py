"""Patch grids, extraction, and weighted aggregation."""

from __future__ import annotations

import math

import numpy as np


class CoverageError(ValueError):
    """Raised when aggregation leaves a pixel with zero total weight."""


def grid_axis(extent: int, n_patch: int, stride: int) -> np.ndarray:
    """Start indices along one axis: multiples of stride, flushed to the border.

    The last start is exactly extent - n_patch; it is appended when the
    stride lattice does not land on it.
    """
    if n_patch < 1 or n_patch > extent:
        raise ValueError(f"n_patch {n_patch} does not fit extent {extent}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    last = extent - n_patch
    starts = list(range(0, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return np.asarray(starts, dtype=np.int64)


def build_grid(height: int, width: int, n_patch: int, stride: int) -> np.ndarray:
    """Patch origins in raster order as an (P, 2) int array of (row, col)."""
    rows = grid_axis(height, n_patch, stride)
    cols = grid_axis(width, n_patch, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def extract_patch(image: np.ndarray, origin, n_patch: int) -> np.ndarray:
    """Copy the n_patch x n_patch patch whose top-left corner is origin."""
    r, c = int(origin[0]), int(origin[1])
    h, w = image.shape
    if r < 0 or c < 0 or r + n_patch > h or c + n_patch > w:
        raise ValueError(f"patch at ({r}, {c}) size {n_patch} exceeds image {h}x{w}")
    return image[r : r + n_patch, c : c + n_patch].copy()


def gaussian_weight(center, pixel, sigma_w: float) -> float:
    """Isotropic Gaussian weight of a pixel about the patch center.

    (1 / sqrt(2*pi*sigma_w^2)) * exp(-|p - (i,j)|^2 / (2*sigma_w^2))
    """
    if sigma_w <= 0:
        raise ValueError(f"sigma_w must be > 0, got {sigma_w}")
    d2 = (center[0] - pixel[0]) ** 2 + (center[1] - pixel[1]) ** 2
    return math.exp(-d2 / (2.0 * sigma_w ** 2)) / math.sqrt(2.0 * math.pi * sigma_w ** 2)


def weight_map(n_patch: int, sigma_w: float) -> np.ndarray:
    """Per-pixel Gaussian weights for an n_patch x n_patch patch.

    The center sits at offset (n_patch - 1) / 2 on both axes, so the map
    is symmetric under flips and 90-degree rotation.
    """
    if sigma_w <= 0:
        raise ValueError(f"sigma_w must be > 0, got {sigma_w}")
    half = (n_patch - 1) / 2.0
    ax = np.arange(n_patch, dtype=np.float64) - half
    d2 = ax[:, None] ** 2 + ax[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma_w ** 2)) / math.sqrt(2.0 * math.pi * sigma_w ** 2)


class AggregationBuffer:
    """Accumulates weighted patch deposits, then normalizes per pixel."""

    def __init__(self, height: int, width: int):
        self.value_sum = np.zeros((height, width), dtype=np.float64)
        self.weight_sum = np.zeros((height, width), dtype=np.float64)

    def deposit(self, patch: np.ndarray, origin, weight) -> None:
        """Add weight * patch at origin; weight is a scalar or a patch-shaped map."""
        r, c = int(origin[0]), int(origin[1])
        n0, n1 = patch.shape
        h, w = self.value_sum.shape
        if r < 0 or c < 0 or r + n0 > h or c + n1 > w:
            raise ValueError(f"deposit at ({r}, {c}) size {patch.shape} exceeds {h}x{w}")
        self.value_sum[r : r + n0, c : c + n1] += weight * patch
        self.weight_sum[r : r + n0, c : c + n1] += weight

    def normalize(self) -> np.ndarray:
        bad = np.argwhere(self.weight_sum == 0.0)
        if bad.size:
            r, c = bad[0]
            raise CoverageError(f"pixel ({r}, {c}) received no deposits")
        return self.value_sum / self.weight_sum


def aggregate(patches, origins, shape, mode: str = "gaussian", sigma_w: float | None = None) -> np.ndarray:
    """Blend overlapping patches into an image of the given shape.

    mode "mean" weights every pixel equally; mode "gaussian" weights by
    distance from the patch center (sigma_w defaults to n_patch / 4).
    Every pixel must be covered by at least one patch.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 3:
        raise ValueError(f"patches must be (P, n, n), got {patches.shape}")
    n_patch = patches.shape[1]
    if mode == "mean":
        w = 1.0
    elif mode == "gaussian":
        w = weight_map(n_patch, sigma_w if sigma_w is not None else n_patch / 4.0)
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    buf = AggregationBuffer(*shape)
    for patch, origin in zip(patches, origins):
        buf.deposit(patch, origin, w)
    return buf.normalize()
