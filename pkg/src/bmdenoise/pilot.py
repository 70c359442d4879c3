"""Collaborative-filtering pilot denoiser.

A trimmed single-pass variant of transform-domain collaborative
filtering: group similar patches by matching on the noisy image itself,
apply a 2-D orthonormal DCT per patch and a 1-D orthonormal Haar
transform across each group, hard-threshold, invert, and blend every
filtered patch back with a sparsity-driven weight. Its output serves as
the pilot image for matching and as the clean-ish half of the network
input block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, patching


@dataclass
class PilotConfig:
    n_patch: int = 8
    k: int = 8
    stride: int = 4
    window: int | None = 20
    lam: float = 2.7

    def validate(self) -> None:
        if self.n_patch < 1:
            raise ValueError(f"n_patch must be >= 1, got {self.n_patch}")
        if self.k < 2 or (self.k & (self.k - 1)) != 0:
            raise ValueError(f"k must be a power of two >= 2, got {self.k}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.window is not None and self.window < self.n_patch:
            raise ValueError(
                f"window {self.window} must be >= n_patch {self.n_patch} or None"
            )
        if self.lam <= 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal type-II DCT matrix: row j holds basis frequency j."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    i = np.arange(n, dtype=np.float64)
    j = i[:, None]
    mat = np.cos(math.pi * (2.0 * i[None, :] + 1.0) * j / (2.0 * n))
    mat *= math.sqrt(2.0 / n)
    mat[0] *= 1.0 / math.sqrt(2.0)
    return mat


def dct2(patch: np.ndarray) -> np.ndarray:
    """2-D orthonormal DCT of a square patch."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2 or patch.shape[0] != patch.shape[1]:
        raise ValueError(f"patch must be square 2-D, got {patch.shape}")
    d = dct_matrix(patch.shape[0])
    return d @ patch @ d.T


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct2."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise ValueError(f"coeffs must be square 2-D, got {coeffs.shape}")
    d = dct_matrix(coeffs.shape[0])
    return d.T @ coeffs @ d


def haar1d(vec: np.ndarray) -> np.ndarray:
    """Orthonormal Haar transform of a vector whose length is a power of two."""
    vec = np.asarray(vec, dtype=np.float64)
    n = vec.shape[0]
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"length must be a power of two, got {n}")
    return kernels.numpy_impl.haar_axis0(vec)


def ihaar1d(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of haar1d."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n = coeffs.shape[0]
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"length must be a power of two, got {n}")
    return kernels.numpy_impl.ihaar_axis0(coeffs)


def hard_threshold(coeffs: np.ndarray, threshold: float, exempt_dc: bool = True) -> np.ndarray:
    """Zero every coefficient with |c| < threshold.

    With exempt_dc the first element in flat order (the all-lowpass
    coefficient of a transform stack) is never zeroed.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    out = np.array(coeffs, dtype=np.float64, copy=True)
    flat = out.reshape(-1)
    dc = flat[0]
    flat[np.abs(flat) < threshold] = 0.0
    if exempt_dc:
        flat[0] = dc
    return out


def bm3d_lite_denoise(noisy: np.ndarray, sigma: float, cfg: PilotConfig | None = None) -> np.ndarray:
    """Denoise a grayscale image with one collaborative-filtering pass.

    Deterministic: a pure function of (noisy, sigma, cfg). Patch groups
    are thresholded at lam * sigma with the group DC exempt, and every
    filtered patch is blended back with weight 1 / (1 + surviving
    nonzero coefficients).
    """
    cfg = cfg or PilotConfig()
    cfg.validate()
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    noisy = np.asarray(noisy, dtype=np.float64)
    h, w = noisy.shape
    rows = patching.grid_axis(h, cfg.n_patch, cfg.stride)
    cols = patching.grid_axis(w, cfg.n_patch, cfg.stride)
    value_acc = np.zeros((h, w), dtype=np.float64)
    weight_acc = np.zeros((h, w), dtype=np.float64)
    window = -1 if cfg.window is None else int(cfg.window)
    kernels.bm3d_accumulate(noisy, rows, cols, cfg.n_patch, cfg.k, window,
                            cfg.lam * float(sigma), dct_matrix(cfg.n_patch),
                            value_acc, weight_acc)
    bad = np.argwhere(weight_acc == 0.0)
    if bad.size:
        r, c = bad[0]
        raise patching.CoverageError(f"pixel ({r}, {c}) received no deposits")
    return value_acc / weight_acc
