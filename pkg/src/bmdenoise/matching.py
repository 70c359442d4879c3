"""Patch similarity search and block assembly.

Similarity is the sum of squared differences between patches of the
pilot image. Matched noisy and pilot patches stack into the 2k-channel
input block consumed by the denoising network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, patching


@dataclass
class MatchConfig:
    """Block-matching knobs. window is a half-size; None scans the full image."""

    n_patch: int = 20
    k: int = 4
    window: int | None = 20

    def validate(self) -> None:
        if self.n_patch < 1:
            raise ValueError(f"n_patch must be >= 1, got {self.n_patch}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.window is not None and self.window < self.n_patch:
            raise ValueError(
                f"window {self.window} must be >= n_patch {self.n_patch} or None"
            )


@dataclass
class PatchBlock:
    """k noisy patches stacked on k pilot patches: channels (2k, n, n)."""

    channels: np.ndarray
    origins: np.ndarray

    @property
    def k(self) -> int:
        return self.channels.shape[0] // 2


def dissimilarity(p: np.ndarray, q: np.ndarray) -> float:
    """Sum of squared differences between two equally shaped patches."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return float(((p - q) ** 2).sum())


def find_similar(pilot: np.ndarray, ref, cfg: MatchConfig):
    """Origins and distances of the k most similar patches to the reference.

    Returns (origins, distances): a (k, 2) int array and a (k,) float
    array. The reference is always first with distance 0; the remaining
    k - 1 follow by ascending distance, ties broken by raster order of
    origin. Raises ValueError when the clipped window holds fewer than
    k origins.
    """
    cfg.validate()
    pilot = np.asarray(pilot, dtype=np.float64)
    h, w = pilot.shape
    ref_r, ref_c = int(ref[0]), int(ref[1])
    if ref_r < 0 or ref_c < 0 or ref_r + cfg.n_patch > h or ref_c + cfg.n_patch > w:
        raise ValueError(f"reference ({ref_r}, {ref_c}) out of bounds for {h}x{w}")
    window = -1 if cfg.window is None else int(cfg.window)
    return kernels.match_topk(pilot, ref_r, ref_c, cfg.n_patch, cfg.k, window)


def assemble_block(noisy: np.ndarray, pilot: np.ndarray, origins: np.ndarray,
                   n_patch: int) -> PatchBlock:
    """Stack the matched noisy patches, then the same pilot patches.

    Channel c < k holds the noisy patch at origins[c]; channel k + c the
    pilot patch at the same origin. Channel 0 is the noisy reference.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    pilot = np.asarray(pilot, dtype=np.float64)
    if noisy.shape != pilot.shape:
        raise ValueError(f"shape mismatch: {noisy.shape} vs {pilot.shape}")
    k = len(origins)
    channels = np.empty((2 * k, n_patch, n_patch), dtype=np.float64)
    for i, origin in enumerate(origins):
        channels[i] = patching.extract_patch(noisy, origin, n_patch)
        channels[k + i] = patching.extract_patch(pilot, origin, n_patch)
    return PatchBlock(channels=channels, origins=np.asarray(origins, dtype=np.int64))


def match_distance_stats(sigma: float, n_patch: int, d_clean: float) -> tuple[float, float]:
    """Predicted moments of the noisy-patch distance at clean distance d_clean.

    mean = d_clean + 2 * sigma^2 * n_patch^2
    variance = 8 * sigma^2 * n_patch^2 * (sigma^2 + d_clean)
    """
    n2 = float(n_patch) ** 2
    s2 = float(sigma) ** 2
    mean = d_clean + 2.0 * s2 * n2
    variance = 8.0 * s2 * n2 * (s2 + d_clean)
    return mean, variance
