"""Deterministic synthetic grayscale scenes for tests and demos.

Scenes mix smooth gradients, piecewise-constant shapes, and periodic
texture so that patch self-similarity resembles photographic content.
Values are integers in [5, 250], like an 8-bit source.
"""

from __future__ import annotations

import math

import numpy as np

from . import imgio, rng


def _bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    gh, gw = grid.shape
    ry = np.linspace(0.0, gh - 1.0, h)
    rx = np.linspace(0.0, gw - 1.0, w)
    y0 = np.floor(ry).astype(np.int64)
    x0 = np.floor(rx).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ry - y0)[:, None]
    fx = (rx - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x1)]
    g10 = grid[np.ix_(y1, x0)]
    g11 = grid[np.ix_(y1, x1)]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def make_scene(height: int, width: int, seed: int) -> np.ndarray:
    """A structured test scene, deterministic in (height, width, seed)."""
    gen = rng.generator(seed, (rng.TAG_DATA,))
    coarse = gen.uniform(60.0, 200.0, size=(max(2, height // 24), max(2, width // 24)))
    img = _bilinear_upsample(coarse, height, width)

    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(6):
        r0 = int(gen.integers(0, max(1, height - 8)))
        c0 = int(gen.integers(0, max(1, width - 8)))
        rh = int(gen.integers(height // 8 + 1, height // 3 + 2))
        cw = int(gen.integers(width // 8 + 1, width // 3 + 2))
        img[r0 : min(height, r0 + rh), c0 : min(width, c0 + cw)] = gen.uniform(20.0, 235.0)
    for _ in range(4):
        cy = gen.uniform(0, height)
        cx = gen.uniform(0, width)
        rad = gen.uniform(min(height, width) / 12, min(height, width) / 5)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
        img[mask] = gen.uniform(20.0, 235.0)

    # periodic texture bands: strong self-similarity for block matching
    band_h = max(4, height // 5)
    r0 = int(gen.integers(0, max(1, height - band_h)))
    period = int(gen.integers(6, 14))
    img[r0 : r0 + band_h] += 18.0 * np.sin(2.0 * math.pi * xx[r0 : r0 + band_h] / period)
    band_w = max(4, width // 5)
    c0 = int(gen.integers(0, max(1, width - band_w)))
    period = int(gen.integers(6, 14))
    img[:, c0 : c0 + band_w] += 14.0 * np.sin(2.0 * math.pi * yy[:, c0 : c0 + band_w] / period)

    img += 12.0 * np.sin(2.0 * math.pi * (yy + xx) / (height + width))
    return np.clip(np.round(img), 5.0, 250.0)


def write_scene_set(directory, count: int, size: int, seed: int) -> list:
    """Write `count` square scenes as PGMs; returns the file paths."""
    import os

    os.makedirs(str(directory), exist_ok=True)
    paths = []
    for i in range(count):
        img = make_scene(size, size, seed + i)
        path = os.path.join(str(directory), f"scene_{i:02d}.pgm")
        imgio.write_pgm(path, img)
        paths.append(path)
    return paths
