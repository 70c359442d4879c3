"""Pure numpy implementations of the hot kernels.

Reference backend: slower than the numba path but dependency-light.
Both backends share these contracts:

- conv2d_forward(x, w, b) -> out                3x3, stride 1, zero pad 1
- conv2d_backward(x, w, gout) -> (gin, gw, gb)
- match_topk(...) -> (origins, dists)           reference first, then by
                                                (distance, raster order)
- bm3d_accumulate(...)                          collaborative-filter pass
                                                depositing into accumulators
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_SQRT2 = math.sqrt(2.0)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    out = np.einsum("bihwuv,oiuv->bohw", win, w, optimize=True)
    return out + b[None, :, None, None]


def conv2d_backward(x: np.ndarray, w: np.ndarray, gout: np.ndarray):
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    xwin = sliding_window_view(xp, (3, 3), axis=(2, 3))
    gw = np.einsum("bohw,bihwuv->oiuv", gout, xwin, optimize=True)
    gb = gout.sum(axis=(0, 2, 3))
    gp = np.pad(gout, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gwin = sliding_window_view(gp, (3, 3), axis=(2, 3))
    wf = w[:, :, ::-1, ::-1]
    gin = np.einsum("bohwuv,oiuv->bihw", gwin, wf, optimize=True)
    return gin, gw, gb


def _window_bounds(ref: int, limit: int, window: int) -> tuple[int, int]:
    # limit is the last valid origin; window < 0 means the full image
    if window < 0:
        return 0, limit
    return max(0, ref - window), min(limit, ref + window)


def match_topk(pilot, ref_r, ref_c, n_patch, k, window):
    """Origins and SSDs of the k best matches to the reference patch.

    The reference occupies slot 0; the rest are ordered by (distance,
    raster order of origin). Raises ValueError when the clipped window
    holds fewer than k candidates.
    """
    h, w = pilot.shape
    r0, r1 = _window_bounds(ref_r, h - n_patch, window)
    c0, c1 = _window_bounds(ref_c, w - n_patch, window)
    nr, nc = r1 - r0 + 1, c1 - c0 + 1
    if nr * nc < k:
        raise ValueError(f"window holds {nr * nc} candidates, need k={k}")
    region = pilot[r0 : r1 + n_patch, c0 : c1 + n_patch]
    cands = sliding_window_view(region, (n_patch, n_patch))
    ref_patch = pilot[ref_r : ref_r + n_patch, ref_c : ref_c + n_patch]
    d = ((cands - ref_patch) ** 2).sum(axis=(2, 3)).ravel()
    ref_idx = (ref_r - r0) * nc + (ref_c - c0)
    order = np.argsort(d, kind="stable")
    origins = np.empty((k, 2), dtype=np.int64)
    dists = np.empty(k, dtype=np.float64)
    origins[0] = ref_r, ref_c
    dists[0] = 0.0
    filled = 1
    for idx in order:
        if filled == k:
            break
        if idx == ref_idx:
            continue
        origins[filled] = r0 + idx // nc, c0 + idx % nc
        dists[filled] = d[idx]
        filled += 1
    return origins, dists


def haar_axis0(a: np.ndarray) -> np.ndarray:
    """Orthonormal Haar transform along axis 0 (length a power of two)."""
    out = np.array(a, dtype=np.float64, copy=True)
    m = out.shape[0]
    while m > 1:
        half = m // 2
        ev = out[0:m:2].copy()
        od = out[1:m:2].copy()
        out[:half] = (ev + od) / _SQRT2
        out[half:m] = (ev - od) / _SQRT2
        m = half
    return out


def ihaar_axis0(a: np.ndarray) -> np.ndarray:
    """Inverse of haar_axis0."""
    out = np.array(a, dtype=np.float64, copy=True)
    n = out.shape[0]
    m = 2
    while m <= n:
        half = m // 2
        low = out[:half].copy()
        high = out[half:m].copy()
        out[0:m:2] = (low + high) / _SQRT2
        out[1:m:2] = (low - high) / _SQRT2
        m *= 2
    return out


def bm3d_accumulate(noisy, rows, cols, n_patch, k, window, thr, dct_mat,
                    value_acc, weight_acc):
    """One collaborative-filtering pass over the reference grid.

    For each reference: match k patches on the noisy image, 2-D DCT each,
    1-D Haar across the stack, hard threshold at thr (stack DC exempt),
    invert, and deposit all k filtered patches with weight
    1 / (1 + surviving nonzero count).
    """
    n = n_patch
    for ref_r in rows:
        for ref_c in cols:
            origins, _ = match_topk(noisy, ref_r, ref_c, n, k, window)
            stack = np.stack([noisy[r : r + n, c : c + n] for r, c in origins])
            co = np.einsum("ij,pjl,ml->pim", dct_mat, stack, dct_mat, optimize=True)
            co = haar_axis0(co)
            dc = co[0, 0, 0]
            co[np.abs(co) < thr] = 0.0
            co[0, 0, 0] = dc
            weight = 1.0 / (1.0 + np.count_nonzero(co))
            back = ihaar_axis0(co)
            sp = np.einsum("ji,pjl,lm->pim", dct_mat, back, dct_mat, optimize=True)
            for (r, c), patch in zip(origins, sp):
                value_acc[r : r + n, c : c + n] += weight * patch
                weight_acc[r : r + n, c : c + n] += weight
