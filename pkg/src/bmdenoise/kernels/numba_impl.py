"""numba JIT implementations of the hot kernels.

Same contracts as numpy_impl. Parallel loops partition output elements
only and every reduction runs serially inside its owning thread, so
results are bit-identical for any thread count. fastmath stays off to
keep IEEE evaluation order.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

_SQRT2 = math.sqrt(2.0)


@njit(cache=True, parallel=True)
def _conv2d_forward(x, w, b, out):
    B, Ci, H, W = x.shape
    Co = w.shape[0]
    for bo in prange(B * Co):
        bi = bo // Co
        o = bo % Co
        for y in range(H):
            for xx in range(W):
                acc = b[o]
                for c in range(Ci):
                    for u in range(3):
                        yy = y + u - 1
                        if yy < 0 or yy >= H:
                            continue
                        for v in range(3):
                            cc = xx + v - 1
                            if cc < 0 or cc >= W:
                                continue
                            acc += w[o, c, u, v] * x[bi, c, yy, cc]
                out[bi, o, y, xx] = acc


@njit(cache=True, parallel=True)
def _conv2d_gin(w, gout, gin):
    B, Co, H, W = gout.shape
    Ci = w.shape[1]
    for bc in prange(B * Ci):
        bi = bc // Ci
        i = bc % Ci
        for y in range(H):
            for xx in range(W):
                acc = gin[bi, i, y, xx]
                for o in range(Co):
                    for u in range(3):
                        yy = y + 1 - u
                        if yy < 0 or yy >= H:
                            continue
                        for v in range(3):
                            cc = xx + 1 - v
                            if cc < 0 or cc >= W:
                                continue
                            acc += w[o, i, u, v] * gout[bi, o, yy, cc]
                gin[bi, i, y, xx] = acc


@njit(cache=True, parallel=True)
def _conv2d_gw(x, gout, gw):
    B, Ci, H, W = x.shape
    Co = gout.shape[1]
    for oc in prange(Co * Ci):
        o = oc // Ci
        i = oc % Ci
        for u in range(3):
            for v in range(3):
                acc = gw[o, i, u, v]
                for bi in range(B):
                    for y in range(H):
                        yy = y + u - 1
                        if yy < 0 or yy >= H:
                            continue
                        for xx in range(W):
                            cc = xx + v - 1
                            if cc < 0 or cc >= W:
                                continue
                            acc += gout[bi, o, y, xx] * x[bi, i, yy, cc]
                gw[o, i, u, v] = acc


@njit(cache=True, parallel=True)
def _conv2d_gb(gout, gb):
    B, Co, H, W = gout.shape
    for o in prange(Co):
        acc = gb[o]
        for bi in range(B):
            for y in range(H):
                for xx in range(W):
                    acc += gout[bi, o, y, xx]
        gb[o] = acc


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    b = np.ascontiguousarray(b)
    B, _, H, W = x.shape
    out = np.empty((B, w.shape[0], H, W), dtype=x.dtype)
    _conv2d_forward(x, w, b, out)
    return out


def conv2d_backward(x: np.ndarray, w: np.ndarray, gout: np.ndarray):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    gout = np.ascontiguousarray(gout)
    gin = np.zeros_like(x)
    gw = np.zeros_like(w)
    gb = np.zeros(w.shape[0], dtype=w.dtype)
    _conv2d_gin(w, gout, gin)
    _conv2d_gw(x, gout, gw)
    _conv2d_gb(gout, gb)
    return gin, gw, gb


@njit(cache=True)
def _match_topk(pilot, ref_r, ref_c, n, k, r0, r1, c0, c1, out_rc, out_d):
    out_rc[0, 0] = ref_r
    out_rc[0, 1] = ref_c
    out_d[0] = 0.0
    filled = 1
    for rr in range(r0, r1 + 1):
        for cc in range(c0, c1 + 1):
            if rr == ref_r and cc == ref_c:
                continue
            d = 0.0
            aborted = False
            for i in range(n):
                for j in range(n):
                    diff = pilot[rr + i, cc + j] - pilot[ref_r + i, ref_c + j]
                    d += diff * diff
                if filled == k and d > out_d[k - 1]:
                    aborted = True
                    break
            if aborted:
                continue
            if filled == k and d >= out_d[k - 1]:
                continue
            lim = filled if filled < k else k - 1
            pos = lim
            while pos > 1 and out_d[pos - 1] > d:
                pos -= 1
            for t in range(lim, pos, -1):
                out_d[t] = out_d[t - 1]
                out_rc[t, 0] = out_rc[t - 1, 0]
                out_rc[t, 1] = out_rc[t - 1, 1]
            out_d[pos] = d
            out_rc[pos, 0] = rr
            out_rc[pos, 1] = cc
            if filled < k:
                filled += 1


def _window_bounds(ref: int, limit: int, window: int) -> tuple[int, int]:
    if window < 0:
        return 0, limit
    return max(0, ref - window), min(limit, ref + window)


def match_topk(pilot, ref_r, ref_c, n_patch, k, window):
    """Origins and SSDs of the k best matches; see numpy_impl.match_topk."""
    pilot = np.ascontiguousarray(pilot, dtype=np.float64)
    h, w = pilot.shape
    r0, r1 = _window_bounds(ref_r, h - n_patch, window)
    c0, c1 = _window_bounds(ref_c, w - n_patch, window)
    if (r1 - r0 + 1) * (c1 - c0 + 1) < k:
        raise ValueError(
            f"window holds {(r1 - r0 + 1) * (c1 - c0 + 1)} candidates, need k={k}"
        )
    origins = np.empty((k, 2), dtype=np.int64)
    dists = np.empty(k, dtype=np.float64)
    _match_topk(pilot, ref_r, ref_c, n_patch, k, r0, r1, c0, c1, origins, dists)
    return origins, dists


@njit(cache=True)
def _bm3d_accumulate(noisy, rows, cols, n, k, window, thr, D, vals, wts):
    H, W = noisy.shape
    rlim = H - n
    clim = W - n
    orc = np.empty((k, 2), dtype=np.int64)
    od = np.empty(k, dtype=np.float64)
    stack = np.empty((k, n, n), dtype=np.float64)
    tmp = np.empty((n, n), dtype=np.float64)
    vec = np.empty(k, dtype=np.float64)
    buf = np.empty(k, dtype=np.float64)
    for ri in range(rows.shape[0]):
        ref_r = rows[ri]
        r0 = 0 if window < 0 else max(0, ref_r - window)
        r1 = rlim if window < 0 else min(rlim, ref_r + window)
        for ci in range(cols.shape[0]):
            ref_c = cols[ci]
            c0 = 0 if window < 0 else max(0, ref_c - window)
            c1 = clim if window < 0 else min(clim, ref_c + window)
            _match_topk(noisy, ref_r, ref_c, n, k, r0, r1, c0, c1, orc, od)
            for p in range(k):
                pr = orc[p, 0]
                pc = orc[p, 1]
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for l in range(n):
                            acc += D[i, l] * noisy[pr + l, pc + j]
                        tmp[i, j] = acc
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for l in range(n):
                            acc += tmp[i, l] * D[j, l]
                        stack[p, i, j] = acc
            for i in range(n):
                for j in range(n):
                    for p in range(k):
                        vec[p] = stack[p, i, j]
                    m = k
                    while m > 1:
                        half = m // 2
                        for t in range(half):
                            a = vec[2 * t]
                            b = vec[2 * t + 1]
                            buf[t] = (a + b) / _SQRT2
                            buf[half + t] = (a - b) / _SQRT2
                        for t in range(m):
                            vec[t] = buf[t]
                        m = half
                    for p in range(k):
                        stack[p, i, j] = vec[p]
            dc = stack[0, 0, 0]
            for p in range(k):
                for i in range(n):
                    for j in range(n):
                        if abs(stack[p, i, j]) < thr:
                            stack[p, i, j] = 0.0
            stack[0, 0, 0] = dc
            nz = 0
            for p in range(k):
                for i in range(n):
                    for j in range(n):
                        if stack[p, i, j] != 0.0:
                            nz += 1
            weight = 1.0 / (1.0 + nz)
            for i in range(n):
                for j in range(n):
                    for p in range(k):
                        vec[p] = stack[p, i, j]
                    m = 2
                    while m <= k:
                        half = m // 2
                        for t in range(half):
                            low = vec[t]
                            high = vec[half + t]
                            buf[2 * t] = (low + high) / _SQRT2
                            buf[2 * t + 1] = (low - high) / _SQRT2
                        for t in range(m):
                            vec[t] = buf[t]
                        m *= 2
                    for p in range(k):
                        stack[p, i, j] = vec[p]
            for p in range(k):
                pr = orc[p, 0]
                pc = orc[p, 1]
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for l in range(n):
                            acc += D[l, i] * stack[p, l, j]
                        tmp[i, j] = acc
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for l in range(n):
                            acc += tmp[i, l] * D[l, j]
                        vals[pr + i, pc + j] += weight * acc
                        wts[pr + i, pc + j] += weight


def bm3d_accumulate(noisy, rows, cols, n_patch, k, window, thr, dct_mat,
                    value_acc, weight_acc):
    """One collaborative-filtering pass; see numpy_impl.bm3d_accumulate."""
    noisy = np.ascontiguousarray(noisy, dtype=np.float64)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    dct_mat = np.ascontiguousarray(dct_mat, dtype=np.float64)
    _bm3d_accumulate(noisy, rows, cols, n_patch, k, int(window), float(thr),
                     dct_mat, value_acc, weight_acc)
