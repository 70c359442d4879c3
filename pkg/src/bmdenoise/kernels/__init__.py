"""Hot numeric kernels with two interchangeable backends.

The numba JIT backend is the default whenever numba imports cleanly;
set BMDENOISE_NUMBA=0 to force the pure-numpy fallback. Both backends
expose the same four functions and agree to floating-point rounding.
benchmarks/bench_kernels.py times one against the other.
"""

from __future__ import annotations

import os

# Allow a thread sweep even on small machines; must be set before numba
# initializes its thread pool.
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

from . import numpy_impl

_want_numba = os.environ.get("BMDENOISE_NUMBA", "1").lower() not in ("0", "false", "no")
if _want_numba:
    try:
        from . import numba_impl as _impl

        NUMBA_ENABLED = True
    except ImportError:
        _impl = numpy_impl
        NUMBA_ENABLED = False
else:
    _impl = numpy_impl
    NUMBA_ENABLED = False

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
match_topk = _impl.match_topk
bm3d_accumulate = _impl.bm3d_accumulate


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def set_threads(n: int) -> int:
    """Set the JIT worker count; no-op on the numpy backend.

    Returns the count actually applied (capped at NUMBA_NUM_THREADS).
    Results never depend on it: parallel kernels partition outputs, not
    reductions.
    """
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    if not NUMBA_ENABLED:
        return 1
    import numba

    applied = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(applied)
    return applied


def warmup() -> None:
    """Trigger JIT compilation with tiny inputs (no-op on numpy)."""
    if not NUMBA_ENABLED:
        return
    import numpy as np

    x = np.zeros((1, 1, 4, 4), dtype=np.float32)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    conv2d_forward(x, w, b)
    conv2d_backward(x, w, np.zeros_like(x))
    x64 = x.astype(np.float64)
    conv2d_forward(x64, w.astype(np.float64), b.astype(np.float64))
    conv2d_backward(x64, w.astype(np.float64), np.zeros_like(x64))
    img = np.arange(64, dtype=np.float64).reshape(8, 8)
    match_topk(img, 0, 0, 2, 2, -1)
    from ..pilot import dct_matrix

    grid = np.array([0, 4], dtype=np.int64)
    acc = np.zeros((8, 8)), np.zeros((8, 8))
    bm3d_accumulate(img, grid, grid, 4, 2, -1, 0.0, dct_matrix(4), acc[0], acc[1])
