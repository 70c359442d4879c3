#!/usr/bin/env python3
"""Time the numba kernel backend against the pure-numpy fallback.

Both backends are imported side by side, so a single run produces the
comparison table. Workloads copy the shapes the pipeline actually uses:
mid-network convolution batches, a full block-matching sweep, and one
collaborative-filter accumulation pass.
"""

import argparse
import sys
import time

import numpy as np

from bmdenoise import synthetic
from bmdenoise.kernels import numpy_impl
from bmdenoise.pilot import dct_matrix

try:
    from bmdenoise.kernels import numba_impl
except ImportError:
    numba_impl = None

WARMUP_RUNS = 2
BENCH_RUNS = 5


def _time(fn, runs=BENCH_RUNS, warmup=WARMUP_RUNS):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def conv_forward_case(impl, batch):
    gen = np.random.default_rng(1)
    x = gen.normal(size=(batch, 64, 20, 20)).astype(np.float32)
    w = gen.normal(scale=0.05, size=(64, 64, 3, 3)).astype(np.float32)
    b = np.full(64, 0.2, dtype=np.float32)
    return lambda: impl.conv2d_forward(x, w, b)


def conv_backward_case(impl, batch):
    gen = np.random.default_rng(2)
    x = gen.normal(size=(batch, 64, 20, 20)).astype(np.float32)
    w = gen.normal(scale=0.05, size=(64, 64, 3, 3)).astype(np.float32)
    gout = gen.normal(size=(batch, 64, 20, 20)).astype(np.float32)
    return lambda: impl.conv2d_backward(x, w, gout)


def match_sweep_case(impl, image):
    h, w = image.shape
    refs = [(r, c) for r in range(0, h - 19, 10) for c in range(0, w - 19, 10)]

    def sweep():
        for r, c in refs:
            impl.match_topk(image, r, c, 20, 4, 20)

    return sweep


def bm3d_case(impl, image):
    h, w = image.shape
    rows = np.arange(0, h - 7, 4, dtype=np.int64)
    cols = np.arange(0, w - 7, 4, dtype=np.int64)
    mat = dct_matrix(8)

    def accumulate():
        value = np.zeros((h, w))
        weight = np.zeros((h, w))
        impl.bm3d_accumulate(image, rows, cols, 8, 8, 20, 67.5, mat,
                             value, weight)
        return value

    return accumulate


def main():
    parser = argparse.ArgumentParser(
        description="numba vs numpy kernel backend comparison")
    parser.add_argument("--size", type=int, default=96,
                        help="test image side length")
    parser.add_argument("--batch", type=int, default=8,
                        help="convolution batch size")
    parser.add_argument("--runs", type=int, default=BENCH_RUNS)
    parser.add_argument("--threads", type=int, default=None,
                        help="JIT worker count for the numba backend")
    args = parser.parse_args()

    if numba_impl is None:
        print("numba backend unavailable; nothing to compare", file=sys.stderr)
        return 1
    if args.threads is not None:
        from bmdenoise import kernels
        kernels.set_threads(args.threads)

    image = synthetic.make_scene(args.size, args.size, seed=0).astype(np.float64)
    cases = [
        ("conv2d_forward", conv_forward_case),
        ("conv2d_backward", conv_backward_case),
        ("match_topk sweep", match_sweep_case),
        ("bm3d_accumulate", bm3d_case),
    ]

    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, case in cases:
        arg = args.batch if name.startswith("conv") else image
        t_np = _time(case(numpy_impl, arg), runs=args.runs) * 1e3
        t_nb = _time(case(numba_impl, arg), runs=args.runs) * 1e3
        print(f"{name:<18} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
