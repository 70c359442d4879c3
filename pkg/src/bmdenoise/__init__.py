"""Grayscale image denoising with block matching and a residual CNN.

A noisy image is first denoised by a collaborative-filtering pilot;
block matching on the pilot gathers, per reference patch, the k most
similar patch positions; the noisy and pilot patches at those positions
feed a residual-learning CNN; the predicted noise is subtracted and the
denoised patches are blended with Gaussian weights.
"""

from . import (  # noqa: F401
    imgio,
    kernels,
    matching,
    model,
    neural,
    patching,
    pilot,
    pipeline,
    rng,
    synthetic,
)

__version__ = "0.1.0"
