"""Deterministic Gaussian sampling.

Every stochastic piece of the toolkit (noise synthesis, weight init,
shuffles) draws from one fixed, versioned scheme so runs reproduce bit
for bit on a given platform: a Philox counter generator keyed through
numpy's SeedSequence, with normals produced by the Box-Muller transform.
Callers separate independent streams with small integer key tuples.
"""

from __future__ import annotations

import numpy as np

# Leading key tags, one per consumer, so streams never collide.
TAG_NOISE = 1
TAG_INIT = 2
TAG_SHUFFLE = 3
TAG_DATA = 4


def generator(seed: int, key: tuple[int, ...] = ()) -> np.random.Generator:
    """Philox generator keyed by (seed, *key)."""
    ss = np.random.SeedSequence([int(seed)] + [int(x) for x in key])
    return np.random.Generator(np.random.Philox(ss))


def gaussian(shape, seed: int, key: tuple[int, ...] = ()) -> np.ndarray:
    """Standard normal draws of the given shape via Box-Muller.

    Uniform inputs come from `generator(seed, key)`; pairs map to
    normals as r*cos(2*pi*u2), r*sin(2*pi*u2) with r = sqrt(-2*ln(u1)).
    """
    n = int(np.prod(shape)) if np.iterable(shape) else int(shape)
    m = (n + 1) // 2
    u = generator(seed, key).random(2 * m)
    u1 = 1.0 - u[:m]  # (0, 1], keeps the log finite
    u2 = u[m:]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    z = z[:n]
    return z.reshape(shape) if np.iterable(shape) else z.reshape(shape,)
