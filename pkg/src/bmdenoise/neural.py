"""From-scratch neural engine: 3x3 conv, batch norm, ReLU, L1 loss, Adam.

Activations are (batch, channels, height, width) arrays. Layers cache
what their backward pass needs; backward assigns parameter gradients
and returns the input gradient. Training runs in float32 by default,
gradient checking in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, rng


class Param:
    """A learnable array with its gradient and Adam moment buffers."""

    def __init__(self, value: np.ndarray, name: str = "", decay: bool = False):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)
        self.name = name
        self.decay = decay


def xavier_init(shape, n_in: int, seed: int, key: tuple[int, ...] = ()) -> np.ndarray:
    """Zero-mean Gaussian draws with variance 1 / n_in."""
    if n_in < 1:
        raise ValueError(f"n_in must be >= 1, got {n_in}")
    draws = rng.gaussian(shape, seed, (rng.TAG_INIT,) + tuple(key))
    return draws * math.sqrt(1.0 / n_in)


class Conv2d:
    """3x3 convolution, stride 1, zero padding 1 (shape-preserving)."""

    def __init__(self, in_ch: int, out_ch: int, dtype=np.float32, name: str = "conv"):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.w = Param(np.zeros((out_ch, in_ch, 3, 3), dtype=dtype), f"{name}.w", decay=True)
        self.b = Param(np.zeros(out_ch, dtype=dtype), f"{name}.b")
        self._x = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(f"expected (B, {self.in_ch}, H, W), got {x.shape}")
        self._x = x
        return kernels.conv2d_forward(x, self.w.value, self.b.value)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        gin, gw, gb = kernels.conv2d_backward(self._x, self.w.value, gout)
        self.w.grad = gw
        self.b.grad = gb
        return gin


class BatchNorm2d:
    """Per-channel batch normalization with affine parameters.

    Training mode normalizes with biased batch statistics over
    (batch, height, width) and updates the running buffers as
    running = momentum * running + (1 - momentum) * batch.
    """

    def __init__(self, ch: int, momentum: float = 0.9, eps: float = 1e-5,
                 dtype=np.float32, name: str = "bn"):
        self.ch = ch
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(ch, dtype=dtype), f"{name}.gamma")
        self.beta = Param(np.zeros(ch, dtype=dtype), f"{name}.beta")
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)
        self._cache = None

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.ch:
            raise ValueError(f"expected (B, {self.ch}, H, W), got {x.shape}")
        if training:
            b, _, h, w = x.shape
            m = b * h * w
            if m < 2:
                raise ValueError(f"batch statistics need >= 2 values per channel, got {m}")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = (self.momentum * self.running_mean
                                 + (1.0 - self.momentum) * mean).astype(x.dtype)
            self.running_var = (self.momentum * self.running_var
                                + (1.0 - self.momentum) * var).astype(x.dtype)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + np.asarray(self.eps, dtype=x.dtype))
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, training)
        return self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]

    def backward(self, gout: np.ndarray) -> np.ndarray:
        xhat, inv_std, training = self._cache
        self.gamma.grad = (gout * xhat).sum(axis=(0, 2, 3))
        self.beta.grad = gout.sum(axis=(0, 2, 3))
        scale = (self.gamma.value * inv_std)[None, :, None, None]
        if not training:
            return gout * scale
        b, _, h, w = gout.shape
        m = b * h * w
        gsum = gout.sum(axis=(0, 2, 3))[None, :, None, None]
        gxsum = (gout * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        return scale / m * (m * gout - gsum - xhat * gxsum)


class ReLU:
    """Elementwise max(x, 0); the subgradient at exactly zero is zero."""

    def __init__(self):
        self._mask = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, np.asarray(0, dtype=x.dtype))

    def backward(self, gout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, gout, np.asarray(0, dtype=gout.dtype))


class Sequential:
    """A plain layer chain; enough structure for gradient checking."""

    def __init__(self, layers):
        self.layers = list(layers)

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, gout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            gout = layer.backward(gout)
        return gout


def l1_loss(estimate: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean-per-sample L1 loss and its (sub)gradient, sign(0) = 0."""
    if estimate.shape != target.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {target.shape}")
    n_sample = estimate.shape[0]
    diff = estimate - target
    loss = float(np.abs(diff).sum()) / n_sample
    grad = np.sign(diff) / np.asarray(n_sample, dtype=estimate.dtype)
    return loss, grad.astype(estimate.dtype)


@dataclass
class AdamConfig:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    reg: str = "l2"

    def validate(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.alpha <= 0 or self.eps <= 0:
            raise ValueError("alpha and eps must be positive")
        if self.reg not in ("l1", "l2"):
            raise ValueError(f"reg must be 'l1' or 'l2', got {self.reg!r}")


class Adam:
    """Adam with the bias correction folded into the step size.

    W <- W - alpha * sqrt(1 - beta2^t) / (1 - beta1^t) * m / (sqrt(v) + eps)
    Weight decay adds the regularizer gradient before the moment update
    and applies only to parameters flagged decay (conv weights).
    """

    def __init__(self, params: list[Param], cfg: AdamConfig | None = None):
        self.cfg = cfg or AdamConfig()
        self.cfg.validate()
        self.params = list(params)
        self.t = 0

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        corr = math.sqrt(1.0 - cfg.beta2 ** self.t) / (1.0 - cfg.beta1 ** self.t)
        for p in self.params:
            g = p.grad
            if p.decay and cfg.weight_decay > 0.0:
                if cfg.reg == "l2":
                    g = g + cfg.weight_decay * p.value
                else:
                    g = g + cfg.weight_decay * np.sign(p.value)
            p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * g
            p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * g * g
            p.value = p.value - cfg.alpha * corr * p.m / (np.sqrt(p.v) + cfg.eps)


def gradient_check(net, x: np.ndarray, target: np.ndarray, h: float = 1e-5,
                   atol: float = 1e-6) -> dict[str, float]:
    """Central-difference check of every parameter gradient and the input.

    Runs the net in training mode on float64 data and returns, per
    parameter group, max |analytic - numeric| / (|analytic| + |numeric|).
    Elements where both gradients lie below atol count as matching; that
    floor sits above the finite-difference noise yet far below any real
    gradient, and it absorbs parameters with exactly zero effect (a conv
    bias feeding batch norm). Running batch-norm buffers are restored
    afterwards.
    """
    if x.dtype != np.float64:
        raise ValueError("gradient_check requires float64 inputs")
    saved = [(l, l.running_mean.copy(), l.running_var.copy())
             for l in getattr(net, "layers", []) if isinstance(l, BatchNorm2d)]

    def loss_at() -> float:
        out = net.forward(x, training=True)
        return l1_loss(out, target)[0]

    out = net.forward(x, training=True)
    _, g = l1_loss(out, target)
    gin = net.backward(g)

    report: dict[str, float] = {}

    def check(analytic: np.ndarray, value: np.ndarray, name: str) -> None:
        worst = 0.0
        flat_v = value.reshape(-1)
        flat_a = analytic.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            lp = loss_at()
            flat_v[i] = orig - h
            lm = loss_at()
            flat_v[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            a = float(flat_a[i])
            if abs(a) < atol and abs(numeric) < atol:
                continue
            worst = max(worst, abs(a - numeric) / (abs(a) + abs(numeric)))
        report[name] = worst

    for p in net.params():
        check(p.grad, p.value, p.name or f"param{id(p)}")
    check(gin, x, "input")

    for layer, mean, var in saved:
        layer.running_mean = mean
        layer.running_var = var
    return report
