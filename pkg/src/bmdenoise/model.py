"""Residual denoising network: assembly, forward passes, weight files.

The network maps a 2k-channel patch block to a one-channel noise
residual; subtracting the residual from the noisy reference patch gives
the denoised patch. Blocks enter scaled by 1/255 and the residual is
scaled back by 255 on exit.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import neural

MAGIC = b"BMW1"
VERSION = 1
_BIAS_INIT = 0.2


class WeightFormatError(Exception):
    """Base class for weight-file problems."""


class MagicMismatchError(WeightFormatError):
    pass


class VersionMismatchError(WeightFormatError):
    pass


class ShapeMismatchError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


class ChecksumMismatchError(WeightFormatError):
    pass


@dataclass
class NetworkSpec:
    """Architecture knobs plus the training-noise tag stored in weight files."""

    depth: int = 17
    width: int = 64
    k: int = 4
    n_patch: int = 20
    sigma_tag: int = 25

    def validate(self) -> None:
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.width < 1 or self.k < 1 or self.n_patch < 1:
            raise ValueError(
                f"width/k/n_patch must be >= 1, got {self.width}/{self.k}/{self.n_patch}"
            )

    def stage_bounds(self) -> dict[str, tuple[int, int]]:
        """1-based inclusive layer ranges of the three conceptual stages.

        The default depth splits 6/5/6; other depths scale proportionally.
        """
        n_ext = max(1, round(self.depth * 6 / 17))
        n_rec = max(1, round(self.depth * 6 / 17))
        n_ref = self.depth - n_ext - n_rec
        return {
            "extraction": (1, n_ext),
            "refinement": (n_ext + 1, n_ext + n_ref),
            "reconstruction": (n_ext + n_ref + 1, self.depth),
        }

    def stage_of(self, layer: int) -> str:
        for name, (lo, hi) in self.stage_bounds().items():
            if lo <= layer <= hi:
                return name
        raise ValueError(f"layer {layer} outside 1..{self.depth}")


class Network:
    """Layer-block chain: conv+relu, (conv+bn+relu) x (depth-2), conv."""

    def __init__(self, spec: NetworkSpec, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.blocks: list[list] = []
        in_ch = 2 * spec.k
        first = neural.Conv2d(in_ch, spec.width, dtype, name="conv1")
        self.blocks.append([first, neural.ReLU()])
        for i in range(2, spec.depth):
            conv = neural.Conv2d(spec.width, spec.width, dtype, name=f"conv{i}")
            bn = neural.BatchNorm2d(spec.width, dtype=dtype, name=f"bn{i}")
            self.blocks.append([conv, bn, neural.ReLU()])
        last = neural.Conv2d(spec.width, 1, dtype, name=f"conv{spec.depth}")
        self.blocks.append([last])

    @property
    def layers(self) -> list:
        return [layer for block in self.blocks for layer in block]

    def params(self) -> list[neural.Param]:
        return [p for layer in self.layers for p in layer.params()]

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def _scale_in(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != 2 * self.spec.k:
            raise ValueError(
                f"expected (B, {2 * self.spec.k}, n, n) block channels, got {x.shape}"
            )
        return (x / 255.0).astype(self.dtype)

    def forward_scaled(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Residual on the internal 0..1 scale; input on the 0..255 scale."""
        h = self._scale_in(x)
        for layer in self.layers:
            h = layer.forward(h, training)
        return h

    def backward(self, gout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            gout = layer.backward(gout)
        return gout

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        # Sequential-style alias used by gradient_check: internal scale
        # in and out, no 255 scaling anywhere.
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def forward_residual(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Noise residual on the 0..255 scale, shape (B, 1, n, n), float64."""
        return self.forward_scaled(x, training).astype(np.float64) * 255.0

    def forward_planes(self, x: np.ndarray, layer: int) -> np.ndarray:
        """Activations after layer-block `layer` (1-based) for one block.

        The final layer yields the single-plane residual on the 0..255
        scale; earlier layers yield their post-activation planes as is.
        """
        if not (1 <= layer <= self.spec.depth):
            raise ValueError(f"layer must lie in 1..{self.spec.depth}, got {layer}")
        h = self._scale_in(x)
        for i, block in enumerate(self.blocks, start=1):
            for op in block:
                h = op.forward(h, training=False)
            if i == layer:
                out = h.astype(np.float64)
                return out * 255.0 if layer == self.spec.depth else out
        raise AssertionError("unreachable")

    def denoise_block(self, block) -> np.ndarray:
        """Denoised reference patch: noisy reference minus the residual."""
        residual = self.forward_residual(block.channels[None, ...])
        return np.asarray(block.channels[0], dtype=np.float64) - residual[0, 0]


def build_network(spec: NetworkSpec, seed: int, dtype=np.float32) -> Network:
    """Construct a network with Gaussian fan-in init and biases at 0.2."""
    net = Network(spec, dtype)
    for i, block in enumerate(net.blocks, start=1):
        conv = block[0]
        n_in = conv.in_ch * 9
        conv.w.value = neural.xavier_init(conv.w.value.shape, n_in, seed, key=(i,)).astype(dtype)
        conv.b.value = np.full(conv.out_ch, _BIAS_INIT, dtype=dtype)
    return net


def _middle_bn(net: Network) -> list[neural.BatchNorm2d]:
    return [block[1] for block in net.blocks[1:-1]]


def _array_order(net: Network) -> list[np.ndarray]:
    arrays = []
    for i, block in enumerate(net.blocks):
        conv = block[0]
        arrays.append(conv.w.value)
        arrays.append(conv.b.value)
        if 0 < i < len(net.blocks) - 1:
            bn = block[1]
            arrays.extend([bn.gamma.value, bn.beta.value, bn.running_mean, bn.running_var])
    return arrays


def save_weights(path, net: Network) -> None:
    """Serialize as BMW1: header, float32 arrays in layer order, CRC-32."""
    spec = net.spec
    payload = bytearray(MAGIC)
    payload += struct.pack("<6I", VERSION, spec.depth, spec.width, spec.k,
                           spec.n_patch, spec.sigma_tag)
    for arr in _array_order(net):
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)))
    with open(path, "wb") as fh:
        fh.write(bytes(payload))


def _payload_floats(spec: NetworkSpec) -> int:
    width, k, depth = spec.width, spec.k, spec.depth
    total = width * 2 * k * 9 + width            # first conv
    total += (depth - 2) * (width * width * 9 + width + 4 * width)
    total += 1 * width * 9 + 1                   # last conv
    return total


def load_weights(path) -> Network:
    """Read a BMW1 file back into a float32 network."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise TruncatedFileError(f"file holds {len(buf)} bytes, header needs 28")
    if buf[:4] != MAGIC:
        raise MagicMismatchError(f"magic is {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 28:
        raise TruncatedFileError(f"file holds {len(buf)} bytes, header needs 28")
    version, depth, width, k, n_patch, sigma_tag = struct.unpack("<6I", buf[4:28])
    if version != VERSION:
        raise VersionMismatchError(f"version {version}, expected {VERSION}")
    spec = NetworkSpec(depth=depth, width=width, k=k, n_patch=n_patch, sigma_tag=sigma_tag)
    try:
        spec.validate()
    except ValueError as exc:
        raise ShapeMismatchError(str(exc)) from None
    expected = 28 + 4 * _payload_floats(spec) + 4
    if len(buf) < expected:
        raise TruncatedFileError(f"file holds {len(buf)} bytes, expected {expected}")
    if len(buf) > expected:
        raise ShapeMismatchError(
            f"file holds {len(buf)} bytes, expected {expected} for this header"
        )
    stored_crc = struct.unpack("<I", buf[-4:])[0]
    actual_crc = zlib.crc32(buf[:-4])
    if stored_crc != actual_crc:
        raise ChecksumMismatchError(f"crc {actual_crc:#010x} != stored {stored_crc:#010x}")
    net = Network(spec, np.float32)
    pos = 28
    for arr in _array_order(net):
        count = arr.size
        vals = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(arr.shape)
        arr[...] = vals
        pos += 4 * count
    return net
