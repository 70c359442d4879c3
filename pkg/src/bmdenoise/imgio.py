"""Grayscale image I/O, noise synthesis, and fidelity metrics.

Images are 2-D float64 arrays on the 0..255 scale. Intermediate values
may leave that range (noise, residuals); clamping happens only inside
write_pgm and psnr.
"""

from __future__ import annotations

import math

import numpy as np

from . import rng

_WHITESPACE = b" \t\r\n\f\v"


class ImageFormatError(ValueError):
    """Raised for malformed PGM/PFM content; the message names the field."""


def _next_token(buf: bytes, pos: int, field: str, comments: bool = True) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c in _WHITESPACE:
            pos += 1
        elif comments and c == b"#":
            nl = buf.find(b"\n", pos)
            pos = n if nl < 0 else nl + 1
        else:
            break
    start = pos
    while pos < n and buf[pos : pos + 1] not in _WHITESPACE and not (comments and buf[pos : pos + 1] == b"#"):
        pos += 1
    if start == pos:
        raise ImageFormatError(f"missing {field}")
    return buf[start:pos], pos


def _int_token(buf: bytes, pos: int, field: str, comments: bool = True) -> tuple[int, int]:
    tok, pos = _next_token(buf, pos, field, comments)
    try:
        val = int(tok)
    except ValueError:
        raise ImageFormatError(f"{field} is not an integer: {tok!r}") from None
    return val, pos


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) PGM with maxval <= 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _next_token(buf, 0, "magic")
    if magic not in (b"P5", b"P2"):
        raise ImageFormatError(f"magic is {magic!r}, expected P5 or P2")
    width, pos = _int_token(buf, pos, "width")
    height, pos = _int_token(buf, pos, "height")
    if width < 1 or height < 1:
        raise ImageFormatError(f"width/height must be positive, got {width}x{height}")
    maxval, pos = _int_token(buf, pos, "maxval")
    if maxval <= 0:
        raise ImageFormatError(f"maxval must be positive, got {maxval}")
    if maxval > 255:
        raise ImageFormatError(f"maxval {maxval} exceeds 255")
    count = width * height
    if magic == b"P5":
        pos += 1  # exactly one whitespace byte after maxval
        raster = buf[pos : pos + count]
        if len(raster) < count:
            raise ImageFormatError(
                f"raster truncated: expected {count} bytes, got {len(raster)}"
            )
        data = np.frombuffer(raster, dtype=np.uint8, count=count)
    else:
        vals = np.empty(count, dtype=np.int64)
        for i in range(count):
            vals[i], pos = _int_token(buf, pos, f"sample {i}")
        if vals.min() < 0 or vals.max() > maxval:
            bad = int(vals[(vals < 0) | (vals > maxval)][0])
            raise ImageFormatError(f"sample value {bad} outside 0..{maxval}")
        data = vals
    return data.reshape(height, width).astype(np.float64)


def write_pgm(path, image: np.ndarray) -> None:
    """Write binary P5, rounding half away from zero and clamping to 0..255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    rounded = np.sign(img) * np.floor(np.abs(img) + 0.5)
    data = np.clip(rounded, 0.0, 255.0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a grayscale (Pf) PFM; rows are stored bottom to top."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _next_token(buf, 0, "magic", comments=False)
    if magic != b"Pf":
        raise ImageFormatError(f"magic is {magic!r}, expected Pf")
    width, pos = _int_token(buf, pos, "width", comments=False)
    height, pos = _int_token(buf, pos, "height", comments=False)
    if width < 1 or height < 1:
        raise ImageFormatError(f"width/height must be positive, got {width}x{height}")
    tok, pos = _next_token(buf, pos, "scale", comments=False)
    try:
        scale = float(tok)
    except ValueError:
        raise ImageFormatError(f"scale is not a number: {tok!r}") from None
    if scale == 0.0:
        raise ImageFormatError("scale must be nonzero")
    pos += 1
    count = width * height
    endian = "<" if scale < 0 else ">"
    raster = buf[pos : pos + 4 * count]
    if len(raster) < 4 * count:
        raise ImageFormatError(
            f"raster truncated: expected {4 * count} bytes, got {len(raster)}"
        )
    data = np.frombuffer(raster, dtype=endian + "f4", count=count)
    img = data.reshape(height, width).astype(np.float64)
    return img[::-1].copy()


def write_pfm(path, image: np.ndarray) -> None:
    """Write grayscale little-endian PFM (float32, lossless for f32 data)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        fh.write(img[::-1].astype("<f4").tobytes())


def noise_field(shape, sigma: float, seed: int, key: tuple[int, ...] = ()) -> np.ndarray:
    """White Gaussian noise of standard deviation sigma."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(shape, dtype=np.float64)
    return sigma * rng.gaussian(shape, seed, (rng.TAG_NOISE,) + tuple(key))


def add_awgn(image: np.ndarray, sigma: float, seed: int, key: tuple[int, ...] = ()) -> np.ndarray:
    """Add white Gaussian noise of standard deviation sigma (unclamped)."""
    img = np.asarray(image, dtype=np.float64)
    return img + noise_field(img.shape, sigma, seed, key)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB after clamping both inputs to 0..255."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ca = np.clip(a, 0.0, 255.0)
    cb = np.clip(b, 0.0, 255.0)
    mse = float(np.mean((ca - cb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)
