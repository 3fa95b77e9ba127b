"""Pixel-level primitives.

Images are ``float64`` arrays of shape ``(height, width, channels)`` with
values in ``[0, 1]`` and ``channels`` equal to 1 or 3.
"""

from __future__ import annotations

import enum
import os
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    CorruptFile,
    IdealLowPassUnsupported,
    InvalidDimensions,
    IoFailure,
    OutOfBounds,
    UnsupportedFormat,
    WrongChannelCount,
    ZeroDimension,
)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ResizeFilter(enum.Enum):
    IDEAL_LOW_PASS = "ideal"
    BILINEAR = "bilinear"


def as_image(arr) -> np.ndarray:
    """Coerce a 2-D or 3-D array into the (H, W, C) float64 layout."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise WrongChannelCount(f"expected (H, W[, 1|3]) array, got shape {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ZeroDimension(f"image has a zero dimension: {a.shape}")
    return a


def _read_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    fields: list[bytes] = []
    pos = 0
    n = len(data)
    while len(fields) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptFile("truncated header")
        fields.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise CorruptFile("missing whitespace after maxval")
    pos += 1
    magic = fields[0]
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise CorruptFile(f"non-numeric header field: {exc}") from None
    return magic, width, height, maxval, pos


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PPM (P6) or PGM (P5) file with maxval 255."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if data[:2] not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"{path}: not a binary PPM/PGM file")
    magic, width, height, maxval, offset = _read_header(data)
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"{path}: magic {magic!r}")
    if width <= 0 or height <= 0:
        raise ZeroDimension(f"{path}: {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: maxval {maxval} (only 255 supported)")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = data[offset : offset + expected]
    if len(payload) < expected:
        raise CorruptFile(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    raster = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return raster.astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] to uint8 with round-half-up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path: str | os.PathLike, comment: str | None = None) -> None:
    img = as_image(img)
    magic = b"P6" if img.shape[2] == 3 else b"P5"
    header = magic + b"\n"
    if comment:
        for line in comment.splitlines():
            header += b"# " + line.encode("ascii", "replace") + b"\n"
    header += f"{img.shape[1]} {img.shape[0]}\n255\n".encode()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(quantize(img).tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _kept_bins(n_in: int, n_out: int) -> np.ndarray:
    """Signed frequency indices retained when truncating an axis of n_in bins to n_out."""
    if n_out == n_in:
        return np.fft.fftfreq(n_in, 1.0 / n_in).astype(int)
    half = n_out // 2
    return np.arange(-(half - 1), half)


def _ideal_lowpass(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    for n_in, n_out in ((h, out_h), (w, out_w)):
        if n_out > n_in:
            raise IdealLowPassUnsupported("ideal low-pass resize only downsamples")
        if n_out != n_in and (n_in % 2 or n_out % 2):
            raise IdealLowPassUnsupported(f"ideal low-pass needs even sizes, got {n_in}->{n_out}")
    r1 = _kept_bins(h, out_h)
    r2 = _kept_bins(w, out_w)
    scale = (out_h * out_w) / (h * w)
    spec = np.fft.fft2(img, axes=(0, 1))
    small = np.zeros((out_h, out_w, img.shape[2]), dtype=complex)
    small[np.ix_(r1 % out_h, r2 % out_w)] = scale * spec[np.ix_(r1 % h, r2 % w)]
    return np.fft.ifft2(small, axes=(0, 1)).real


def resize(
    img: np.ndarray, out_h: int, out_w: int, filter: ResizeFilter = ResizeFilter.BILINEAR
) -> np.ndarray:
    """Resize to ``(out_h, out_w)``.

    ``BILINEAR`` uses half-pixel-centred sampling without antialiasing.
    ``IDEAL_LOW_PASS`` keeps the centred block of DFT coefficients
    (``|r| < out/2`` per changed axis, scaled by the area ratio) and is not
    clipped, so its output may ring slightly outside [0, 1].
    """
    if out_h < 1 or out_w < 1:
        raise InvalidDimensions(f"output size must be positive, got {out_h}x{out_w}")
    img = as_image(img)
    if (out_h, out_w) == img.shape[:2]:
        return img.copy()
    if filter is ResizeFilter.IDEAL_LOW_PASS:
        return _ideal_lowpass(img, out_h, out_w)
    return kernels.bilinear_resize(img, out_h, out_w)


def crop(img: np.ndarray, top: int, left: int, h: int, w: int) -> np.ndarray:
    H, W = img.shape[:2]
    if h < 1 or w < 1 or top < 0 or left < 0 or top + h > H or left + w > W:
        raise OutOfBounds(f"window ({top},{left},{h},{w}) outside {H}x{W}")
    return img[top : top + h, left : left + w].copy()


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise WrongChannelCount(f"to_luma needs 3 channels, got shape {img.shape}")
    return (img @ LUMA_WEIGHTS)[:, :, None]
