"""Frequency-domain view of resizing versus cropping.

Spectra use centred indexing: bin ``(r1, r2)`` with ``-rows/2 <= r1 < rows/2``
lives at array position ``(r1 + rows//2, r2 + cols//2)`` (``fftshift`` order).
The DTFT helpers evaluate a finite image at arbitrary continuous frequencies
``(omega1, omega2)`` in radians per sample, ``omega1`` along rows.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptySet, ImageTooSmall, InvalidDimensions, IoFailure, PartitionMismatch
from .image import ResizeFilter, quantize, resize, to_luma


@dataclass(frozen=True)
class SpectrumGrid:
    values: np.ndarray  # complex, centred layout

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def at(self, r1: int, r2: int) -> complex:
        i = r1 + self.rows // 2
        j = r2 + self.cols // 2
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"bin ({r1}, {r2}) outside {self.rows}x{self.cols} grid")
        return complex(self.values[i, j])

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Signed bin indices along rows and columns, in array order."""
        return (
            np.arange(self.rows) - self.rows // 2,
            np.arange(self.cols) - self.cols // 2,
        )


class FrequencySample(NamedTuple):
    omega1: float
    omega2: float


@dataclass(frozen=True)
class TilePartition:
    """Exact non-overlapping split of an image into ``n0 x n1`` tiles."""

    row_sizes: tuple[int, ...]
    col_sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.row_sizes or not self.col_sizes:
            raise PartitionMismatch("partition needs at least one row and one column")
        if min(self.row_sizes) < 1 or min(self.col_sizes) < 1:
            raise PartitionMismatch("tile sizes must be positive")

    @property
    def n0(self) -> int:
        return len(self.row_sizes)

    @property
    def n1(self) -> int:
        return len(self.col_sizes)

    @property
    def row_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.row_sizes)[:-1]]).astype(int)

    @property
    def col_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.col_sizes)[:-1]]).astype(int)

    @property
    def shape(self) -> tuple[int, int]:
        return sum(self.row_sizes), sum(self.col_sizes)

    def split(self, img: np.ndarray) -> list[list[np.ndarray]]:
        plane = _plane(img)
        if plane.shape != self.shape:
            raise PartitionMismatch(f"partition covers {self.shape}, image is {plane.shape}")
        return [
            [plane[r : r + mr, c : c + mc] for c, mc in zip(self.col_offsets, self.col_sizes)]
            for r, mr in zip(self.row_offsets, self.row_sizes)
        ]

    @classmethod
    def random(cls, h: int, w: int, rng: np.random.Generator, max_tiles: int = 4) -> "TilePartition":
        def cuts(n):
            k = int(rng.integers(1, min(max_tiles, n) + 1))
            inner = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False)) if k > 1 else []
            edges = np.concatenate([[0], inner, [n]]).astype(int)
            return tuple(int(d) for d in np.diff(edges))

        return cls(cuts(h), cuts(w))


def _plane(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[2] == 3:
            a = to_luma(a)
        a = a[:, :, 0]
    return a


def dft2(img) -> SpectrumGrid:
    return SpectrumGrid(np.fft.fftshift(np.fft.fft2(_plane(img))))


def idft2(spec: SpectrumGrid) -> np.ndarray:
    """Inverse of :func:`dft2`; returns the real part."""
    return np.fft.ifft2(np.fft.ifftshift(spec.values)).real


def truncate_spectrum(spec: SpectrumGrid, out_rows: int, out_cols: int) -> SpectrumGrid:
    """Centred crop of a spectrum, scaled by the ratio of grid areas.

    On an axis that shrinks, bins with ``|r| < out/2`` survive (so the
    ``-out/2`` bin is zero); an axis that keeps its size keeps every bin.
    """
    rows, cols = spec.rows, spec.cols
    for n_in, n_out in ((rows, out_rows), (cols, out_cols)):
        if n_out < 1 or n_out > n_in:
            raise InvalidDimensions(f"cannot truncate {n_in} bins to {n_out}")
        if n_out != n_in and (n_in % 2 or n_out % 2):
            raise InvalidDimensions(f"truncation needs even sizes, got {n_in}->{n_out}")
    scale = (out_rows * out_cols) / (rows * cols)
    out = np.zeros((out_rows, out_cols), dtype=complex)

    def kept(n_in, n_out):
        if n_in == n_out:
            return np.arange(n_in) - n_in // 2
        return np.arange(-(n_out // 2 - 1), n_out // 2)

    k1 = kept(rows, out_rows)
    k2 = kept(cols, out_cols)
    out[np.ix_(k1 + out_rows // 2, k2 + out_cols // 2)] = scale * spec.values[np.ix_(k1 + rows // 2, k2 + cols // 2)]
    return SpectrumGrid(out)


def dirichlet(m: int, omega) -> np.ndarray:
    """``sin(m w/2) / sin(w/2)`` with the removable singularities filled in."""
    omega = np.asarray(omega, dtype=np.float64)
    s = np.sin(omega / 2)
    near = np.abs(s) < 1e-8
    safe = np.where(near, 1.0, s)
    ratio = np.sin(m * omega / 2) / safe
    # L'Hopital at omega = 2*pi*k
    limit = m * np.cos(m * omega / 2) / np.cos(omega / 2)
    return np.where(near, limit, ratio)


def window_spectrum(sample, m1: int, m2: int):
    """DTFT of an ``m1 x m2`` rectangular window anchored at the origin."""
    w1, w2 = np.asarray(sample[0], dtype=np.float64), np.asarray(sample[1], dtype=np.float64)
    if m1 < 1 or m2 < 1:
        raise InvalidDimensions("window sizes must be positive")
    phase = np.exp(-1j * (w1 * (m1 - 1) / 2 + w2 * (m2 - 1) / 2))
    out = phase * dirichlet(m1, w1) * dirichlet(m2, w2)
    return complex(out) if out.ndim == 0 else out


def tile_dtft(tile, sample) -> complex:
    """``sum_{x,y} tile[x, y] exp(-j (omega1 x + omega2 y))`` in tile-local coordinates."""
    plane = _plane(tile)
    e1 = np.exp(-1j * sample[0] * np.arange(plane.shape[0]))
    e2 = np.exp(-1j * sample[1] * np.arange(plane.shape[1]))
    return complex(e1 @ plane @ e2)


def reconstruct_spectrum(partition: TilePartition, tiles: Sequence[Sequence[np.ndarray]], sample) -> complex:
    """Full-image DTFT assembled from per-tile DTFTs and their phase shifts."""
    if len(tiles) != partition.n0 or any(len(row) != partition.n1 for row in tiles):
        raise PartitionMismatch("tile grid does not match partition shape")
    total = 0j
    for a, (da, ma) in enumerate(zip(partition.row_offsets, partition.row_sizes)):
        for b, (db, mb) in enumerate(zip(partition.col_offsets, partition.col_sizes)):
            tile = _plane(tiles[a][b])
            if tile.shape != (ma, mb):
                raise PartitionMismatch(f"tile ({a},{b}) is {tile.shape}, expected {(ma, mb)}")
            shift = np.exp(-1j * (sample[0] * da + sample[1] * db))
            total += shift * tile_dtft(tile, sample)
    return complex(total)


def windowed_dtft_by_convolution(img, top: int, left: int, m1: int, m2: int, sample) -> complex:
    """DTFT of ``img * window`` computed in the frequency domain.

    Evaluates ``(1/N1N2) sum_k X[k] W(omega - 2 pi k / N)`` where ``X`` is the
    image DFT and ``W`` the spectrum of the window placed at ``(top, left)``.
    """
    plane = _plane(img)
    n1, n2 = plane.shape
    if top < 0 or left < 0 or top + m1 > n1 or left + m2 > n2:
        raise InvalidDimensions("window must lie inside the image")
    spec = np.fft.fft2(plane)
    nu1 = sample[0] - 2 * np.pi * np.arange(n1) / n1
    nu2 = sample[1] - 2 * np.pi * np.arange(n2) / n2
    g1, g2 = np.meshgrid(nu1, nu2, indexing="ij")
    w = window_spectrum((g1, g2), m1, m2) * np.exp(-1j * (g1 * top + g2 * left))
    return complex(np.sum(spec * w) / (n1 * n2))


class PreprocessMode(enum.Enum):
    RESIZE = "resize"
    CROP = "crop"


def _even(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane[: h - h % 2, : w - w % 2]


def _mean_power(images, mode: PreprocessMode, out_size: int, seed: int, filt: ResizeFilter) -> np.ndarray:
    rng = np.random.default_rng(seed)
    acc = np.zeros((out_size, out_size))
    for img in images:
        plane = _plane(img)
        h, w = plane.shape
        if mode is PreprocessMode.RESIZE:
            if h < 2 * out_size or w < 2 * out_size:
                raise ImageTooSmall(f"{h}x{w} image cannot be resized-by-2 to {out_size}")
            if filt is ResizeFilter.IDEAL_LOW_PASS:
                plane = _even(plane)
            small = resize(plane, out_size, out_size, filt)[:, :, 0]
        else:
            if h < out_size or w < out_size:
                raise ImageTooSmall(f"{h}x{w} image smaller than crop {out_size}")
            top = int(rng.integers(0, h - out_size + 1))
            left = int(rng.integers(0, w - out_size + 1))
            small = plane[top : top + out_size, left : left + out_size]
        acc += np.abs(dft2(small).values) ** 2
    return acc / len(images)


def energy_ratio_map(
    real_set: Sequence[np.ndarray],
    fake_set: Sequence[np.ndarray],
    mode: PreprocessMode | str,
    out_size: int,
    seed: int = 0,
    filter: ResizeFilter = ResizeFilter.IDEAL_LOW_PASS,
) -> np.ndarray:
    """Per-bin ratio of mean real power to mean fake power, centred layout.

    RGB inputs are converted to luma. Crop mode takes one random
    ``out_size`` window per image; each set draws from its own generator
    seeded with ``seed``, so identical sets get identical windows. Resize
    mode drops a trailing odd row/column before an ideal low-pass resize.
    """
    mode = PreprocessMode(mode)
    if not real_set or not fake_set:
        raise EmptySet("both image sets must be non-empty")
    real = _mean_power(real_set, mode, out_size, seed, filter)
    fake = _mean_power(fake_set, mode, out_size, seed, filter)
    tiny = 1e-300
    return (real + tiny) / (fake + tiny)


def radial_index(n: int) -> np.ndarray:
    r = np.arange(n) - n // 2
    return np.hypot(r[:, None], r[None, :])


def band_mean(ratio: np.ndarray, inner: float) -> float:
    """Mean of a centred square map over bins with radius ``> inner``."""
    sel = radial_index(ratio.shape[0]) > inner
    return float(ratio[sel].mean())


def log_ratio_bytes(ratio: np.ndarray) -> np.ndarray:
    """log10 ratio clamped to [-2, 2], mapped linearly onto 0..255."""
    lr = np.clip(np.log10(ratio), -2.0, 2.0)
    return quantize((lr + 2.0) / 4.0)


def write_ratio_csv(ratio: np.ndarray, path: str | os.PathLike, seed: int | None = None) -> None:
    rows, cols = ratio.shape
    try:
        with open(path, "w") as fh:
            if seed is not None:
                fh.write(f"# seed={seed}\n")
            fh.write("row,col,ratio\n")
            for i in range(rows):
                for j in range(cols):
                    fh.write(f"{i - rows // 2},{j - cols // 2},{ratio[i, j]:.10g}\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def write_ratio_pgm(ratio: np.ndarray, path: str | os.PathLike, seed: int | None = None) -> None:
    data = log_ratio_bytes(ratio)
    header = b"P5\n"
    if seed is not None:
        header += f"# seed={seed}\n".encode()
    header += f"{data.shape[1]} {data.shape[0]}\n255\n".encode()
    try:
        with open(path, "wb") as fh:
            fh.write(header + data.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
