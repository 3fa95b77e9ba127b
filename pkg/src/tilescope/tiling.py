"""Tile planning for the local path.

Inference covers the image with a deterministic grid of ``ceil(L/P)`` tiles
per axis; training draws a random number of tiles at arbitrary offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ImageSmallerThanTile, InvalidDimensions
from .image import ResizeFilter, resize


@dataclass(frozen=True)
class TilePlan:
    tile_size: int
    origins: tuple[tuple[int, int], ...]
    source_h: int
    source_w: int

    def __len__(self) -> int:
        return len(self.origins)

    def coverage(self) -> np.ndarray:
        """Per-pixel count of tiles covering it."""
        cov = np.zeros((self.source_h, self.source_w), dtype=np.int32)
        p = self.tile_size
        for top, left in self.origins:
            cov[top : top + p, left : left + p] += 1
        return cov

    def crops(self, img: np.ndarray) -> list[np.ndarray]:
        p = self.tile_size
        return [img[t : t + p, l : l + p] for t, l in self.origins]

    def to_csv(self, seed: int | None = None) -> str:
        lines = [] if seed is None else [f"# seed={seed}"]
        lines.append("index,top,left,size")
        lines += [f"{i},{t},{l},{self.tile_size}" for i, (t, l) in enumerate(self.origins)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SamplingConfig:
    k_min: int = 1
    k_max: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise InvalidDimensions(f"need 1 <= k_min <= k_max, got {self.k_min}, {self.k_max}")


def axis_starts(length: int, tile: int) -> list[int]:
    """Tile start offsets along one axis.

    ``N = ceil(L/P)`` tiles; tile ``i < N`` starts at ``floor(L/N * (i-1))``
    (1-based ``i``) and the last starts at ``L - P``.
    """
    if tile < 1:
        raise InvalidDimensions("tile size must be positive")
    if length < tile:
        raise ImageSmallerThanTile(f"length {length} < tile {tile}")
    n = -(-length // tile)
    # integer floor(L*(i-1)/N) avoids float rounding at exact multiples
    starts = [(length * (i - 1)) // n for i in range(1, n)]
    starts.append(length - tile)
    return starts


def full_coverage_plan(h: int, w: int, tile: int) -> TilePlan:
    rows = axis_starts(h, tile)
    cols = axis_starts(w, tile)
    return TilePlan(tile, tuple((t, l) for t in rows for l in cols), h, w)


def normalized_size(h: int, w: int, tile: int) -> tuple[int, int]:
    short = min(h, w)
    if short >= tile:
        return h, w
    ratio = tile / short

    def scale(n):
        return tile if n == short else max(tile, math.floor(n * ratio + 0.5))

    return scale(h), scale(w)


def normalize_small(img: np.ndarray, tile: int) -> np.ndarray:
    """Upscale so the short side equals ``tile``; larger images pass through."""
    h, w = img.shape[:2]
    nh, nw = normalized_size(h, w, tile)
    if (nh, nw) == (h, w):
        return img
    return resize(img, nh, nw, ResizeFilter.BILINEAR)


def sample_training_tiles(
    h: int, w: int, tile: int, cfg: SamplingConfig, rng: np.random.Generator | None = None
) -> TilePlan:
    """Random training plan: ``K ~ U[k_min, min(k_max, grid count)]`` tiles at any offset.

    Exact duplicate origins are redrawn up to 10 times and then kept.
    """
    if h < tile or w < tile:
        raise ImageSmallerThanTile(f"{h}x{w} smaller than tile {tile}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    grid_count = -(-h // tile) * -(-w // tile)
    distinct = (h - tile + 1) * (w - tile + 1)
    k_hi = max(1, min(cfg.k_max, grid_count, distinct))
    k_lo = min(cfg.k_min, k_hi)
    k = int(rng.integers(k_lo, k_hi + 1))
    origins: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for _ in range(k):
        for _attempt in range(11):
            o = (int(rng.integers(0, h - tile + 1)), int(rng.integers(0, w - tile + 1)))
            if o not in seen:
                break
        seen.add(o)
        origins.append(o)
    return TilePlan(tile, tuple(origins), h, w)


def center_plan(h: int, w: int, tile: int) -> TilePlan:
    if h < tile or w < tile:
        raise ImageSmallerThanTile(f"{h}x{w} smaller than tile {tile}")
    return TilePlan(tile, (((h - tile) // 2, (w - tile) // 2),), h, w)
