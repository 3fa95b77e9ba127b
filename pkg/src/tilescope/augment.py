"""Training-time perturbations with exact ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateOutput, DimensionMismatch, IndivisibleDimensions, InvalidDimensions
from .image import ResizeFilter, as_image, resize

# JPEG Annex K luminance table
BASE_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)


def ijg_scale(qf: int) -> int:
    if not 1 <= qf <= 100:
        raise InvalidDimensions(f"quality factor must be in [1, 100], got {qf}")
    return 5000 // qf if qf < 50 else 200 - 2 * qf


def quant_table(qf: int) -> np.ndarray:
    scale = ijg_scale(qf)
    return np.clip((BASE_LUMA_TABLE * scale + 50) // 100, 1, 255)


def jpeg_degrade(img: np.ndarray, qf: int) -> np.ndarray:
    """DCT quantization round trip on 8x8 blocks of every channel.

    No entropy coding and no chroma subsampling; every channel uses the
    luminance table. Edge blocks are padded by replication and cropped back.
    """
    img = as_image(img)
    h, w, c = img.shape
    table = quant_table(int(qf)).astype(np.float64)
    ph, pw = -h % 8, -w % 8
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge") * 255.0 - 128.0
    out = np.empty_like(padded)
    for ch in range(c):
        out[:, :, ch] = kernels.jpeg_plane(padded[:, :, ch], table)
    return np.clip((out[:h, :w] + 128.0) / 255.0, 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise InvalidDimensions(f"sigma must be positive, got {sigma}")
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with half-sample symmetric edges (sum-preserving)."""
    return kernels.separable_blur(as_image(img), gaussian_kernel(sigma))


def scaled_size(h: int, w: int, factor: float) -> tuple[int, int]:
    return math.floor(h * factor + 0.5), math.floor(w * factor + 0.5)


def random_scale(img: np.ndarray, factor: float) -> np.ndarray:
    if factor <= 0:
        raise DegenerateOutput(f"scale factor must be positive, got {factor}")
    h, w = img.shape[:2]
    nh, nw = scaled_size(h, w, factor)
    if nh < 1 or nw < 1:
        raise DegenerateOutput(f"{h}x{w} scaled by {factor} is empty")
    return resize(img, nh, nw, ResizeFilter.BILINEAR)


def swap_cells(h: int, w: int, grid: int) -> list[tuple[int, int, int, int]]:
    """Row-major (top, left, height, width) cells of the swap grid; trailing cells may be smaller or empty."""
    ch, cw = -(-h // grid), -(-w // grid)
    cells = []
    for i in range(grid):
        for j in range(grid):
            t, l = min(i * ch, h), min(j * cw, w)
            cells.append((t, l, min(ch, h - t), min(cw, w - l)))
    return cells


def random_patch_swap(
    real_img: np.ndarray, fake_img: np.ndarray, ratio: float, grid: int = 14, rng_seed=0
) -> tuple[np.ndarray, np.ndarray]:
    """Paste ``floor(ratio * grid**2)`` random grid cells of ``fake_img`` into ``real_img``.

    Returns the composite and a uint8 mask with 1 on fake-sourced pixels.
    ``rng_seed`` may also be a ``numpy.random.Generator``.
    """
    if real_img.shape != fake_img.shape:
        raise DimensionMismatch(f"{real_img.shape} vs {fake_img.shape}")
    if not 0.0 <= ratio <= 1.0:
        raise InvalidDimensions(f"swap ratio must be in [0, 1], got {ratio}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    h, w = real_img.shape[:2]
    cells = swap_cells(h, w, grid)
    n_swap = math.floor(ratio * grid * grid)
    chosen = rng.choice(len(cells), size=n_swap, replace=False)
    mask = np.zeros((h, w), dtype=np.uint8)
    for idx in chosen:
        t, l, ch, cw = cells[idx]
        mask[t : t + ch, l : l + cw] = 1
    composite = np.where(mask[:, :, None].astype(bool), fake_img, real_img)
    return composite, mask


def token_labels(mask: np.ndarray, patch_size: int) -> np.ndarray:
    """Per-patch mean of a pixel mask."""
    mask = np.asarray(mask)
    h, w = mask.shape
    if h % patch_size or w % patch_size:
        raise IndivisibleDimensions(f"{h}x{w} mask not divisible by patch {patch_size}")
    counts = mask.reshape(h // patch_size, patch_size, w // patch_size, patch_size).sum(axis=(1, 3))
    return counts / float(patch_size * patch_size)


def region_labels(mask: np.ndarray, grid: int) -> np.ndarray:
    """Mean of ``mask`` over each cell of a ``grid x grid`` split of the whole frame.

    Used for the global view, whose patches each summarise a block of the
    full-resolution image. Cell boundaries are ``floor(i * L / grid)``.
    """
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape
    rb = (np.arange(grid + 1) * h) // grid
    cb = (np.arange(grid + 1) * w) // grid
    # integral image makes every cell O(1)
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = mask.cumsum(0).cumsum(1)
    s = ii[rb[1:]][:, cb[1:]] - ii[rb[:-1]][:, cb[1:]] - ii[rb[1:]][:, cb[:-1]] + ii[rb[:-1]][:, cb[:-1]]
    area = np.outer(np.diff(rb), np.diff(cb))
    return s / np.maximum(area, 1)


GATE_ORDER = ("scale", "blur", "rps", "jpeg")


@dataclass(frozen=True)
class AugmentationPolicy:
    p_each: float = 0.10
    jpeg_qf_range: tuple[int, int] = (60, 100)
    blur_sigma_range: tuple[float, float] = (0.1, 2.5)
    scale_range: tuple[float, float] = (0.25, 2.0)
    rps_ratio_range: tuple[float, float] = (0.2, 0.98)
    rps_grid: int = 14
    seed: int = 0
    # per-gate overrides of p_each, e.g. (("jpeg", 0.5),)
    gate_rates: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.p_each <= 1.0:
            raise InvalidDimensions(f"p_each must be a probability, got {self.p_each}")
        for name, rate in self.gate_rates:
            if name not in GATE_ORDER:
                raise InvalidDimensions(f"unknown augmentation gate {name!r}")
            if not 0.0 <= rate <= 1.0:
                raise InvalidDimensions(f"gate rate must be a probability, got {rate}")
        for lo, hi in (self.jpeg_qf_range, self.blur_sigma_range, self.scale_range, self.rps_ratio_range):
            if lo > hi:
                raise InvalidDimensions(f"empty range [{lo}, {hi}]")

    def rate(self, gate: str) -> float:
        return dict(self.gate_rates).get(gate, self.p_each)


@dataclass
class Augmented:
    image: np.ndarray
    mask: np.ndarray | None = None
    qf: int | None = None
    applied: dict = field(default_factory=dict)


def draw_gates(policy: AugmentationPolicy, rng: np.random.Generator) -> dict[str, bool]:
    u = rng.random(len(GATE_ORDER))
    return {name: bool(x < policy.rate(name)) for name, x in zip(GATE_ORDER, u)}


def apply_policy(
    img: np.ndarray,
    partner: np.ndarray | None,
    policy: AugmentationPolicy,
    rng: np.random.Generator | None = None,
) -> Augmented:
    """Gate each augmentation independently at its rate (``p_each`` unless overridden); order scale, blur, RPS, JPEG.

    ``partner`` is the fake image used for patch swapping; it receives the
    same scale and blur as ``img`` and is bilinearly resized to match it if
    needed. Without a partner RPS is skipped even when its gate fires. The
    four gates and all parameters are drawn up front so the random stream
    does not depend on which branches run.
    """
    rng = rng if rng is not None else np.random.default_rng(policy.seed)
    gates = draw_gates(policy, rng)
    factor = float(rng.uniform(*policy.scale_range))
    sigma = float(rng.uniform(*policy.blur_sigma_range))
    ratio = float(rng.uniform(*policy.rps_ratio_range))
    rps_seed = int(rng.integers(0, 2**32))
    qf = int(rng.integers(policy.jpeg_qf_range[0], policy.jpeg_qf_range[1] + 1))

    out = as_image(img)
    if partner is not None:
        partner = as_image(partner)
        if partner.shape != out.shape:
            partner = resize(partner, out.shape[0], out.shape[1], ResizeFilter.BILINEAR)
    result = Augmented(out)
    if gates["scale"]:
        nh, nw = scaled_size(*out.shape[:2], factor)
        if nh >= 1 and nw >= 1:
            out = random_scale(out, factor)
            if partner is not None:
                partner = random_scale(partner, factor)
            result.applied["scale"] = factor
    if gates["blur"]:
        out = gaussian_blur(out, sigma)
        if partner is not None:
            partner = gaussian_blur(partner, sigma)
        result.applied["blur"] = sigma
    if gates["rps"] and partner is not None:
        out, result.mask = random_patch_swap(out, partner, ratio, policy.rps_grid, rps_seed)
        result.applied["rps"] = ratio
    if gates["jpeg"]:
        out = jpeg_degrade(out, qf)
        result.qf = qf
        result.applied["jpeg"] = qf
    result.image = out
    return result
