"""Procedural real/fake corpus.

Real images are broadband textures: multi-octave value noise plus fine
grain. Fakes run the same generator and then lose high-frequency content
through one of three recipes. Every real image also carries its own
suppressed copy, which serves as the fake partner for patch swapping.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensions
from .image import ResizeFilter, resize

CUTOFF = 0.6  # fraction of Nyquist kept by the low-pass recipes
GRAIN_RANGE = (0.08, 0.15)
TEXTURE_AMPLITUDE = 0.1


class FakeRecipe(enum.Enum):
    LOW_PASS_NOISE = "lowpass"
    CHECKER_SUPPRESSED = "checker"
    UPSAMPLED_TEXTURE = "upsampled"


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    count: int = 100
    size_range: tuple[int, int] = (64, 160)
    fake_recipe: FakeRecipe = FakeRecipe.LOW_PASS_NOISE
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise InvalidDimensions(f"count must be positive, got {self.count}")
        lo, hi = self.size_range
        if lo < 8 or lo > hi:
            raise InvalidDimensions(f"bad size range {self.size_range}")


@dataclass
class Sample:
    image: np.ndarray
    label: int  # 1 = fake
    paired: np.ndarray | None = None


def value_noise(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Colour texture in [0, 1]: smooth octaves, then per-image grain."""
    base = rng.uniform(0.35, 0.65, size=3)
    out = np.broadcast_to(base, (h, w, 3)).copy()
    amp = TEXTURE_AMPLITUDE
    for cell in (48, 24, 12, 6):
        gh, gw = max(2, -(-h // cell) + 1), max(2, -(-w // cell) + 1)
        lum = rng.standard_normal((gh, gw, 1))
        chroma = 0.3 * rng.standard_normal((gh, gw, 3))
        out += amp * resize(lum + chroma, h, w, ResizeFilter.BILINEAR)
        amp *= 0.6
    sigma = rng.uniform(*GRAIN_RANGE)
    grain = rng.standard_normal((h, w, 1)) + 0.4 * rng.standard_normal((h, w, 3))
    out += sigma * grain / np.sqrt(1.16)
    return np.clip(out, 0.0, 1.0)


def radial_lowpass(img: np.ndarray, cutoff: float = CUTOFF) -> np.ndarray:
    """Zero every DFT bin whose radius exceeds ``cutoff`` x Nyquist."""
    h, w = img.shape[:2]
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    keep = np.sqrt(fy * fy + fx * fx) <= cutoff * 0.5
    spec = np.fft.fft2(img, axes=(0, 1))
    return np.fft.ifft2(spec * keep[:, :, None], axes=(0, 1)).real


def suppress(img: np.ndarray, recipe: FakeRecipe) -> np.ndarray:
    h, w = img.shape[:2]
    if recipe is FakeRecipe.LOW_PASS_NOISE:
        out = radial_lowpass(img)
    elif recipe is FakeRecipe.CHECKER_SUPPRESSED:
        yy, xx = np.indices((h, w))
        checker = np.where((yy + xx) % 2 == 0, 1.0, -1.0)[:, :, None]
        out = radial_lowpass(img) + 0.01 * checker
    elif recipe is FakeRecipe.UPSAMPLED_TEXTURE:
        small = resize(img, max(1, (h + 1) // 2), max(1, (w + 1) // 2), ResizeFilter.BILINEAR)
        out = resize(radial_lowpass(small, 0.9), h, w, ResizeFilter.BILINEAR)
    else:  # pragma: no cover
        raise InvalidDimensions(f"unknown recipe {recipe}")
    return np.clip(out, 0.0, 1.0)


def generate_corpus(spec: SyntheticCorpusSpec) -> list[Sample]:
    """``count`` reals then ``count`` fakes, balanced 1:1 and size-matched.

    Fake ``i`` gets the same (h, w) as real ``i`` but an independent texture.
    """
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.size_range
    sizes = rng.integers(lo, hi + 1, size=(spec.count, 2))
    seeds = rng.integers(0, 2**63, size=(spec.count, 2))
    reals, fakes = [], []
    for (h, w), (s_real, s_fake) in zip(sizes, seeds):
        real = value_noise(int(h), int(w), np.random.default_rng(s_real))
        reals.append(Sample(real, 0, suppress(real, spec.fake_recipe)))
        other = value_noise(int(h), int(w), np.random.default_rng(s_fake))
        fakes.append(Sample(suppress(other, spec.fake_recipe), 1))
    return reals + fakes


def split(samples: list[Sample]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    real = [s.image for s in samples if s.label == 0]
    fake = [s.image for s in samples if s.label == 1]
    return real, fake
