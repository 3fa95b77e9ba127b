"""Joint training loop: augmentation, tile sampling, loss, AdamW/SGD."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augment import AugmentationPolicy, apply_policy, region_labels, token_labels
from .corpus import Sample
from .errors import EmptyCorpus, InvalidDimensions, NonFiniteLoss
from .image import ResizeFilter, resize
from .model import ModelConfig, Targets, is_backbone, loss_and_grads
from .tiling import SamplingConfig, normalize_small, sample_training_tiles


class Optimizer(enum.Enum):
    SGD = "sgd"
    ADAMW = "adamw"


class Schedule(enum.Enum):
    CONSTANT = "constant"
    COSINE = "cosine"  # linear warmup, then cosine decay to zero


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    steps: int = 2000
    batch_size: int = 8
    optimizer: Optimizer = Optimizer.ADAMW
    weight_decay: float = 0.01
    seed: int = 0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    k_min: int = 1
    k_max: int = 16
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    schedule: Schedule = Schedule.CONSTANT
    warmup_steps: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.steps < 0 or self.batch_size < 1:
            raise InvalidDimensions("learning_rate, steps must be >= 0 and batch_size >= 1")
        if self.weight_decay < 0 or any(w < 0 for w in self.loss_weights):
            raise InvalidDimensions("weight decay and loss weights must be non-negative")
        if self.warmup_steps < 0:
            raise InvalidDimensions("warmup_steps must be >= 0")
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))

    def lr_at(self, step: int) -> float:
        """Learning rate for the 0-based optimizer ``step``."""
        if step < self.warmup_steps:
            return self.learning_rate * (step + 1) / self.warmup_steps
        if self.schedule is Schedule.CONSTANT:
            return self.learning_rate
        span = max(self.steps - self.warmup_steps, 1)
        frac = (step - self.warmup_steps) / span
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class Example:
    global_view: np.ndarray  # (S, S, 3)
    tiles: np.ndarray  # (K, S, S, 3)
    labels: np.ndarray  # (K + 1, N), global first
    y: int
    q: float


@dataclass
class TraceRow:
    step: int
    cls: float
    tfl: float
    qfe: float
    total: float


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    trace: list[TraceRow] = field(default_factory=list)


def build_example(
    sample: Sample,
    partner: np.ndarray | None,
    cfg: ModelConfig,
    policy: AugmentationPolicy,
    sampling: SamplingConfig,
    rng: np.random.Generator,
) -> Example:
    """Augment one sample and cut it into a global view plus random tiles.

    A fake gets an all-ones pixel mask. A real gets the patch-swap mask when
    RPS fired, else zeros; the image label is fake iff any fake pixel remains.
    """
    S, p = cfg.image_size, cfg.patch_size
    img = normalize_small(sample.image, S)
    if partner is not None:
        partner = normalize_small(partner, S)
    aug = apply_policy(img, partner if sample.label == 0 else None, policy, rng)
    out = aug.image
    h, w = out.shape[:2]
    if sample.label == 1:
        mask = np.ones((h, w))
    elif aug.mask is not None:
        mask = aug.mask.astype(np.float64)
    else:
        mask = np.zeros((h, w))
    y = int(sample.label == 1 or mask.any())
    norm = normalize_small(out, S)
    if norm.shape != out.shape:
        mask = resize(mask, norm.shape[0], norm.shape[1], ResizeFilter.BILINEAR)[:, :, 0]
        out = norm
    h, w = out.shape[:2]
    plan = sample_training_tiles(h, w, S, sampling, rng)
    tiles = np.stack(plan.crops(out))
    labels = [region_labels(mask, cfg.grid).ravel()]
    for t, l in plan.origins:
        labels.append(token_labels(mask[t : t + S, l : l + S], p).ravel())
    glob = resize(out, S, S, ResizeFilter.BILINEAR)
    q = aug.qf / 100.0 if aug.qf is not None else 1.0
    return Example(glob, tiles, np.stack(labels), y, q)


def partner_for(corpus: Sequence[Sample], idx: int, rng: np.random.Generator) -> np.ndarray | None:
    s = corpus[idx]
    if s.label != 0:
        return None
    if s.paired is not None:
        return s.paired
    fakes = [c.image for c in corpus if c.label == 1]
    return fakes[int(rng.integers(len(fakes)))] if fakes else None


def collate(examples: Sequence[Example]):
    globals_ = np.stack([e.global_view for e in examples])
    tiles = [e.tiles for e in examples]
    targets = Targets(
        y=np.array([e.y for e in examples]),
        token_labels=[e.labels for e in examples],
        q_true=np.array([e.q for e in examples]),
    )
    return globals_, tiles, targets


def _decays(name: str) -> bool:
    return name.endswith(".W")


class _Stepper:
    def __init__(self, params, cfg: TrainConfig, frozen: Callable[[str], bool]):
        self.cfg = cfg
        self.names = [n for n in params if not frozen(n)]
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        lr = c.lr_at(self.t)
        self.t += 1
        if c.optimizer is Optimizer.SGD:
            for n in self.names:
                g = grads[n] + c.weight_decay * params[n] if _decays(n) else grads[n]
                params[n] -= lr * g
            return
        b1, b2 = c.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for n in self.names:
            g = grads[n]
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            upd = (m / c1) / (np.sqrt(v / c2) + c.eps)
            if _decays(n):
                upd += c.weight_decay * params[n]
            params[n] -= lr * upd


def train(
    corpus: Sequence[Sample],
    params: dict[str, np.ndarray],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    policy: AugmentationPolicy | None = None,
    on_step: Callable[[TraceRow], None] | None = None,
) -> TrainResult:
    """Run ``cfg.steps`` optimizer steps; deterministic given the seeds.

    Batches are drawn without replacement from a fresh permutation each
    epoch. Raises ``NonFiniteLoss`` carrying the failing step index.
    """
    if not corpus:
        raise EmptyCorpus("training corpus is empty")
    policy = policy or AugmentationPolicy(seed=cfg.seed)
    sampling = SamplingConfig(cfg.k_min, cfg.k_max, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in params.items()}
    frozen = is_backbone if model_cfg.backbone_frozen else (lambda name: False)
    opt = _Stepper(params, cfg, frozen)
    result = TrainResult(params)
    order: list[int] = []
    for step in range(cfg.steps):
        batch = []
        while len(batch) < cfg.batch_size:
            if not order:
                order = list(rng.permutation(len(corpus)))
            batch.append(int(order.pop()))
        examples = [build_example(corpus[i], partner_for(corpus, i, rng), model_cfg, policy, sampling, rng) for i in batch]
        globals_, tiles, targets = collate(examples)
        try:
            parts, grads, _ = loss_and_grads(globals_, tiles, targets, params, model_cfg, cfg.loss_weights)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(str(exc), step=step) from None
        if not all(math.isfinite(x) for x in (parts.cls, parts.tfl, parts.qfe)):
            raise NonFiniteLoss(f"non-finite loss component {parts}", step=step)
        row = TraceRow(step, parts.cls, parts.tfl, parts.qfe, parts.total)
        result.trace.append(row)
        if on_step is not None:
            on_step(row)
        opt.step(params, grads)
    return result


def moving_average(values: Sequence[float], window: int = 20) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()]) if len(v) else v
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[window:] - c[:-window]) / window


def trace_csv(trace: Sequence[TraceRow], seed: int | None = None) -> str:
    lines = [f"# seed={seed}"] if seed is not None else []
    lines.append("step,L_cls,L_tfl,L_qfe,L_all")
    lines += [f"{r.step},{r.cls!r},{r.tfl!r},{r.qfe!r},{r.total!r}" for r in trace]
    return "\n".join(lines) + "\n"
