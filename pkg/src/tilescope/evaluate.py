"""Held-out metrics and perturbation sweeps."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .augment import gaussian_blur, jpeg_degrade, random_patch_swap, random_scale, region_labels, token_labels
from .corpus import Sample
from .errors import EmptyCorpus, InvalidDimensions
from .image import ResizeFilter, resize
from .model import ModelConfig, forward_batch
from .tiling import SamplingConfig, TilePlan, center_plan, full_coverage_plan, normalize_small, sample_training_tiles

THRESHOLD = 0.5


class TilingMode(enum.Enum):
    FULL = "full"
    CENTER1 = "center1"
    RANDOMK = "randomk"


class Perturbation(enum.Enum):
    JPEG = "jpeg"
    BLUR = "blur"
    SCALE = "scale"


@dataclass
class Prediction:
    p: float
    q_pred: float
    tokens_global: np.ndarray  # (N,)
    tokens_tiles: np.ndarray  # (K, N)
    plan: TilePlan
    shape: tuple[int, int]


@dataclass
class Metrics:
    mode: str
    n: int
    accuracy: float
    accuracy_real: float | None
    accuracy_fake: float | None
    token_auc: float | None
    qfe_mae: float | None

    def to_json(self, seed: int | None = None) -> str:
        return json.dumps({"seed": seed, **asdict(self)}, indent=2, sort_keys=True) + "\n"

    def to_csv(self, seed: int | None = None) -> str:
        row = asdict(self)
        head = ",".join(row)
        vals = ",".join("" if v is None else str(v) for v in row.values())
        return f"# seed={seed}\n{head}\n{vals}\n"


def plan_for(h: int, w: int, tile: int, mode: TilingMode, rng: np.random.Generator) -> TilePlan:
    if mode is TilingMode.FULL:
        return full_coverage_plan(h, w, tile)
    if mode is TilingMode.CENTER1:
        return center_plan(h, w, tile)
    return sample_training_tiles(h, w, tile, SamplingConfig(1, 16), rng)


def predict(
    images: Sequence[np.ndarray],
    params,
    cfg: ModelConfig,
    mode: TilingMode | str = TilingMode.FULL,
    seed: int = 0,
    chunk: int = 16,
) -> list[Prediction]:
    """Normalize, tile and score each image; images are batched ``chunk`` at a time."""
    mode = TilingMode(mode)
    rng = np.random.default_rng(seed)
    S = cfg.image_size
    prepared = []
    for img in images:
        img = normalize_small(img, S)
        plan = plan_for(img.shape[0], img.shape[1], S, mode, rng)
        prepared.append((resize(img, S, S, ResizeFilter.BILINEAR), np.stack(plan.crops(img)), plan, img.shape[:2]))
    preds = []
    for start in range(0, len(prepared), chunk):
        part = prepared[start : start + chunk]
        out = forward_batch(np.stack([x[0] for x in part]), [x[1] for x in part], params, cfg)
        for b, (_, _, plan, shape) in enumerate(part):
            g, t = out.token_probs(b)
            preds.append(Prediction(float(out.p[b]), float(out.q_pred[b]), g, t, plan, shape))
    return preds


def classification_scores(preds: Sequence[Prediction], labels: Sequence[int]):
    labels = np.asarray(labels)
    hit = (np.array([p.p for p in preds]) > THRESHOLD).astype(int) == labels

    def part(sel):
        return float(hit[sel].mean()) if sel.any() else None

    return float(hit.mean()), part(labels == 0), part(labels == 1)


def auc(scores, labels) -> float | None:
    """Area under the ROC curve via the rank-sum statistic; ``None`` if single-class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def rps_composites(corpus: Sequence[Sample], seed: int, ratio_range=(0.2, 0.98), grid: int = 14):
    """Patch-swapped composites of every real that carries a paired fake."""
    rng = np.random.default_rng(seed)
    out = []
    for s in corpus:
        if s.label != 0 or s.paired is None:
            continue
        ratio = float(rng.uniform(*ratio_range))
        comp, mask = random_patch_swap(s.image, s.paired, ratio, grid, rng)
        out.append((comp, mask))
    return out


def prediction_token_labels(pred: Prediction, mask: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Soft labels aligned with ``[tokens_global, tokens_tiles...]``."""
    mask = mask.astype(np.float64)
    if mask.shape != pred.shape:
        mask = resize(mask, pred.shape[0], pred.shape[1], ResizeFilter.BILINEAR)[:, :, 0]
    S = cfg.image_size
    rows = [region_labels(mask, cfg.grid).ravel()]
    for t, l in pred.plan.origins:
        rows.append(token_labels(mask[t : t + S, l : l + S], cfg.patch_size).ravel())
    return np.concatenate(rows)


def token_auc(composites, params, cfg: ModelConfig, mode: TilingMode, seed: int = 0) -> float | None:
    """Token AUC; a token is positive when at least half its pixels are fake."""
    if not composites:
        return None
    preds = predict([c for c, _ in composites], params, cfg, mode, seed)
    scores, labels = [], []
    for pred, (_, mask) in zip(preds, composites):
        scores.append(np.concatenate([pred.tokens_global, pred.tokens_tiles.ravel()]))
        labels.append(prediction_token_labels(pred, mask, cfg) >= 0.5)
    return auc(np.concatenate(scores), np.concatenate(labels))


def qfe_set(images: Sequence[np.ndarray], seed: int, fraction: float = 0.5, qf_range=(60, 100)):
    """Compress a ``fraction`` of images at a uniform random QF; the rest count as QF 100."""
    rng = np.random.default_rng(seed)
    out = []
    for img in images:
        if rng.random() < fraction:
            qf = int(rng.integers(qf_range[0], qf_range[1] + 1))
            out.append((jpeg_degrade(img, qf), qf))
        else:
            out.append((img, 100))
    return out


def qfe_mae(items, params, cfg: ModelConfig, mode: TilingMode, seed: int = 0) -> float | None:
    if not items:
        return None
    preds = predict([img for img, _ in items], params, cfg, mode, seed)
    return float(np.mean([abs(100.0 * p.q_pred - qf) for p, (_, qf) in zip(preds, items)]))


def evaluate(
    corpus: Sequence[Sample],
    params,
    cfg: ModelConfig,
    mode: TilingMode | str = TilingMode.FULL,
    seed: int = 0,
    localization: bool = True,
    quality: bool = True,
) -> Metrics:
    """Accuracy at threshold 0.5, per-class accuracy, token AUC, QF MAE."""
    if not corpus:
        raise EmptyCorpus("evaluation corpus is empty")
    mode = TilingMode(mode)
    preds = predict([s.image for s in corpus], params, cfg, mode, seed)
    acc, acc_real, acc_fake = classification_scores(preds, [s.label for s in corpus])
    t_auc = token_auc(rps_composites(corpus, seed), params, cfg, mode, seed) if localization else None
    mae = qfe_mae(qfe_set([s.image for s in corpus], seed), params, cfg, mode, seed) if quality else None
    return Metrics(mode.value, len(corpus), acc, acc_real, acc_fake, t_auc, mae)


def perturb(img: np.ndarray, kind: Perturbation, level: float) -> np.ndarray:
    if kind is Perturbation.JPEG:
        return jpeg_degrade(img, int(round(level)))
    if kind is Perturbation.BLUR:
        return img.copy() if level <= 0 else gaussian_blur(img, level)
    if level <= 0:
        raise InvalidDimensions(f"scale level must be positive, got {level}")
    return img.copy() if level == 1 else random_scale(img, level)


def accuracy(corpus: Sequence[Sample], params, cfg: ModelConfig, mode=TilingMode.FULL, seed: int = 0) -> float:
    if not corpus:
        raise EmptyCorpus("evaluation corpus is empty")
    preds = predict([s.image for s in corpus], params, cfg, mode, seed)
    return classification_scores(preds, [s.label for s in corpus])[0]


def perturb_corpus(corpus: Sequence[Sample], kind: Perturbation | str, level: float) -> list[Sample]:
    kind = Perturbation(kind)
    return [Sample(perturb(s.image, kind, level), s.label, s.paired) for s in corpus]


def robustness_sweep(
    corpus: Sequence[Sample],
    params,
    cfg: ModelConfig,
    perturbation: Perturbation | str,
    levels: Sequence[float],
    mode: TilingMode | str = TilingMode.FULL,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Accuracy after perturbing the whole corpus at each level."""
    kind = Perturbation(perturbation)
    return [(float(lv), accuracy(perturb_corpus(corpus, kind, lv), params, cfg, mode, seed)) for lv in levels]


def curve_csv(curve, perturbation: str, seed: int | None = None) -> str:
    lines = [f"# seed={seed} perturbation={perturbation}", "level,accuracy"]
    lines += [f"{lv!r},{acc!r}" for lv, acc in curve]
    return "\n".join(lines) + "\n"


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else x
