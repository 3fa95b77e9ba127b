"""Classification, token-localization and quality-factor losses.

The probability-space functions (``loss_cls`` etc.) follow the textbook
definitions with clamped logs. Training uses the ``*_from_logits`` forms,
which are numerically stable and return exact gradients with respect to
the pre-activation values.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NonFiniteLoss
from .nn import sigmoid, softplus

LOG_FLOOR = 1e-12


def loss_cls(p, y_true: int) -> float:
    """Cross-entropy ``-log p[y]`` for a two-class probability pair."""
    p = np.asarray(p, dtype=np.float64)
    return float(-np.log(max(p[int(y_true)], LOG_FLOOR)))


def bce(p, y):
    p = np.clip(np.asarray(p, dtype=np.float64), LOG_FLOOR, 1.0 - LOG_FLOOR)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def loss_tfl(token_probs, token_labels) -> float:
    """Mean soft-label BCE over every patch token."""
    p = np.concatenate([np.ravel(a) for a in token_probs]) if isinstance(token_probs, list) else np.ravel(token_probs)
    y = np.concatenate([np.ravel(a) for a in token_labels]) if isinstance(token_labels, list) else np.ravel(token_labels)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} token probabilities vs {y.size} labels")
    return float(bce(p, y).mean())


def loss_qfe(q_pred, q_true) -> float:
    """Squared error; the batch mean when given arrays."""
    d = np.asarray(q_pred, dtype=np.float64) - np.asarray(q_true, dtype=np.float64)
    return float(np.mean(d * d))


def loss_all(components, weights=(1.0, 1.0, 1.0)) -> float:
    cls, tfl, qfe = (float(c) for c in components)
    if not all(math.isfinite(c) for c in (cls, tfl, qfe)):
        raise NonFiniteLoss(f"non-finite loss component in {components}")
    w1, w2, w3 = weights
    # fixed summation order: cls, tfl, qfe
    return ((w1 * cls) + (w2 * tfl)) + (w3 * qfe)


# logit-space forms used by training


def cls_from_logits(logits: np.ndarray, y: np.ndarray):
    """Per-row cross-entropy of 2-class logits and its gradient."""
    lse = np.logaddexp(logits[:, 0], logits[:, 1])
    loss = lse - logits[np.arange(len(y)), y]
    p = np.exp(logits - lse[:, None])
    grad = p.copy()
    grad[np.arange(len(y)), y] -= 1.0
    return loss, grad


def bce_from_logits(z: np.ndarray, y: np.ndarray):
    """Elementwise soft-label BCE of ``sigmoid(z)`` and its gradient."""
    return softplus(z) - y * z, sigmoid(z) - y


def mse_from_logit(u: np.ndarray, q: np.ndarray):
    """``(sigmoid(u) - q)^2`` and its gradient with respect to ``u``."""
    s = sigmoid(u)
    d = s - q
    return d * d, 2.0 * d * s * (1.0 - s)
