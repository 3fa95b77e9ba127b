import math

import numpy as np
import pytest

from tilescope.errors import NonFiniteLoss
from tilescope.losses import bce_from_logits, cls_from_logits, loss_all, loss_cls, loss_qfe, loss_tfl, mse_from_logit


def test_loss_cls():
    assert loss_cls([0.5, 0.5], 0) == pytest.approx(math.log(2))
    assert loss_cls([0.0, 1.0], 1) == 0.0
    assert loss_cls([0.75, 0.25], 1) == pytest.approx(math.log(4))
    assert loss_cls([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))


def test_loss_tfl():
    assert loss_tfl(np.full(7, 0.5), np.random.default_rng(0).random(7)) == pytest.approx(math.log(2))
    assert loss_tfl([np.array([0.0, 1.0])], [np.array([0.0, 1.0])]) < 1e-11
    assert loss_tfl([0.8], [0.5]) == pytest.approx(-0.5 * (math.log(0.8) + math.log(0.2)))
    with pytest.raises(ValueError):
        loss_tfl([0.5, 0.5], [0.5])


def test_loss_qfe():
    assert loss_qfe(0.3, 0.3) == 0
    assert loss_qfe(0.9, 0.6) == pytest.approx(0.09)
    assert loss_qfe([0.5, 0.0], [0.5, 1.0]) == pytest.approx(0.5)


def test_loss_all():
    assert loss_all((1, 2, 3)) == 6
    assert loss_all((1, 2, 3), (1, 0, 0)) == 1
    assert loss_all((0, 0, 0)) == 0
    with pytest.raises(NonFiniteLoss):
        loss_all((1, float("nan"), 0))


def test_loss_all_order_is_fixed():
    c = (0.1, 0.2, 0.3)
    assert loss_all(c) == (0.1 + 0.2) + 0.3


def test_logit_forms_agree_with_probability_forms(rng):
    z = rng.normal(size=(5, 2))
    y = np.array([0, 1, 1, 0, 1])
    loss, grad = cls_from_logits(z, y)
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    for i in range(5):
        assert loss[i] == pytest.approx(loss_cls(p[i], y[i]))
    assert np.allclose(grad.sum(1), 0)
    t = rng.normal(size=6)
    lab = rng.random(6)
    l, g = bce_from_logits(t, lab)
    s = 1 / (1 + np.exp(-t))
    assert np.allclose(l, -(lab * np.log(s) + (1 - lab) * np.log(1 - s)))
    assert np.allclose(g, s - lab)
    l, g = mse_from_logit(t, lab)
    assert np.allclose(l, (s - lab) ** 2)
    h = 1e-6
    assert np.allclose(g, (mse_from_logit(t + h, lab)[0] - mse_from_logit(t - h, lab)[0]) / (2 * h), atol=1e-8)
