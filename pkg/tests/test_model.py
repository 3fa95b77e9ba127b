import math

import numpy as np
import pytest

from tilescope import nn
from tilescope.errors import EmptySequence, ShapeMismatch
from tilescope.model import (
    ModelConfig,
    Targets,
    classify,
    forward_batch,
    forward_full,
    init_params,
    is_backbone,
    local_aggregate,
    loss_and_grads,
    backward_full,
    param_shapes,
    qfe_head,
    tfl_head,
    vit_forward,
)

import model_oracle
from gradcheck import TINY, check, random_problem


@pytest.fixture
def tiny_params():
    rng = np.random.default_rng(7)
    return {k: rng.normal(0, 0.3, v.shape) for k, v in init_params(TINY, 0).items()}


def test_config_validation():
    with pytest.raises(ShapeMismatch):
        ModelConfig(image_size=60, patch_size=8)
    with pytest.raises(ShapeMismatch):
        ModelConfig(embed_dim=30, heads=4)
    cfg = ModelConfig()
    assert cfg.num_patches == 64 and cfg.patch_dim == 192
    big = ModelConfig.full_size()
    assert (big.image_size, big.patch_size, big.grid) == (224, 16, 14)


def test_init_conventions():
    p = init_params(ModelConfig(), 3)
    assert set(p) == set(param_shapes(ModelConfig()))
    assert np.all(p["agg.t_out"] == 0) and np.all(p["backbone.patch.b"] == 0)
    assert np.all(p["refiner.norm.g"] == 1)
    w = p["backbone.blocks.0.attn.qkv.W"]
    assert np.abs(w).max() <= 0.04 and abs(w.std() - 0.02) < 0.003
    q = init_params(ModelConfig(), 3)
    assert all(np.array_equal(p[k], q[k]) for k in p)


def test_vit_zero_weights_is_residual_identity():
    cfg = TINY
    P = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    for k in P:
        if k.endswith(".g"):
            P[k][:] = 1.0
    c = np.arange(cfg.embed_dim, dtype=float)
    P["backbone.cls"] = c
    tokens = vit_forward(np.zeros((16, 16, 3)), P, cfg)
    assert tokens.shape == (cfg.num_patches + 1, cfg.embed_dim)
    expect = (c - c.mean()) / math.sqrt(c.var() + nn.LN_EPS)
    assert np.allclose(tokens[0], expect, atol=1e-12)
    assert np.allclose(tokens[1:], 0, atol=1e-12)


def test_vit_deterministic(tiny_params, rng):
    img = rng.random((16, 16, 3))
    assert np.array_equal(vit_forward(img, tiny_params, TINY), vit_forward(img.copy(), tiny_params, TINY))
    with pytest.raises(ShapeMismatch):
        vit_forward(np.zeros((8, 8, 3)), tiny_params, TINY)


def test_vit_matches_oracle(tiny_params, rng):
    img = rng.random((16, 16, 3))
    assert np.max(np.abs(vit_forward(img, tiny_params, TINY) - model_oracle.vit(img, tiny_params, TINY))) < 1e-6


def test_aggregate_matches_oracle(tiny_params, rng):
    toks = rng.normal(size=(3, TINY.embed_dim))
    assert np.max(np.abs(local_aggregate(toks, tiny_params, TINY) - model_oracle.aggregate(toks, tiny_params, TINY))) < 1e-6


def test_aggregate_zero_weights(rng):
    P = {k: np.zeros_like(v) for k, v in init_params(TINY).items()}
    for k in P:
        if k.endswith(".g"):
            P[k][:] = 1.0
    P["agg.t_out"] = rng.normal(size=TINY.embed_dim)
    a = local_aggregate(rng.normal(size=(1, TINY.embed_dim)), P, TINY)
    b = local_aggregate(rng.normal(size=(1, TINY.embed_dim)), P, TINY)
    t = P["agg.t_out"]
    assert np.allclose(a, (t - t.mean()) / math.sqrt(t.var() + nn.LN_EPS))
    assert np.array_equal(a, b)
    with pytest.raises(EmptySequence):
        local_aggregate(np.zeros((0, TINY.embed_dim)), P, TINY)


def test_aggregate_permutation(tiny_params, rng):
    toks = rng.normal(size=(6, TINY.embed_dim))
    base = local_aggregate(toks, tiny_params, TINY)
    for _ in range(5):
        assert np.max(np.abs(local_aggregate(toks[rng.permutation(6)], tiny_params, TINY) - base)) <= 1e-9


def test_classify_examples(tiny_params, rng):
    P = dict(tiny_params)
    for k in ("head.cls.fc1.W", "head.cls.fc1.b", "head.cls.fc2.W", "head.cls.fc2.b"):
        P[k] = np.zeros_like(P[k])
    assert classify(rng.normal(size=8), rng.normal(size=8), P) == 0.5
    P["head.cls.fc2.b"] = np.array([3.0, 3.0])
    assert classify(rng.normal(size=8), rng.normal(size=8), P) == 0.5
    with pytest.raises(ShapeMismatch):
        classify(np.zeros(8), np.zeros(4), P)


def test_classify_hand_mlp():
    # 1-dim features, hidden width 2
    P = {
        "head.cls.fc1.W": np.array([[1.0, -1.0], [0.5, 2.0]]),
        "head.cls.fc1.b": np.array([0.1, 0.0]),
        "head.cls.fc2.W": np.array([[1.0, 0.0], [0.0, 1.0]]),
        "head.cls.fc2.b": np.array([0.0, 0.2]),
    }
    fg, fd = 0.4, -0.6
    h1 = 0.4 * 1.0 + -0.6 * 0.5 + 0.1
    h2 = 0.4 * -1.0 + -0.6 * 2.0
    a1, a2 = h1 / (1 + math.exp(-1.702 * h1)), h2 / (1 + math.exp(-1.702 * h2))
    z0, z1 = a1, a2 + 0.2
    expect = math.exp(z1) / (math.exp(z0) + math.exp(z1))
    assert classify(np.array([fg]), np.array([fd]), P) == pytest.approx(expect, abs=1e-9)


def test_tfl_head(tiny_params, rng):
    P = dict(tiny_params)
    toks = rng.normal(size=(5, 8))
    P["head.tfl.W"] = np.zeros((8, 1))
    P["head.tfl.b"] = np.zeros(1)
    assert np.all(tfl_head(toks, P) == 0.5)
    w = rng.normal(size=8)
    P["head.tfl.W"], P["head.tfl.b"] = w[:, None], np.array([0.3])
    got = tfl_head(toks, P)
    for i in range(4):
        assert got[i] == pytest.approx(1 / (1 + math.exp(-(toks[i + 1] @ w + 0.3))))


def test_qfe_head(tiny_params, rng):
    P = {k: np.zeros_like(v) for k, v in tiny_params.items()}
    assert qfe_head(rng.normal(size=8), P) == 0.5
    P["head.qfe.fc1.W"][0, 0] = 2.0
    P["head.qfe.fc2.W"][0, 0] = 1.5
    f = np.zeros(8)
    f[0] = 0.7
    h = 1.4 / (1 + math.exp(-1.702 * 1.4))
    assert qfe_head(f, P) == pytest.approx(1 / (1 + math.exp(-1.5 * h)))
    assert qfe_head(f, P) == qfe_head(f.copy(), P)


def test_forward_full_matches_oracle(tiny_params, rng):
    g = rng.random((16, 16, 3))
    tiles = rng.random((2, 16, 16, 3))
    out = forward_full(g, tiles, tiny_params, TINY)
    p, tg, tt, q, fd, fg = model_oracle.full(g, tiles, tiny_params, TINY)
    assert abs(out.p - p) < 1e-6 and abs(out.q_pred - q) < 1e-6
    assert np.max(np.abs(out.token_probs_global - tg)) < 1e-6
    assert np.max(np.abs(out.token_probs_tiles - tt)) < 1e-6
    assert np.max(np.abs(out.f_detail - fd)) < 1e-6
    assert np.array_equal(out.f_final, np.concatenate([out.f_global, out.f_detail]))


def test_global_equals_tile_consistency(tiny_params, rng):
    img = rng.random((16, 16, 3))
    out = forward_full(img, img[None], tiny_params, TINY)
    assert np.array_equal(out.token_probs_global, out.token_probs_tiles[0])
    assert np.array_equal(out.f_global, vit_forward(img, tiny_params, TINY)[0])


def test_forward_permutation(tiny_params, rng):
    g = rng.random((16, 16, 3))
    tiles = rng.random((5, 16, 16, 3))
    base = forward_full(g, tiles, tiny_params, TINY)
    perm = rng.permutation(5)
    out = forward_full(g, tiles[perm], tiny_params, TINY)
    assert abs(out.p - base.p) <= 1e-9 and abs(out.q_pred - base.q_pred) <= 1e-9
    assert np.allclose(out.token_probs_tiles, base.token_probs_tiles[perm], atol=1e-12)


def test_batch_matches_single(tiny_params, rng):
    gs = rng.random((3, 16, 16, 3))
    tiles = [rng.random((k, 16, 16, 3)) for k in (2, 1, 4)]
    out = forward_batch(gs, tiles, tiny_params, TINY)
    for b in range(3):
        single = forward_full(gs[b], tiles[b], tiny_params, TINY)
        assert abs(single.p - out.p[b]) < 1e-12
        assert np.allclose(single.token_probs_tiles, out.token_probs(b)[1], atol=1e-12)
    with pytest.raises(ShapeMismatch):
        forward_batch(gs, tiles[:2], tiny_params, TINY)


def test_outputs_finite_with_bounded_params(rng):
    P = {k: rng.uniform(-10, 10, v.shape) for k, v in init_params(TINY).items()}
    out = forward_full(rng.random((16, 16, 3)), rng.random((3, 16, 16, 3)), P, TINY)
    assert np.isfinite(out.p) and np.isfinite(out.q_pred)
    assert np.all(np.isfinite(out.token_probs_tiles)) and np.all(np.isfinite(out.f_detail))


def test_frozen_backbone_zero_gradient():
    params, batch, _ = random_problem(1)
    cfg = ModelConfig(**{**TINY.to_dict(), "backbone_frozen": True})
    grads = backward_full(*batch, params, cfg)
    assert all(np.all(grads[k] == 0) for k in grads if is_backbone(k))
    assert any(np.any(grads[k] != 0) for k in grads if k.startswith("refiner."))


def test_cls_gradient_vanishes_at_fixed_point(tiny_params, rng):
    # a huge class-1 bias makes p = 1 to machine precision; a fake target then has no logit gradient
    P = dict(tiny_params)
    P["head.cls.fc2.b"] = np.array([-40.0, 40.0])
    gs = rng.random((1, 16, 16, 3))
    t = Targets(np.array([1]), [np.zeros((2, TINY.num_patches))], np.array([0.5]))
    parts, grads, _ = loss_and_grads(gs, [gs], t, P, TINY, weights=(1, 0, 0))
    assert parts.cls < 1e-30
    assert np.all(np.abs(grads["head.cls.fc2.b"]) < 1e-30)


@pytest.mark.parametrize("weights", [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 1)])
def test_gradients_finite_difference(weights):
    params, batch, cfg = random_problem(2)
    rows = check(params, batch, cfg, weights, per_tensor=2, seed=sum(weights))
    bad = [r for r in rows if r[4] >= 1e-4]
    assert not bad, bad[:5]
