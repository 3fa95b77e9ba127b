"""Dual-path tiny-ViT detector.

A global (resized) view and ``K`` native-resolution tiles go through one
shared ViT backbone and a trainable refiner. Tile CLS tokens are fused by
a position-free transformer with a learnable output token; the result is
concatenated with the global CLS token and classified. Two auxiliary heads
score every patch token (forgery localization) and regress the JPEG
quality factor from the fused tile feature.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .errors import EmptySequence, NonFiniteLoss, ShapeMismatch
from .losses import bce_from_logits, cls_from_logits, mse_from_logit


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    backbone_depth: int = 2
    refiner_depth: int = 1
    aggregator_depth: int = 1
    heads: int = 4
    mlp_ratio: int = 2
    head_hidden: int = 64
    backbone_frozen: bool = False
    init_seed: int = 0
    pixel_norm: bool = True

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ShapeMismatch("image_size must be divisible by patch_size")
        if self.embed_dim % self.heads:
            raise ShapeMismatch("embed_dim must be divisible by heads")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @classmethod
    def full_size(cls, **kw) -> "ModelConfig":
        """224-pixel tiles with 16-pixel patches (not exercised by the tests)."""
        base = dict(image_size=224, patch_size=16, embed_dim=192, heads=3)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


BACKBONE_PREFIXES = ("backbone.",)
# per-channel input standardization used by CLIP-family encoders
PIXEL_MEAN = np.array([0.48145466, 0.4578275, 0.40821073])
PIXEL_STD = np.array([0.26862954, 0.26130258, 0.27577711])


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D = cfg.embed_dim
    hid = cfg.mlp_ratio * D
    shapes: dict[str, tuple[int, ...]] = {
        "backbone.patch.W": (cfg.patch_dim, D),
        "backbone.patch.b": (D,),
        "backbone.cls": (D,),
        "backbone.pos": (cfg.num_patches + 1, D),
    }
    for i in range(cfg.backbone_depth):
        shapes.update(nn.block_param_shapes(f"backbone.blocks.{i}", D, hid))
    for i in range(cfg.refiner_depth):
        shapes.update(nn.block_param_shapes(f"refiner.blocks.{i}", D, hid))
    shapes["refiner.norm.g"] = (D,)
    shapes["refiner.norm.b"] = (D,)
    shapes["agg.t_out"] = (D,)
    for i in range(cfg.aggregator_depth):
        shapes.update(nn.block_param_shapes(f"agg.blocks.{i}", D, hid))
    shapes["agg.norm.g"] = (D,)
    shapes["agg.norm.b"] = (D,)
    shapes["head.cls.fc1.W"] = (2 * D, cfg.head_hidden)
    shapes["head.cls.fc1.b"] = (cfg.head_hidden,)
    shapes["head.cls.fc2.W"] = (cfg.head_hidden, 2)
    shapes["head.cls.fc2.b"] = (2,)
    shapes["head.tfl.W"] = (D, 1)
    shapes["head.tfl.b"] = (1,)
    shapes["head.qfe.fc1.W"] = (D, cfg.head_hidden)
    shapes["head.qfe.fc1.b"] = (cfg.head_hidden,)
    shapes["head.qfe.fc2.W"] = (cfg.head_hidden, 1)
    shapes["head.qfe.fc2.b"] = (1,)
    return shapes


def is_backbone(name: str) -> bool:
    return name.startswith(BACKBONE_PREFIXES)


def _trunc_normal(rng, shape, std=0.02):
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(cfg: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Truncated-normal(0.02) weights, zero biases and output token, unit norm gains."""
    rng = np.random.default_rng(cfg.init_seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif leaf == "b" or name == "agg.t_out":
            params[name] = np.zeros(shape)
        else:
            params[name] = _trunc_normal(rng, shape)
    return params


def patchify(imgs: np.ndarray, p: int) -> np.ndarray:
    """(B, S, S, 3) -> (B, N, p*p*3), patches row-major, pixels (row, col, channel)."""
    B, S, _, C = imgs.shape
    g = S // p
    return imgs.reshape(B, g, p, g, p, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, g * g, p * p * C)


# ---- forward ---------------------------------------------------------------


def _encode(imgs, P, cfg):
    """Backbone + refiner over a stack of images; returns tokens (B, N+1, D)."""
    if imgs.ndim != 4 or imgs.shape[1:] != (cfg.image_size, cfg.image_size, 3):
        raise ShapeMismatch(f"expected (*, {cfg.image_size}, {cfg.image_size}, 3), got {imgs.shape}")
    B = imgs.shape[0]
    if cfg.pixel_norm:
        imgs = (imgs - PIXEL_MEAN) / PIXEL_STD
    patches = patchify(imgs, cfg.patch_size)
    x, c_pe = nn.linear_fwd(patches, P["backbone.patch.W"], P["backbone.patch.b"])
    cls = np.broadcast_to(P["backbone.cls"], (B, 1, cfg.embed_dim))
    x = np.concatenate([cls, x], axis=1) + P["backbone.pos"]
    x, c_bb = nn.stack_fwd(x, P, "backbone.blocks", cfg.backbone_depth, cfg.heads)
    x, c_rf = nn.stack_fwd(x, P, "refiner.blocks", cfg.refiner_depth, cfg.heads)
    t, c_n = nn.layernorm_fwd(x, P["refiner.norm.g"], P["refiner.norm.b"])
    return t, (c_pe, c_bb, c_rf, c_n)


def _encode_bwd(dt, cache, P, cfg, grads):
    c_pe, c_bb, c_rf, c_n = cache
    dx = nn.layernorm_bwd(dt, c_n, P["refiner.norm.g"], grads, "refiner.norm")
    dx = nn.stack_bwd(dx, c_rf, P, grads, "refiner.blocks")
    if cfg.backbone_frozen:
        return
    dx = nn.stack_bwd(dx, c_bb, P, grads, "backbone.blocks")
    nn._acc(grads, "backbone.pos", dx.sum(axis=0))
    nn._acc(grads, "backbone.cls", dx[:, 0].sum(axis=0))
    nn.linear_bwd(dx[:, 1:], c_pe, P["backbone.patch.W"], grads, "backbone.patch")


def _aggregate(cls_lists, P, cfg):
    """Fuse per-sample lists of tile CLS tokens; returns f_detail (B, D)."""
    B = len(cls_lists)
    if B == 0 or any(len(c) == 0 for c in cls_lists):
        raise EmptySequence("every sample needs at least one tile token")
    kmax = max(len(c) for c in cls_lists)
    D = cfg.embed_dim
    seq = np.zeros((B, kmax + 1, D))
    mask = np.zeros((B, kmax + 1), dtype=bool)
    seq[:, 0] = P["agg.t_out"]
    mask[:, 0] = True
    for b, toks in enumerate(cls_lists):
        toks = np.asarray(toks)
        if toks.shape[-1] != D:
            raise ShapeMismatch(f"tile token dimension {toks.shape[-1]} != {D}")
        seq[b, 1 : 1 + len(toks)] = toks
        mask[b, 1 : 1 + len(toks)] = True
    # padded slots are masked as keys, so they never influence valid rows
    out, c_st = nn.stack_fwd(seq, P, "agg.blocks", cfg.aggregator_depth, cfg.heads, mask)
    f, c_n = nn.layernorm_fwd(out[:, 0], P["agg.norm.g"], P["agg.norm.b"])
    return f, (c_st, c_n, seq.shape, [len(c) for c in cls_lists])


def _aggregate_bwd(df, cache, P, grads):
    c_st, c_n, shape, counts = cache
    dout = np.zeros(shape)
    dout[:, 0] = nn.layernorm_bwd(df, c_n, P["agg.norm.g"], grads, "agg.norm")
    dseq = nn.stack_bwd(dout, c_st, P, grads, "agg.blocks")
    nn._acc(grads, "agg.t_out", dseq[:, 0].sum(axis=0))
    return [dseq[b, 1 : 1 + k] for b, k in enumerate(counts)]


def _classify_logits(f_global, f_detail, P):
    f_final = np.concatenate([f_global, f_detail], axis=-1)
    logits, cache = nn.mlp_fwd(f_final, P, "head.cls")
    return logits, cache


def _softmax2(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class BatchOutput:
    p: np.ndarray  # (B,) probability of "fake"
    probs: np.ndarray  # (B, 2) softmax
    logits: np.ndarray
    q_pred: np.ndarray  # (B,) predicted QF / 100
    q_logit: np.ndarray  # (B,) pre-sigmoid QF regression
    f_global: np.ndarray
    f_detail: np.ndarray
    token_logits: np.ndarray  # (M, N), globals first then tiles in sample order
    tile_index: list[np.ndarray] = field(default_factory=list)  # rows of token_logits per sample's tiles
    cache: tuple | None = None

    def token_probs(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        """(global (N,), tiles (K, N)) token probabilities for sample ``b``."""
        return nn.sigmoid(self.token_logits[b]), nn.sigmoid(self.token_logits[self.tile_index[b]])


def forward_batch(
    globals_: np.ndarray,
    tiles: Sequence[np.ndarray],
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    keep_cache: bool = False,
) -> BatchOutput:
    """Run a batch: ``globals_`` (B, S, S, 3); ``tiles[b]`` (K_b, S, S, 3)."""
    globals_ = np.asarray(globals_, dtype=np.float64)
    B = len(globals_)
    if len(tiles) != B:
        raise ShapeMismatch(f"{B} global views but {len(tiles)} tile stacks")
    tiles = [np.asarray(t, dtype=np.float64).reshape(-1, cfg.image_size, cfg.image_size, 3) for t in tiles]
    counts = [len(t) for t in tiles]
    if min(counts, default=0) < 1:
        raise EmptySequence("every sample needs at least one tile")
    imgs = np.concatenate([globals_] + tiles, axis=0)
    starts = B + np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)
    tile_index = [np.arange(s, s + k) for s, k in zip(starts, counts)]

    T, c_enc = _encode(imgs, params, cfg)
    f_global = T[:B, 0]
    f_detail, c_agg = _aggregate([T[idx, 0] for idx in tile_index], params, cfg)
    logits, c_cls = _classify_logits(f_global, f_detail, params)
    z_tok, c_tfl = nn.linear_fwd(T[:, 1:], params["head.tfl.W"], params["head.tfl.b"])
    u, c_qfe = nn.mlp_fwd(f_detail, params, "head.qfe")
    probs = _softmax2(logits)
    cache = (T, c_enc, c_agg, c_cls, c_tfl, c_qfe, tile_index) if keep_cache else None
    return BatchOutput(
        p=probs[:, 1],
        probs=probs,
        logits=logits,
        q_pred=nn.sigmoid(u[:, 0]),
        q_logit=u[:, 0],
        f_global=f_global,
        f_detail=f_detail,
        token_logits=z_tok[..., 0],
        tile_index=tile_index,
        cache=cache,
    )


def backward_batch(out: BatchOutput, d_logits, d_token_logits, d_u, params, cfg) -> dict[str, np.ndarray]:
    """Backpropagate gradients on (class logits, token logits, QF pre-sigmoid)."""
    T, c_enc, c_agg, c_cls, c_tfl, c_qfe, tile_index = out.cache
    grads: dict[str, np.ndarray] = {}
    B = len(d_logits)
    D = cfg.embed_dim
    df_detail = nn.mlp_bwd(np.asarray(d_u).reshape(B, 1), c_qfe, params, grads, "head.qfe")
    df_final = nn.mlp_bwd(d_logits, c_cls, params, grads, "head.cls")
    df_global, df_detail = df_final[:, :D], df_detail + df_final[:, D:]
    dT = np.zeros_like(T)
    dT[:, 1:] = nn.linear_bwd(d_token_logits[..., None], c_tfl, params["head.tfl.W"], grads, "head.tfl")
    dT[:B, 0] += df_global
    for idx, dcls in zip(tile_index, _aggregate_bwd(df_detail, c_agg, params, grads)):
        dT[idx, 0] += dcls
    _encode_bwd(dT, c_enc, params, cfg, grads)
    for name, value in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(value)
    return grads


# ---- single-input API ------------------------------------------------------


def vit_forward(img: np.ndarray, params, cfg: ModelConfig) -> np.ndarray:
    """Refined token sequence (N+1, D) of one image; index 0 is CLS."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (cfg.image_size, cfg.image_size, 3):
        raise ShapeMismatch(f"expected ({cfg.image_size}, {cfg.image_size}, 3), got {img.shape}")
    return _encode(img[None], params, cfg)[0][0]


def local_aggregate(cls_tokens, params, cfg: ModelConfig) -> np.ndarray:
    toks = np.asarray(cls_tokens, dtype=np.float64).reshape(-1, cfg.embed_dim)
    return _aggregate([toks], params, cfg)[0][0]


def classify(f_global, f_detail, params) -> float:
    f_global = np.asarray(f_global, dtype=np.float64)
    f_detail = np.asarray(f_detail, dtype=np.float64)
    if f_global.shape != f_detail.shape or f_global.shape[-1] * 2 != params["head.cls.fc1.W"].shape[0]:
        raise ShapeMismatch("feature sizes do not match the classifier")
    logits, _ = _classify_logits(f_global[None], f_detail[None], params)
    return float(_softmax2(logits)[0, 1])


def tfl_head(tokens: np.ndarray, params) -> np.ndarray:
    """Forgery probability of every non-CLS token."""
    z, _ = nn.linear_fwd(np.asarray(tokens)[1:], params["head.tfl.W"], params["head.tfl.b"])
    return nn.sigmoid(z[:, 0])


def qfe_head(f_detail, params) -> float:
    u, _ = nn.mlp_fwd(np.asarray(f_detail, dtype=np.float64)[None], params, "head.qfe")
    return float(nn.sigmoid(u[0, 0]))


@dataclass
class FullOutput:
    p: float
    token_probs_global: np.ndarray
    token_probs_tiles: np.ndarray
    q_pred: float
    f_detail: np.ndarray
    f_global: np.ndarray

    @property
    def f_final(self) -> np.ndarray:
        return np.concatenate([self.f_global, self.f_detail])


def forward_full(global_img, tiles, params, cfg: ModelConfig) -> FullOutput:
    out = forward_batch(np.asarray(global_img)[None], [np.asarray(tiles)], params, cfg)
    g, t = out.token_probs(0)
    return FullOutput(float(out.p[0]), g, t, float(out.q_pred[0]), out.f_detail[0], out.f_global[0])


# ---- loss + gradient -------------------------------------------------------


@dataclass
class Targets:
    """Supervision for one batch.

    ``token_labels[b]`` is (K_b + 1, N): the global view first, then tiles.
    ``q_true`` is the quality factor divided by 100.
    """

    y: np.ndarray
    token_labels: list[np.ndarray]
    q_true: np.ndarray


@dataclass
class LossBreakdown:
    cls: float
    tfl: float
    qfe: float
    total: float


def loss_and_grads(
    globals_,
    tiles,
    targets: Targets,
    params,
    cfg: ModelConfig,
    weights=(1.0, 1.0, 1.0),
    need_grads: bool = True,
):
    """Batch-mean joint loss and (optionally) its exact gradient.

    Per sample: cross-entropy + mean token BCE over all of its patch tokens
    (global and tiles) + squared QF error; the batch loss averages samples.
    """
    out = forward_batch(globals_, tiles, params, cfg, keep_cache=need_grads)
    B = len(out.p)
    y = np.asarray(targets.y, dtype=int)
    l_cls, g_logits = cls_from_logits(out.logits, y)
    lab = np.zeros_like(out.token_logits)
    scale = np.zeros(len(lab))
    l_tfl = np.zeros(B)
    for b in range(B):
        rows = np.concatenate([[b], out.tile_index[b]])
        lab[rows] = targets.token_labels[b]
        scale[rows] = 1.0 / lab[rows].size
    l_tok, g_tok = bce_from_logits(out.token_logits, lab)
    for b in range(B):
        rows = np.concatenate([[b], out.tile_index[b]])
        l_tfl[b] = l_tok[rows].mean()
    l_qfe, g_u = mse_from_logit(out.q_logit, np.asarray(targets.q_true, dtype=np.float64))
    w1, w2, w3 = weights
    parts = LossBreakdown(
        cls=float(l_cls.mean()),
        tfl=float(l_tfl.mean()),
        qfe=float(l_qfe.mean()),
        total=float(((w1 * l_cls + w2 * l_tfl) + w3 * l_qfe).mean()),
    )
    if not np.isfinite(parts.total):
        raise NonFiniteLoss(f"non-finite loss {parts}")
    if not need_grads:
        return parts, None, out
    grads = backward_batch(
        out,
        w1 * g_logits / B,
        w2 * g_tok * scale[:, None] / B,
        w3 * g_u / B,
        params,
        cfg,
    )
    return parts, grads, out


def backward_full(globals_, tiles, targets: Targets, params, cfg: ModelConfig, weights=(1.0, 1.0, 1.0)):
    """Gradient of the joint loss for every parameter (zeros for a frozen backbone)."""
    return loss_and_grads(globals_, tiles, targets, params, cfg, weights)[1]
