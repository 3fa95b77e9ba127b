"""Step-by-step re-implementation of the detector forward pass.

Token by token and head by head, with no batching, padding or caches, so it
shares no code path with ``tilescope.model`` beyond the parameter names.
"""

import math

import numpy as np

EPS = 1e-5
MEAN = [0.48145466, 0.4578275, 0.40821073]
STD = [0.26862954, 0.26130258, 0.27577711]


def layer_norm(v, g, b):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return np.array([(x - mu) / math.sqrt(var + EPS) * gi + bi for x, gi, bi in zip(v, g, b)])


def gelu(x):
    return x / (1.0 + math.exp(-1.702 * x))


def dense(v, W, b):
    return np.array([sum(v[i] * W[i, j] for i in range(len(v))) + b[j] for j in range(W.shape[1])])


def block(seq, P, pre, heads):
    D = len(seq[0])
    d = D // heads
    normed = [layer_norm(t, P[pre + ".ln1.g"], P[pre + ".ln1.b"]) for t in seq]
    qkv = [dense(t, P[pre + ".attn.qkv.W"], P[pre + ".attn.qkv.b"]) for t in normed]
    mixed = []
    for i in range(len(seq)):
        out = np.zeros(D)
        for h in range(heads):
            q = qkv[i][h * d : (h + 1) * d]
            scores = [float(q @ qkv[j][D + h * d : D + (h + 1) * d]) / math.sqrt(d) for j in range(len(seq))]
            top = max(scores)
            e = [math.exp(s - top) for s in scores]
            z = sum(e)
            for j in range(len(seq)):
                out[h * d : (h + 1) * d] += e[j] / z * qkv[j][2 * D + h * d : 2 * D + (h + 1) * d]
        mixed.append(dense(out, P[pre + ".attn.proj.W"], P[pre + ".attn.proj.b"]))
    seq = [t + m for t, m in zip(seq, mixed)]
    result = []
    for t in seq:
        u = layer_norm(t, P[pre + ".ln2.g"], P[pre + ".ln2.b"])
        hdn = np.array([gelu(x) for x in dense(u, P[pre + ".mlp.fc1.W"], P[pre + ".mlp.fc1.b"])])
        result.append(t + dense(hdn, P[pre + ".mlp.fc2.W"], P[pre + ".mlp.fc2.b"]))
    return result


def vit(img, P, cfg):
    p = cfg.patch_size
    g = cfg.image_size // p
    tokens = [P["backbone.cls"] + P["backbone.pos"][0]]
    for r in range(g):
        for c in range(g):
            vec = []
            for a in range(p):
                for b in range(p):
                    for ch in range(3):
                        v = img[r * p + a, c * p + b, ch]
                        vec.append((v - MEAN[ch]) / STD[ch] if cfg.pixel_norm else v)
            tokens.append(dense(np.array(vec), P["backbone.patch.W"], P["backbone.patch.b"]) + P["backbone.pos"][1 + r * g + c])
    for i in range(cfg.backbone_depth):
        tokens = block(tokens, P, f"backbone.blocks.{i}", cfg.heads)
    for i in range(cfg.refiner_depth):
        tokens = block(tokens, P, f"refiner.blocks.{i}", cfg.heads)
    return np.array([layer_norm(t, P["refiner.norm.g"], P["refiner.norm.b"]) for t in tokens])


def aggregate(cls_tokens, P, cfg):
    seq = [P["agg.t_out"].copy()] + [np.asarray(t) for t in cls_tokens]
    for i in range(cfg.aggregator_depth):
        seq = block(seq, P, f"agg.blocks.{i}", cfg.heads)
    return layer_norm(seq[0], P["agg.norm.g"], P["agg.norm.b"])


def mlp(v, P, pre):
    h = np.array([gelu(x) for x in dense(v, P[pre + ".fc1.W"], P[pre + ".fc1.b"])])
    return dense(h, P[pre + ".fc2.W"], P[pre + ".fc2.b"])


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def full(global_img, tiles, P, cfg):
    g = vit(global_img, P, cfg)
    ts = [vit(t, P, cfg) for t in tiles]
    f_detail = aggregate([t[0] for t in ts], P, cfg)
    logits = mlp(np.concatenate([g[0], f_detail]), P, "head.cls")
    p = math.exp(logits[1]) / (math.exp(logits[0]) + math.exp(logits[1]))
    tok = lambda seq: np.array([sigmoid(float(t @ P["head.tfl.W"][:, 0] + P["head.tfl.b"][0])) for t in seq[1:]])
    q = sigmoid(mlp(f_detail, P, "head.qfe")[0])
    return p, tok(g), np.array([tok(t) for t in ts]), q, f_detail, g[0]
