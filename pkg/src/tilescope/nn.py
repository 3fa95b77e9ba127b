"""Transformer building blocks with explicit backward passes.

Each ``*_fwd`` returns ``(output, cache)``; the matching ``*_bwd`` takes the
upstream gradient and the cache, accumulates parameter gradients into a
``grads`` dict (when given) and returns the input gradient. Parameters live
in a flat ``dict[str, ndarray]`` addressed by dotted prefixes.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
_GELU_K = 1.702


def _acc(grads, name, value):
    if grads is None:
        return
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def linear_fwd(x, W, b):
    y = x @ W
    y += b
    return y, x


def linear_bwd(dy, x, W, grads, prefix):
    if grads is not None:
        _acc(grads, prefix + ".W", x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1]))
        _acc(grads, prefix + ".b", dy.reshape(-1, dy.shape[-1]).sum(axis=0))
    return dy @ W.T


def layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def layernorm_bwd(dy, cache, g, grads, prefix):
    xhat, rstd = cache
    if grads is not None:
        d = dy.shape[-1]
        _acc(grads, prefix + ".g", (dy * xhat).reshape(-1, d).sum(axis=0))
        _acc(grads, prefix + ".b", dy.reshape(-1, d).sum(axis=0))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return rstd * (dxhat - m1 - xhat * m2)


def gelu_fwd(x):
    """Sigmoid-form GELU, ``x * sigmoid(1.702 x)``."""
    s = np.multiply(x, -_GELU_K)
    with np.errstate(over="ignore"):  # exp -> inf gives sigmoid 0, the right limit
        np.exp(s, out=s)
    s += 1.0
    np.reciprocal(s, out=s)
    return x * s, (x, s)


def gelu_bwd(dy, cache):
    x, s = cache
    g = 1.0 - s
    g *= s
    g *= x
    g *= _GELU_K
    g += s
    g *= dy
    return g


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softplus(z):
    return np.logaddexp(0.0, z)


def mlp_fwd(x, P, prefix):
    h, c1 = linear_fwd(x, P[prefix + ".fc1.W"], P[prefix + ".fc1.b"])
    a, c2 = gelu_fwd(h)
    y, c3 = linear_fwd(a, P[prefix + ".fc2.W"], P[prefix + ".fc2.b"])
    return y, (c1, c2, c3)


def mlp_bwd(dy, cache, P, grads, prefix):
    c1, c2, c3 = cache
    da = linear_bwd(dy, c3, P[prefix + ".fc2.W"], grads, prefix + ".fc2")
    dh = gelu_bwd(da, c2)
    return linear_bwd(dh, c1, P[prefix + ".fc1.W"], grads, prefix + ".fc1")


def attention_fwd(x, P, prefix, heads, key_mask=None):
    """Multi-head self-attention over ``x`` of shape (B, T, D).

    ``key_mask`` (B, T) marks valid keys; masked keys get zero weight.
    """
    B, T, D = x.shape
    d = D // heads
    qkv, c_in = linear_fwd(x, P[prefix + ".qkv.W"], P[prefix + ".qkv.b"])
    qkv = qkv.reshape(B, T, 3, heads, d).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / np.sqrt(d)
    p = q @ k.transpose(0, 1, 3, 2)
    p *= scale
    if key_mask is not None:
        p[~np.broadcast_to(key_mask[:, None, None, :], p.shape)] = -np.inf
    p -= p.max(axis=-1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=-1, keepdims=True)
    o = (p @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
    y, c_out = linear_fwd(o, P[prefix + ".proj.W"], P[prefix + ".proj.b"])
    return y, (c_in, q, k, v, p, c_out, heads, scale)


def attention_bwd(dy, cache, P, grads, prefix):
    c_in, q, k, v, p, c_out, heads, scale = cache
    B, T, D = dy.shape
    d = D // heads
    do = linear_bwd(dy, c_out, P[prefix + ".proj.W"], grads, prefix + ".proj")
    do = do.reshape(B, T, heads, d).transpose(0, 2, 1, 3)
    dp = do @ v.transpose(0, 1, 3, 2)
    dv = p.transpose(0, 1, 3, 2) @ do
    ds = dp * p
    dp -= ds.sum(axis=-1, keepdims=True)
    np.multiply(dp, p, out=ds)
    ds *= scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, T, 3 * D)
    return linear_bwd(dqkv, c_in, P[prefix + ".qkv.W"], grads, prefix + ".qkv")


def block_fwd(x, P, prefix, heads, key_mask=None):
    """Pre-norm transformer block: ``x + attn(ln1(x))`` then ``+ mlp(ln2(.))``."""
    h1, c1 = layernorm_fwd(x, P[prefix + ".ln1.g"], P[prefix + ".ln1.b"])
    a, c2 = attention_fwd(h1, P, prefix + ".attn", heads, key_mask)
    x1 = x + a
    h2, c3 = layernorm_fwd(x1, P[prefix + ".ln2.g"], P[prefix + ".ln2.b"])
    m, c4 = mlp_fwd(h2, P, prefix + ".mlp")
    return x1 + m, (c1, c2, c3, c4)


def block_bwd(dy, cache, P, grads, prefix):
    c1, c2, c3, c4 = cache
    dh2 = mlp_bwd(dy, c4, P, grads, prefix + ".mlp")
    dx1 = dy + layernorm_bwd(dh2, c3, P[prefix + ".ln2.g"], grads, prefix + ".ln2")
    dh1 = attention_bwd(dx1, c2, P, grads, prefix + ".attn")
    return dx1 + layernorm_bwd(dh1, c1, P[prefix + ".ln1.g"], grads, prefix + ".ln1")


def block_param_shapes(prefix: str, dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    return {
        prefix + ".ln1.g": (dim,),
        prefix + ".ln1.b": (dim,),
        prefix + ".attn.qkv.W": (dim, 3 * dim),
        prefix + ".attn.qkv.b": (3 * dim,),
        prefix + ".attn.proj.W": (dim, dim),
        prefix + ".attn.proj.b": (dim,),
        prefix + ".ln2.g": (dim,),
        prefix + ".ln2.b": (dim,),
        prefix + ".mlp.fc1.W": (dim, hidden),
        prefix + ".mlp.fc1.b": (hidden,),
        prefix + ".mlp.fc2.W": (hidden, dim),
        prefix + ".mlp.fc2.b": (dim,),
    }


def stack_fwd(x, P, prefix, depth, heads, key_mask=None):
    caches = []
    for i in range(depth):
        x, c = block_fwd(x, P, f"{prefix}.{i}", heads, key_mask)
        caches.append(c)
    return x, caches


def stack_bwd(dy, caches, P, grads, prefix):
    for i in reversed(range(len(caches))):
        dy = block_bwd(dy, caches[i], P, grads, f"{prefix}.{i}")
    return dy
