"""Dense numerical primitives: forward passes paired with hand-derived backward passes.

Every *_fwd returns (output, cache); the matching *_bwd consumes the upstream
gradient and the cache. All functions are batched over leading axes and keep
the dtype of their inputs, so the same code runs in 32-bit for training and
64-bit for finite-difference checks.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
MASK_NEG = -1e9  # additive score for masked keys; underflows to exactly 0 after softmax

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0).astype(x.dtype)


ACTIVATIONS = {"gelu": (gelu, gelu_grad), "relu": (relu, relu_grad)}


def softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_bwd(dprobs, probs, axis=-1):
    return probs * (dprobs - np.sum(dprobs * probs, axis=axis, keepdims=True))


def log_softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def layer_norm_fwd(x, scale, offset):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv_std
    return scale * xhat + offset, (xhat, inv_std)


def layer_norm_bwd(dy, cache, scale):
    xhat, inv_std = cache
    dxhat = dy * scale
    # dims other than the last are batch dims
    dscale = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    doffset = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dscale, doffset


def linear_fwd(x, w, b):
    return x @ w + b


def linear_bwd(dy, x, w):
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def _split_heads(x, num_heads):
    b, l, d = x.shape
    return x.reshape(b, l, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def attention_fwd(x, mask, p, num_heads):
    """Bidirectional multi-head self-attention over a (B, L, d) batch.

    ``mask`` is (B, L) with 1 at real tokens; masked keys are excluded via a
    large negative additive score. ``p`` maps local names (wq, bq, ...) to arrays.
    """
    q = _split_heads(linear_fwd(x, p["wq"], p["bq"]), num_heads)
    k = _split_heads(linear_fwd(x, p["wk"], p["bk"]), num_heads)
    v = _split_heads(linear_fwd(x, p["wv"], p["bv"]), num_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    addmask = (1.0 - mask[:, None, None, :]).astype(x.dtype) * MASK_NEG
    probs = softmax(scores + addmask)
    context = probs @ v
    merged = _merge_heads(context)
    out = linear_fwd(merged, p["wo"], p["bo"])
    cache = (x, q, k, v, probs, merged)
    return out, cache


def attention_bwd(dout, cache, p, num_heads):
    x, q, k, v, probs, merged = cache
    dmerged, dwo, dbo = linear_bwd(dout, merged, p["wo"])
    dcontext = _split_heads(dmerged, num_heads)
    dprobs = dcontext @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dcontext
    dscores = softmax_bwd(dprobs, probs)
    scale = 1.0 / np.sqrt(q.shape[-1])
    dq = (dscores @ k) * scale
    dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
    dx = np.zeros_like(x)
    grads = {"wo": dwo, "bo": dbo}
    for name, dhead in (("q", dq), ("k", dk), ("v", dv)):
        dflat = _merge_heads(dhead)
        dxi, dw, db = linear_bwd(dflat, x, p["w" + name])
        dx += dxi
        grads["w" + name] = dw
        grads["b" + name] = db
    return dx, grads


def mlp_fwd(x, w1, b1, w2, b2, activation):
    act, _ = ACTIVATIONS[activation]
    u = linear_fwd(x, w1, b1)
    h = act(u)
    y = linear_fwd(h, w2, b2)
    return y, (x, u, h)


def mlp_bwd(dy, cache, w1, w2, activation):
    _, act_grad = ACTIVATIONS[activation]
    x, u, h = cache
    dh, dw2, db2 = linear_bwd(dy, h, w2)
    du = dh * act_grad(u)
    dx, dw1, db1 = linear_bwd(du, x, w1)
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def swiglu_fwd(x, w1, b1, w2, b2, w3, b3, activation):
    """Gated MLP: (act(x W1 + b1) * (x W3 + b3)) W2 + b2."""
    act, _ = ACTIVATIONS[activation]
    u = linear_fwd(x, w1, b1)
    g = act(u)
    gate = linear_fwd(x, w3, b3)
    prod = g * gate
    y = linear_fwd(prod, w2, b2)
    return y, (x, u, g, gate, prod)


def swiglu_bwd(dy, cache, w1, w2, w3, activation):
    _, act_grad = ACTIVATIONS[activation]
    x, u, g, gate, prod = cache
    dprod, dw2, db2 = linear_bwd(dy, prod, w2)
    dg = dprod * gate
    dgate = dprod * g
    du = dg * act_grad(u)
    dx1, dw1, db1 = linear_bwd(du, x, w1)
    dx3, dw3, db3 = linear_bwd(dgate, x, w3)
    return dx1 + dx3, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}


def global_norm(arrays) -> float:
    total = 0.0
    for a in arrays:
        total += float(np.sum(np.asarray(a, dtype=np.float64) ** 2))
    return float(np.sqrt(total))
