"""Layer primitives with hand-written backward passes.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache.  Conv, batch-norm and pooling
work on ``(batch, channels, time)``; attention and FFN on
``(batch, time, channels)``.
"""
from __future__ import annotations

import math

import numpy as np

from ..core import DegenerateBatch, ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# --- convolution -------------------------------------------------------------

def conv1d_forward(x, w, b):
    """Same-length cross-correlation: zero padding of ``K // 2`` on each side."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv1d input {x.shape} incompatible with weights {w.shape}")
    bsz, cin, t = x.shape
    cout, _, k = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = np.stack([xp[:, :, j:j + t] for j in range(k)], axis=-1)  # B C T K
    cols = cols.transpose(0, 2, 1, 3).reshape(bsz * t, cin * k)
    out = (cols @ w.reshape(cout, cin * k).T).reshape(bsz, t, cout).transpose(0, 2, 1)
    return out + b[None, :, None], (cols, x.shape, w)


def conv1d_backward(dout, cache):
    cols, (bsz, cin, t), w = cache
    cout, _, k = w.shape
    pad = k // 2
    d2 = dout.transpose(0, 2, 1).reshape(bsz * t, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = dout.sum(axis=(0, 2))
    dcols = (d2 @ w.reshape(cout, cin * k)).reshape(bsz, t, cin, k).transpose(0, 2, 1, 3)
    dxp = np.zeros((bsz, cin, t + 2 * pad))
    for j in range(k):
        dxp[:, :, j:j + t] += dcols[..., j]
    return dxp[:, :, pad:pad + t], dw, db


# --- batch normalisation -----------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool):
    """Per-channel normalisation over batch and time.

    In train mode also returns the updated running statistics (unbiased
    variance, momentum 0.1); in eval mode those are returned unchanged.
    """
    if train:
        if x.shape[0] < 2:
            raise DegenerateBatch("batch norm in train mode needs a batch of at least 2")
        n = x.shape[0] * x.shape[2]
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        new_mean = (1 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean
        new_var = (1 - BN_MOMENTUM) * running_var + BN_MOMENTUM * var * n / (n - 1)
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, (xhat, inv_std, gamma, train), (new_mean, new_var)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2))
    dbeta = dout.sum(axis=(0, 2))
    dxhat = dout * gamma[None, :, None]
    if not train:
        return dxhat * inv_std[None, :, None], dgamma, dbeta
    n = dout.shape[0] * dout.shape[2]
    dx = (inv_std[None, :, None] / n) * (
        n * dxhat
        - dxhat.sum(axis=(0, 2), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
    )
    return dx, dgamma, dbeta


# --- elementwise -------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def dropout_forward(x, rate: float, rng: np.random.Generator | None):
    """Inverted dropout; ``rng=None`` (eval mode) passes ``x`` through."""
    if rng is None or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def maxpool_forward(x):
    """Max pool, size 2 stride 2, along time; odd tails are dropped."""
    bsz, c, t = x.shape
    half = t // 2
    view = x[:, :, :2 * half].reshape(bsz, c, half, 2)
    idx = view.argmax(axis=-1)
    out = np.take_along_axis(view, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool_backward(dout, cache):
    idx, shape = cache
    bsz, c, t = shape
    half = t // 2
    dview = np.zeros((bsz, c, half, 2))
    np.put_along_axis(dview, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(shape)
    dx[:, :, :2 * half] = dview.reshape(bsz, c, 2 * half)
    return dx


# --- positional encoding -----------------------------------------------------

def positional_encoding(t: int, d_model: int, omega: float = 10000.0) -> np.ndarray:
    """Sinusoidal table of shape (t, d_model): sine on even, cosine on odd dims."""
    if d_model % 2:
        raise ShapeMismatch("d_model must be even")
    pos = np.arange(t, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / omega ** (2 * i / d_model)
    pe = np.empty((t, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


# --- dense / attention -------------------------------------------------------

def linear_forward(x, w, b=None):
    out = x @ w
    if b is not None:
        out = out + b
    return out, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    d = w.shape[1]
    dw = x.reshape(-1, x.shape[-1]).T @ dout.reshape(-1, d)
    db = dout.reshape(-1, d).sum(axis=0)
    return dout @ w.T, dw, db


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _split_heads(x, heads):
    bsz, t, d = x.shape
    return x.reshape(bsz, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    bsz, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(bsz, t, h * dk)


def mha_forward(x, wq, wk, wv, wo, heads: int):
    """Multi-head scaled dot-product self-attention (no projection biases)."""
    d = x.shape[-1]
    if d % heads or wq.shape != (d, d):
        raise ShapeMismatch(f"attention over width {d} with {heads} heads and W^Q {wq.shape}")
    dk = d // heads
    q = _split_heads(x @ wq, heads)
    k = _split_heads(x @ wk, heads)
    v = _split_heads(x @ wv, heads)
    attn = softmax(q @ k.transpose(0, 1, 3, 2) / math.sqrt(dk))
    concat = _merge_heads(attn @ v)
    return concat @ wo, (x, q, k, v, attn, concat, wq, wk, wv, wo)


def mha_backward(dout, cache):
    x, q, k, v, attn, concat, wq, wk, wv, wo = cache
    heads, dk = q.shape[1], q.shape[3]
    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    dwo = flat(concat).T @ flat(dout)
    dheads = _split_heads(dout @ wo.T, heads)
    dattn = dheads @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dheads
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) / math.sqrt(dk)
    dq = _merge_heads(dscores @ k)
    dkk = _merge_heads(dscores.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)
    dwq = flat(x).T @ flat(dq)
    dwk = flat(x).T @ flat(dkk)
    dwv = flat(x).T @ flat(dv)
    dx = dq @ wq.T + dkk @ wk.T + dv @ wv.T
    return dx, dwq, dwk, dwv, dwo


TRANSFORMER_PARAMS = ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")


def transformer_forward(x, p: dict, heads: int, dropout: float, rng=None):
    """Encoder layer: attention + residual, then ReLU FFN + residual.

    ``p`` maps the names in ``TRANSFORMER_PARAMS`` to arrays.  Dropout is
    applied to each sublayer output before its residual add.
    """
    att, c_att = mha_forward(x, p["wq"], p["wk"], p["wv"], p["wo"], heads)
    att, m1 = dropout_forward(att, dropout, rng)
    x1 = x + att
    h, c_l1 = linear_forward(x1, p["w1"], p["b1"])
    h, r_mask = relu_forward(h)
    f, c_l2 = linear_forward(h, p["w2"], p["b2"])
    f, m2 = dropout_forward(f, dropout, rng)
    return x1 + f, (c_att, m1, c_l1, r_mask, c_l2, m2)


def transformer_backward(dout, cache):
    c_att, m1, c_l1, r_mask, c_l2, m2 = cache
    grads = {}
    df = dropout_backward(dout, m2)
    dh, grads["w2"], grads["b2"] = linear_backward(df, c_l2)
    dh = relu_backward(dh, r_mask)
    dx1, grads["w1"], grads["b1"] = linear_backward(dh, c_l1)
    dx1 = dx1 + dout
    datt = dropout_backward(dx1, m1)
    dx, grads["wq"], grads["wk"], grads["wv"], grads["wo"] = mha_backward(datt, c_att)
    return dx + dx1, grads


# --- loss --------------------------------------------------------------------

def weighted_cross_entropy(logits, labels, class_weights):
    """Mean over the batch of ``-w[y] * log softmax(logits)[y]``.

    Returns ``(loss, probabilities, dlogits)``.
    """
    bsz = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(logp)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    rows = np.arange(bsz)
    loss = float(-(w * logp[rows, labels]).sum() / bsz)
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits *= (w / bsz)[:, None]
    return loss, probs, dlogits
