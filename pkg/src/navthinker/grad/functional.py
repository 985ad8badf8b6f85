"""Composite differentiable operations: masked softmax, attention, layer norm,
1D convolution and the scalar losses used by the world model and PPO."""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, _make, as_tensor, matmul, scale, swapaxes

LN_EPS = 1e-5


def softmax_masked(x: Tensor, mask) -> Tensor:
    """Softmax over the last axis with ``mask`` True marking usable positions.

    Blocked positions come out as exact zeros.
    """
    x = as_tensor(x)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not m.any(axis=-1).all():
        raise ValueError("softmax_masked: a row has every position masked")
    z = np.where(m, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(z), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), bw)


def softmax(x: Tensor) -> Tensor:
    return softmax_masked(x, np.ones(x.shape, dtype=bool))


def log_softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bw)


def attention(q: Tensor, k: Tensor, v: Tensor, mask) -> Tensor:
    """Scaled dot-product attention, ``mask[i, j]`` True when query i may see key j."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes inconsistent: q{q.shape} k{k.shape} v{v.shape}")
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax_masked(scores, mask), v)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    x = as_tensor(x)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine params must be ({d},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gain, bias), bw)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid 1D convolution. x: (B, Cin, L), w: (Cout, Cin, K), b: (Cout,)."""
    x = as_tensor(x)
    bsz, cin, length = x.shape
    cout, cin_w, ksz = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape}, kernel {w.shape}")
    lout = (length - ksz) // stride + 1
    idx = np.arange(lout)[:, None] * stride + np.arange(ksz)[None, :]  # (Lout, K)
    cols = x.data[:, :, idx]  # (B, Cin, Lout, K)
    cols2 = cols.transpose(0, 2, 1, 3).reshape(bsz, lout, cin * ksz)
    wmat = w.data.reshape(cout, cin * ksz)
    out = cols2 @ wmat.T + b.data  # (B, Lout, Cout)

    def bw(g):
        g = g.transpose(0, 2, 1)  # (B, Lout, Cout)
        gw = np.einsum("blo,blk->ok", g, cols2).reshape(w.shape)
        gb = g.sum(axis=(0, 1))
        gcols = (g @ wmat).reshape(bsz, lout, cin, ksz).transpose(0, 2, 1, 3)
        gx = np.zeros(x.shape)
        for j in range(ksz):
            np.add.at(gx, (slice(None), slice(None), idx[:, j]), gcols[:, :, :, j])
        return gx, gw, gb

    return _make(out.transpose(0, 2, 1).copy(), (x, w, b), bw)


# ---------------------------------------------------------------- losses


def mse(pred: Tensor, target) -> Tensor:
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size
    return _make(np.array((diff * diff).sum() / n), (pred,), lambda g: (g * 2.0 * diff / n,))


def masked_mse(pred: Tensor, target, weight) -> Tensor:
    """Squared error averaged over entries whose weight is nonzero."""
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    if pred.shape != t.shape or w.shape != t.shape:
        raise ShapeError(f"masked_mse shapes differ: {pred.shape}, {t.shape}, mask {w.shape}")
    n = np.count_nonzero(w)
    if n == 0:
        raise ValueError("masked_mse: mask selects no entries")
    diff = (pred.data - t) * (w != 0)
    return _make(np.array((diff * diff).sum() / n), (pred,), lambda g: (g * 2.0 * diff / n,))


def categorical_logprob(logits: Tensor, actions) -> Tensor:
    """Per-row log-probability of the given action ids, shape (B,)."""
    a = np.asarray(actions, dtype=np.int64)
    lp = log_softmax(logits)
    rows = np.arange(a.shape[0])
    shape = lp.shape

    def bw(g):
        full = np.zeros(shape)
        full[rows, a] = g
        return (full,)

    return _make(lp.data[rows, a].copy(), (lp,), bw)


def entropy(logits: Tensor) -> Tensor:
    """Per-row categorical entropy, shape (B,) (or scalar for 1-D logits)."""
    logits = as_tensor(logits)
    lp = log_softmax(logits)
    p = np.exp(lp.data)

    def bw(g):
        # d/dlp of -sum(exp(lp) * lp) treating lp as independent coordinates
        return (-(np.expand_dims(g, -1)) * p * (lp.data + 1.0),)

    return _make(-(p * lp.data).sum(axis=-1), (lp,), bw)


def losses(kind: str, *args) -> Tensor:
    """Name-dispatched scalar losses.

    ``categorical_logprob`` and ``entropy`` reduce by the batch mean.
    """
    if kind == "mse":
        return mse(*args)
    if kind == "masked_mse":
        return masked_mse(*args)
    if kind == "categorical_logprob":
        return categorical_logprob(*args).mean()
    if kind == "entropy":
        return entropy(*args).mean()
    raise ValueError(f"unknown loss kind {kind!r}")
