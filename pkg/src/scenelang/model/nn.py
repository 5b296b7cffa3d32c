"""Minimal dense layers with hand-derived backward passes.

Every layer caches what its backward pass needs during forward; gradients
accumulate into ``d<param>`` buffers until ``zero_grad``.  Shapes are
batch-first, ``(B, T, D)``.
"""

from __future__ import annotations

import numpy as np


def he_init(rng, shape, dtype, std=0.02):
    return rng.normal(0.0, std, shape).astype(dtype)


class Layer:
    def params(self):
        return iter(())

    def zero_grad(self):
        for _, _, grad in self.params():
            grad[...] = 0.0


class Linear(Layer):
    def __init__(self, name, d_in, d_out, rng, dtype):
        self.name = name
        self.W = he_init(rng, (d_in, d_out), dtype)
        self.b = np.zeros(d_out, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, g):
        x2 = self._x.reshape(-1, self.W.shape[0])
        g2 = g.reshape(-1, self.W.shape[1])
        self.dW += x2.T @ g2
        self.db += g2.sum(axis=0)
        return g @ self.W.T

    def params(self):
        yield f"{self.name}.W", self.W, self.dW
        yield f"{self.name}.b", self.b, self.db


class Embedding(Layer):
    def __init__(self, name, vocab, d, rng, dtype):
        self.name = name
        self.W = he_init(rng, (vocab, d), dtype)
        self.dW = np.zeros_like(self.W)
        self._ids = None

    def forward(self, ids):
        self._ids = ids
        return self.W[ids]

    def backward(self, g):
        np.add.at(self.dW, self._ids.reshape(-1), g.reshape(-1, self.W.shape[1]))
        return None

    def params(self):
        yield f"{self.name}.W", self.W, self.dW


class LayerNorm(Layer):
    def __init__(self, name, d, dtype, eps=1e-5):
        self.name = name
        self.g = np.ones(d, dtype=dtype)
        self.b = np.zeros(d, dtype=dtype)
        self.dg = np.zeros_like(self.g)
        self.db = np.zeros_like(self.b)
        self.eps = eps
        self._xhat = None
        self._inv = None

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._xhat, self._inv = xhat, inv
        return self.g * xhat + self.b

    def backward(self, gy):
        xhat, inv = self._xhat, self._inv
        self.dg += (gy * xhat).sum(axis=tuple(range(gy.ndim - 1)))
        self.db += gy.sum(axis=tuple(range(gy.ndim - 1)))
        gxhat = gy * self.g
        mean1 = gxhat.mean(axis=-1, keepdims=True)
        mean2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (gxhat - mean1 - xhat * mean2)

    def params(self):
        yield f"{self.name}.g", self.g, self.dg
        yield f"{self.name}.b", self.b, self.db


def softmax(x):
    m = x.max(axis=-1, keepdims=True)
    # rows that are fully masked (-inf) would produce nan; none occur here,
    # every attention row can at least see one unmasked position
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p, gp):
    return p * (gp - (gp * p).sum(axis=-1, keepdims=True))


class MultiHeadAttention(Layer):
    """Scaled dot-product attention with H heads over (B, T, D) inputs."""

    def __init__(self, name, d, heads, rng, dtype):
        self.name = name
        self.h = heads
        self.dh = d // heads
        self.wq = Linear(f"{name}.wq", d, d, rng, dtype)
        self.wk = Linear(f"{name}.wk", d, d, rng, dtype)
        self.wv = Linear(f"{name}.wv", d, d, rng, dtype)
        self.wo = Linear(f"{name}.wo", d, d, rng, dtype)
        self._cache = None
        self.last_attention = None

    def _split(self, x):
        b, t, d = x.shape
        return x.reshape(b, t, self.h, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def forward(self, xq, xkv, mask=None):
        """mask is additive (0 or -inf), broadcastable to (B, H, Tq, Tk)."""
        q = self._split(self.wq.forward(xq))
        k = self._split(self.wk.forward(xkv))
        v = self._split(self.wv.forward(xkv))
        inv = 1.0 / np.sqrt(self.dh)
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * inv
        if mask is not None:
            scores = scores + mask
        att = softmax(scores)
        self.last_attention = att
        ctx = np.matmul(att, v)
        y = self.wo.forward(self._merge(ctx))
        self._cache = (q, k, v, att, inv)
        return y

    def backward(self, gy):
        q, k, v, att, inv = self._cache
        gctx = self._split(self.wo.backward(gy))
        gatt = np.matmul(gctx, v.transpose(0, 1, 3, 2))
        gv = np.matmul(att.transpose(0, 1, 3, 2), gctx)
        gscores = softmax_backward(att, gatt) * inv
        gq = np.matmul(gscores, k)
        gk = np.matmul(gscores.transpose(0, 1, 3, 2), q)
        gxq = self.wq.backward(self._merge(gq))
        gxkv = self.wk.backward(self._merge(gk)) + self.wv.backward(self._merge(gv))
        return gxq, gxkv

    def params(self):
        for lin in (self.wq, self.wk, self.wv, self.wo):
            yield from lin.params()


class FeedForward(Layer):
    def __init__(self, name, d, d_ff, rng, dtype):
        self.l1 = Linear(f"{name}.l1", d, d_ff, rng, dtype)
        self.l2 = Linear(f"{name}.l2", d_ff, d, rng, dtype)
        self._mask = None

    def forward(self, x):
        h = self.l1.forward(x)
        self._mask = h > 0
        return self.l2.forward(h * self._mask)

    def backward(self, g):
        gh = self.l2.backward(g)
        return self.l1.backward(gh * self._mask)

    def params(self):
        yield from self.l1.params()
        yield from self.l2.params()


class Dropout:
    def __init__(self, rate):
        self.rate = rate
        self._mask = None

    def forward(self, x, rng=None, training=False):
        if not training or self.rate <= 0.0 or rng is None:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, g):
        if self._mask is None:
            return g
        return g * self._mask


def sinusoidal_encoding(max_len, d, dtype):
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


def causal_mask(t, dtype):
    m = np.zeros((t, t), dtype=dtype)
    m[np.triu_indices(t, k=1)] = -np.inf
    return m[None, None]
