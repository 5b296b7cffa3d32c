"""Point-cloud encoder and token decoder.

The encoder voxelizes the cloud at the model resolution, pools occupied
cells by a factor of ``2**pooling_levels`` per axis, summarizes each coarse
cell with order-free statistics (point count, mean offset from the cell
center, per-axis variance) plus its normalized cell center, and maps the
summary through a learned two-layer MLP.  Cells are ordered
lexicographically by coordinate, so the feature sequence is a pure function
of the point set.

The decoder is a pre-norm transformer: masked self-attention over tokens,
cross-attention over encoder features, and a feed-forward block, repeated
``n_layers`` times, with sinusoidal positions and a learned projection to
vocabulary logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyCloud, SequenceTooLong
from . import nn
from .config import ModelConfig

STAT_DIM = 10
COORD_SCALE = 10.0   # meters; normalizes coarse-cell centers
COUNT_SCALE = 10.0   # divides log1p(point count)


@dataclass(eq=False)
class EncoderFeatures:
    features: np.ndarray   # (K, d_model)
    cells: np.ndarray      # (K, 3) coarse cell coordinates, lexicographic order


def point_cloud_stats(points: np.ndarray, config: ModelConfig):
    """Per-coarse-cell statistics; returns (stats (K, 10), cells (K, 3)).

    Points must already be normalized to the non-negative octant.  The
    accumulation order is fixed by a full lexicographic sort, so the result
    is bit-identical under any permutation of the input points.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise EmptyCloud("point cloud must be a non-empty (N, 3) array")
    cs = config.coarse_cell_size
    cells = np.floor(points / cs).astype(np.int64)
    order = np.lexsort(
        (points[:, 2], points[:, 1], points[:, 0],
         cells[:, 2], cells[:, 1], cells[:, 0])
    )
    points = points[order]
    cells = cells[order]
    change = np.any(np.diff(cells, axis=0) != 0, axis=1)
    starts = np.concatenate([[0], np.nonzero(change)[0] + 1, [len(points)]])
    k = len(starts) - 1
    stats = np.zeros((k, STAT_DIM), dtype=np.float64)
    out_cells = np.zeros((k, 3), dtype=np.int64)
    half = cs / 2.0
    for j in range(k):
        lo, hi = starts[j], starts[j + 1]
        pts = points[lo:hi]
        cell = cells[lo]
        center = (cell + 0.5) * cs
        stats[j, 0] = math.log1p(hi - lo) / COUNT_SCALE
        stats[j, 1:4] = (pts.mean(axis=0) - center) / half
        stats[j, 4:7] = pts.var(axis=0) / (half * half)
        stats[j, 7:10] = center / COORD_SCALE
        out_cells[j] = cell
    return stats, out_cells


class DecoderBlock(nn.Layer):
    def __init__(self, name, config, rng, dtype):
        d, h = config.d_model, config.n_heads
        self.ln1 = nn.LayerNorm(f"{name}.ln1", d, dtype)
        self.self_attn = nn.MultiHeadAttention(f"{name}.self", d, h, rng, dtype)
        self.ln2 = nn.LayerNorm(f"{name}.ln2", d, dtype)
        self.cross_attn = nn.MultiHeadAttention(f"{name}.cross", d, h, rng, dtype)
        self.ln3 = nn.LayerNorm(f"{name}.ln3", d, dtype)
        self.ffn = nn.FeedForward(f"{name}.ffn", d, config.d_ff, rng, dtype)
        self.drop1 = nn.Dropout(config.dropout)
        self.drop2 = nn.Dropout(config.dropout)
        self.drop3 = nn.Dropout(config.dropout)

    def forward(self, x, feats, self_mask, feat_mask, rng=None, training=False):
        h = self.ln1.forward(x)
        x = x + self.drop1.forward(
            self.self_attn.forward(h, h, self_mask), rng, training
        )
        x = x + self.drop2.forward(
            self.cross_attn.forward(self.ln2.forward(x), feats, feat_mask),
            rng,
            training,
        )
        x = x + self.drop3.forward(
            self.ffn.forward(self.ln3.forward(x)), rng, training
        )
        return x

    def backward(self, g):
        gf = self.ln3.backward(self.ffn.backward(self.drop3.backward(g)))
        g = g + gf
        gq, gfeats = self.cross_attn.backward(self.drop2.backward(g))
        g = g + self.ln2.backward(gq)
        gq2, gkv2 = self.self_attn.backward(self.drop1.backward(g))
        g = g + self.ln1.backward(gq2 + gkv2)
        return g, gfeats

    def params(self):
        for layer in (self.ln1, self.self_attn, self.ln2, self.cross_attn,
                      self.ln3, self.ffn):
            yield from layer.params()


class SceneModel:
    """Encoder MLP + transformer decoder with explicit backward."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        dtype = np.dtype(config.dtype)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.embedding = nn.Embedding("emb", config.vocab_size, d, rng, dtype)
        self.pos = nn.sinusoidal_encoding(config.max_seq, d, dtype)
        self.enc1 = nn.Linear("enc.l1", STAT_DIM, d, rng, dtype)
        self.enc2 = nn.Linear("enc.l2", d, d, rng, dtype)
        self.blocks = [
            DecoderBlock(f"block{i}", config, rng, dtype)
            for i in range(config.n_layers)
        ]
        self.final_ln = nn.LayerNorm("final_ln", d, dtype)
        self.out = nn.Linear("out", d, config.vocab_size, rng, dtype)
        self._enc_mask = None
        self._scale = math.sqrt(d)

    # -- parameters ---------------------------------------------------
    def params(self):
        yield from self.embedding.params()
        yield from self.enc1.params()
        yield from self.enc2.params()
        for block in self.blocks:
            yield from block.params()
        yield from self.final_ln.params()
        yield from self.out.params()

    def zero_grad(self):
        for _, _, grad in self.params():
            grad[...] = 0.0

    def param_dict(self):
        return {name: value for name, value, _ in self.params()}

    # -- encoder ------------------------------------------------------
    def encode_stats(self, stats):
        """(B, K, 10) statistics -> (B, K, d) features."""
        h = self.enc1.forward(stats.astype(self.dtype))
        self._enc_mask = h > 0
        return self.enc2.forward(h * self._enc_mask)

    def encode_stats_backward(self, gfeats):
        gh = self.enc2.backward(gfeats)
        self.enc1.backward(gh * self._enc_mask)

    # -- decoder ------------------------------------------------------
    def forward(self, tokens, stats, stats_mask=None, rng=None, training=False):
        """Logits over the vocabulary for every position.

        tokens: (B, T) int; stats: (B, K, 10); stats_mask: (B, K) bool with
        True marking real (unpadded) feature slots.
        """
        b, t = tokens.shape
        if t > self.config.max_seq:
            raise SequenceTooLong(f"{t} positions exceed max_seq")
        feats = self.encode_stats(stats)
        x = self.embedding.forward(tokens) * self._scale + self.pos[:t]
        self_mask = nn.causal_mask(t, self.dtype)
        feat_mask = None
        if stats_mask is not None:
            feat_mask = np.where(stats_mask, 0.0, -np.inf).astype(self.dtype)
            feat_mask = feat_mask[:, None, None, :]
        for block in self.blocks:
            x = block.forward(x, feats, self_mask, feat_mask, rng, training)
        x = self.final_ln.forward(x)
        return self.out.forward(x)

    def backward(self, dlogits):
        g = self.final_ln.backward(self.out.backward(dlogits))
        gfeats = 0.0
        for block in reversed(self.blocks):
            g, gf = block.backward(g)
            gfeats = gfeats + gf
        self.embedding.backward(g * self._scale)
        if self.blocks:
            self.encode_stats_backward(gfeats)

    def encode_point_cloud(self, points) -> EncoderFeatures:
        """Spec'd inference-path encoder: cloud -> sorted feature sequence."""
        stats, cells = point_cloud_stats(points, self.config)
        feats = self.encode_stats(stats[None])[0]
        return EncoderFeatures(feats, cells)


def encode_point_cloud(points, model: SceneModel, config=None) -> EncoderFeatures:
    return model.encode_point_cloud(points)


def cross_entropy_next_token(logits, targets, mask):
    """Mean negative log-likelihood over unmasked positions.

    logits: (B, T, V); targets: (B, T) int; mask: (B, T) bool.  Returns
    (loss, dlogits) with the gradient of the mean loss.
    """
    b, t, v = logits.shape
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    ez = np.exp(z)
    sez = ez.sum(axis=-1, keepdims=True)
    logprob = z - np.log(sez)
    picked = np.take_along_axis(logprob, targets[..., None], axis=-1)[..., 0]
    n = int(mask.sum())
    if n == 0:
        raise ValueError("loss mask selects no positions")
    loss = float(-(picked * mask).sum() / n)
    dlogits = ez / sez
    np.subtract.at(
        dlogits.reshape(-1, v),
        (np.arange(b * t), targets.reshape(-1)),
        1.0,
    )
    dlogits *= (mask[..., None] / n).astype(logits.dtype)
    return loss, dlogits
