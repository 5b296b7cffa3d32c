"""Autoregressive decoding: greedy, nucleus, optionally grammar-constrained.

Uses an incremental forward with cached self-attention keys/values and
precomputed cross-attention projections, so a rollout costs O(T) layer
evaluations instead of O(T^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tokens as tok
from .network import SceneModel, EncoderFeatures


def _ln(x, g, b, eps=1e-5):
    mu = x.mean()
    xc = x - mu
    var = (xc * xc).mean()
    return g * (xc / np.sqrt(var + eps)) + b


def _softmax(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


class DecodeSession:
    """Single-scene incremental decoder state."""

    def __init__(self, model: SceneModel, features: EncoderFeatures):
        self.model = model
        self.h = model.config.n_heads
        self.dh = model.config.d_model // self.h
        self.inv = 1.0 / np.sqrt(self.dh)
        self.self_k = [[] for _ in model.blocks]
        self.self_v = [[] for _ in model.blocks]
        self.cross_k = []
        self.cross_v = []
        f = features.features
        for block in model.blocks:
            ck = (f @ block.cross_attn.wk.W + block.cross_attn.wk.b)
            cv = (f @ block.cross_attn.wv.W + block.cross_attn.wv.b)
            self.cross_k.append(ck.reshape(-1, self.h, self.dh))
            self.cross_v.append(cv.reshape(-1, self.h, self.dh))

    def _attend(self, q, keys, values):
        # q: (H, dh); keys/values: (t, H, dh)
        scores = np.einsum("hd,thd->ht", q, keys) * self.inv
        att = _softmax(scores)
        return np.einsum("ht,thd->hd", att, values).reshape(-1)

    def step(self, token: int, position: int) -> np.ndarray:
        """Feed one token, return next-token logits."""
        m = self.model
        x = m.embedding.W[token] * m._scale + m.pos[position]
        for i, block in enumerate(m.blocks):
            h = _ln(x, block.ln1.g, block.ln1.b)
            attn = block.self_attn
            q = (h @ attn.wq.W + attn.wq.b).reshape(self.h, self.dh)
            self.self_k[i].append((h @ attn.wk.W + attn.wk.b).reshape(self.h, self.dh))
            self.self_v[i].append((h @ attn.wv.W + attn.wv.b).reshape(self.h, self.dh))
            keys = np.stack(self.self_k[i])
            values = np.stack(self.self_v[i])
            ctx = self._attend(q, keys, values)
            x = x + ctx @ attn.wo.W + attn.wo.b
            h = _ln(x, block.ln2.g, block.ln2.b)
            cattn = block.cross_attn
            q = (h @ cattn.wq.W + cattn.wq.b).reshape(self.h, self.dh)
            ctx = self._attend(q, self.cross_k[i], self.cross_v[i])
            x = x + ctx @ cattn.wo.W + cattn.wo.b
            h = _ln(x, block.ln3.g, block.ln3.b)
            hidden = h @ block.ffn.l1.W + block.ffn.l1.b
            np.maximum(hidden, 0.0, out=hidden)
            x = x + hidden @ block.ffn.l2.W + block.ffn.l2.b
        x = _ln(x, m.final_ln.g, m.final_ln.b)
        return x @ m.out.W + m.out.b


@dataclass
class DecodeResult:
    tokens: list
    truncated: bool


def _pick_nucleus(logits, top_p, rng):
    probs = _softmax(logits.astype(np.float64))
    order = np.argsort(-probs, kind="stable")
    sorted_probs = probs[order]
    cum = np.cumsum(sorted_probs)
    cutoff = int(np.searchsorted(cum, top_p)) + 1
    kept = order[:cutoff]
    kept_probs = sorted_probs[:cutoff]
    kept_probs = kept_probs / kept_probs.sum()
    r = rng.random()
    pick = int(np.searchsorted(np.cumsum(kept_probs), r))
    return int(kept[min(pick, cutoff - 1)])


def decode(
    model: SceneModel,
    features: EncoderFeatures,
    strategy: str = "greedy",
    top_p: float = 0.9,
    seed: int = 0,
    constrained: bool = False,
    max_len: int | None = None,
) -> DecodeResult:
    """Generate a token sequence from START until STOP or the length cap.

    Greedy takes the argmax (ties resolve to the lowest token id); nucleus
    samples from the smallest probability mass >= top_p after
    renormalization.  Constrained mode suppresses grammar-invalid tokens, so
    the output always detokenizes strictly.
    """
    if strategy not in ("greedy", "nucleus"):
        raise ValueError(f"unknown strategy '{strategy}'")
    max_len = min(max_len or model.config.max_seq, model.config.max_seq)
    rng = np.random.default_rng(seed)
    session = DecodeSession(model, features)
    out = [tok.START]
    cursor = tok.GrammarCursor().advance(tok.START)
    truncated = False
    while True:
        logits = session.step(out[-1], len(out) - 1)
        if constrained:
            mask = cursor.mask(max_len)[: len(logits)]
            logits = np.where(mask, logits, -np.inf)
        if strategy == "greedy":
            nxt = int(np.argmax(logits))
        else:
            nxt = _pick_nucleus(logits, top_p, rng)
        out.append(nxt)
        if constrained:
            cursor.advance(nxt)
        if nxt == tok.STOP:
            break
        if len(out) >= max_len:
            truncated = out[-1] != tok.STOP
            break
    return DecodeResult(out, truncated)


def predict_scene(
    model: SceneModel,
    points,
    strategy: str = "greedy",
    top_p: float = 0.9,
    seed: int = 0,
    constrained: bool = True,
    resolution: float | None = None,
    max_len: int | None = None,
):
    """Point cloud -> scene program, in the cloud's original frame.

    The cloud is shifted so its minimum corner is the origin before
    encoding; the decoded program is shifted back.  Returns
    (program, DecodeResult, skipped_command_count).
    """
    from .. import lang  # local import to keep module load light

    points = np.asarray(points, dtype=np.float64)
    res = resolution if resolution is not None else model.config.voxel_resolution
    origin = np.floor(points.min(axis=0) / res) * res
    features = model.encode_point_cloud(points - origin)
    result = decode(
        model, features, strategy=strategy, top_p=top_p, seed=seed,
        constrained=constrained, max_len=max_len,
    )
    if constrained and not result.truncated:
        program = tok.detokenize(result.tokens, res)
        skipped = 0
    else:
        program, skipped = tok.detokenize_lenient(result.tokens, res)
    return lang.translate(program, origin), result, skipped
