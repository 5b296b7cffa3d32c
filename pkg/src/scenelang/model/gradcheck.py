"""Finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from .config import ModelConfig, TINY
from .network import SceneModel, cross_entropy_next_token, STAT_DIM


def gradient_check(
    config: ModelConfig | None = None,
    seed: int = 0,
    samples_per_param: int = 8,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples up to ``samples_per_param`` entries from every parameter array
    (all entries for small arrays).  Run at float64 for meaningful bounds.
    """
    config = config or TINY
    model = SceneModel(config, seed)
    rng = np.random.default_rng(seed + 1)
    b, t, k = 2, min(6, config.max_seq - 1), 3
    stats = rng.normal(0.0, 0.5, (b, k, STAT_DIM))
    stats_mask = np.ones((b, k), dtype=bool)
    stats_mask[-1, -1] = False
    toks = rng.integers(0, config.vocab_size, (b, t + 1))
    inputs, targets = toks[:, :-1], toks[:, 1:]
    mask = np.ones((b, t), dtype=bool)
    mask[-1, -1] = False

    def loss_only():
        logits = model.forward(inputs, stats, stats_mask)
        loss, _ = cross_entropy_next_token(logits, targets, mask)
        return loss

    model.zero_grad()
    logits = model.forward(inputs, stats, stats_mask)
    _, dlogits = cross_entropy_next_token(logits, targets, mask)
    model.backward(dlogits)
    analytic = {name: grad.copy() for name, _, grad in model.params()}

    worst = 0.0
    pick_rng = np.random.default_rng(seed + 2)
    for name, value, _ in model.params():
        size = value.size
        idx = (
            np.arange(size)
            if size <= samples_per_param
            else np.sort(pick_rng.choice(size, samples_per_param, replace=False))
        )
        for i in idx:
            orig = value.flat[i]
            value.flat[i] = orig + step
            lp = loss_only()
            value.flat[i] = orig - step
            lm = loss_only()
            value.flat[i] = orig
            numeric = (lp - lm) / (2.0 * step)
            ana = analytic[name].flat[i]
            err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-5)
            worst = max(worst, float(err))
    return worst
