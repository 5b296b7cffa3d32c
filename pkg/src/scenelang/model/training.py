"""Training loop: next-token cross-entropy with teacher forcing.

Batches pair a degraded point cloud with the token encoding of its scene.
Both halves of a pair share one coordinate frame per step: after the
augmentation rotation, the scene and cloud are translated so their joint
minimum corner sits at the origin, matching the frame the decoder sees at
inference time.

Augmentations follow the usual recipe for gravity-aligned scenes: a random
rotation about the vertical axis (applied identically to cloud and target
program) and random subsampling of the cloud.

Everything downstream of (seed, configs, manifest) is deterministic,
including checkpoint bytes.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import generate, lang, tokens
from ..errors import NonFiniteLoss
from .config import ModelConfig, TrainConfig
from .network import SceneModel, cross_entropy_next_token, point_cloud_stats, STAT_DIM

CHECKPOINT_VERSION = 1


class AdamW:
    """Adam with decoupled weight decay; moments keyed by parameter name."""

    def __init__(self, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    @staticmethod
    def decays(name):
        # matrices only; embeddings, biases, and norm gains are not decayed
        return name.endswith(".W") and not name.startswith("emb")

    def step(self, named_params, lr_scale=1.0):
        self.t += 1
        lr = self.lr * lr_scale
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p, g in named_params:
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            if self.weight_decay and self.decays(name):
                p -= lr * self.weight_decay * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _lr_scale(step, total_steps, train_config):
    scale = min(1.0, (step + 1) / max(1, train_config.warmup_steps))
    if train_config.lr_schedule == "cosine":
        span = max(1, total_steps - train_config.warmup_steps)
        progress = min(1.0, max(0.0, (step - train_config.warmup_steps) / span))
        floor = 0.05
        scale *= floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
    elif train_config.lr_schedule != "constant":
        raise ValueError(f"unknown lr_schedule '{train_config.lr_schedule}'")
    return scale


def clip_gradients(named_params, max_norm):
    total = 0.0
    grads = []
    for _, _, g in named_params:
        total += float((g * g).sum())
        grads.append(g)
    norm = math.sqrt(total)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass
class SceneRecord:
    stem: str
    program: lang.SceneProgram
    points: np.ndarray


@dataclass
class TrainState:
    model: SceneModel
    optimizer: AdamW
    train_config: TrainConfig
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)
    rng: np.random.Generator | None = None


def load_records(data_dir, split, max_points, seed) -> list[SceneRecord]:
    """Load (program, cloud) pairs of one split; clouds are deterministically
    subsampled to ``max_points`` at load time."""
    data_dir = Path(data_dir)
    manifest = generate.load_manifest(data_dir)
    records = []
    for entry in manifest["scenes"]:
        if entry["split"] != split:
            continue
        stem = entry["stem"]
        program = lang.parse_scene_text((data_dir / f"{stem}.scene").read_text())
        points = generate.read_xyz(data_dir / f"{stem}.xyz")
        if len(points) > max_points:
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, entry["index"], 2])
            )
            keep = np.sort(rng.choice(len(points), max_points, replace=False))
            points = points[keep]
        records.append(SceneRecord(stem, program, points))
    return records


def _rotation(theta):
    c, s = math.cos(math.radians(theta)), math.sin(math.radians(theta))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def prepare_example(record: SceneRecord, config: ModelConfig, theta=0.0, keep=None):
    """One (stats, cells, token sequence) pair in a shared normalized frame.

    The shared origin snaps down to the resolution grid so that on-grid
    scene coordinates survive the translate/quantize round trip exactly.
    """
    program = record.program
    points = record.points
    if theta:
        program = lang.apply_z_rotation(program, theta)
        points = points @ _rotation(theta).T
    if keep is not None:
        points = points[keep]
    res = program.resolution
    origin = np.minimum(points.min(axis=0), np.array(lang.world_minimum(program)))
    origin = np.floor(origin / res) * res
    seq = tokens.tokenize(program, origin=origin)
    stats, cells = point_cloud_stats(points - origin, config)
    return stats, cells, seq


def make_batch(examples, config: ModelConfig, dtype):
    """Pad a list of (stats, cells, seq) into dense batch arrays."""
    b = len(examples)
    kmax = max(len(st) for st, _, _ in examples)
    tmax = max(len(sq) for _, _, sq in examples)
    stats = np.zeros((b, kmax, STAT_DIM), dtype=dtype)
    stats_mask = np.zeros((b, kmax), dtype=bool)
    toks = np.full((b, tmax), tokens.PAD, dtype=np.int64)
    for i, (st, _, sq) in enumerate(examples):
        stats[i, : len(st)] = st
        stats_mask[i, : len(st)] = True
        toks[i, : len(sq)] = sq
    inputs = toks[:, :-1]
    targets = toks[:, 1:]
    mask = targets != tokens.PAD
    return stats, stats_mask, inputs, targets, mask


def _epoch_loss(model, records, config, train_config):
    """Deterministic evaluation loss (no augmentation, no dropout)."""
    if not records:
        return None
    total, count = 0.0, 0
    bs = train_config.batch_size
    limit = train_config.val_batch_limit * bs
    for lo in range(0, min(len(records), limit), bs):
        chunk = records[lo : lo + bs]
        examples = [prepare_example(r, config) for r in chunk]
        stats, stats_mask, inputs, targets, mask = make_batch(
            examples, config, model.dtype
        )
        logits = model.forward(inputs, stats, stats_mask)
        loss, _ = cross_entropy_next_token(logits, targets, mask)
        n = int(mask.sum())
        total += loss * n
        count += n
    return total / count if count else None


def train(
    data_dir,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    seed: int = 0,
    out_dir=None,
    callback=None,
) -> TrainState:
    """Train on the manifest's train split; returns the final state.

    ``callback(state, epoch, train_loss, val_loss)`` runs after each epoch.
    With ``out_dir`` set, writes ``checkpoint.npz`` and ``loss_curve.csv``.
    """
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    model = SceneModel(model_config, seed)
    optimizer = AdamW(train_config.learning_rate, train_config.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    train_records = load_records(data_dir, "train", train_config.max_points, seed)
    val_records = load_records(data_dir, "val", train_config.max_points, seed)
    if not train_records:
        raise ValueError(f"no training scenes found under {data_dir}")
    state = TrainState(model, optimizer, train_config, rng=rng)
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    steps_per_epoch = math.ceil(len(train_records) / train_config.batch_size)
    total_steps = max(1, train_config.epochs * steps_per_epoch)
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(train_records))
        epoch_total, epoch_count = 0.0, 0
        for lo in range(0, len(order), train_config.batch_size):
            batch_idx = order[lo : lo + train_config.batch_size]
            examples = []
            for i in batch_idx:
                record = train_records[i]
                theta = float(rng.uniform(0.0, 360.0)) if train_config.rotate_augment else 0.0
                keep = None
                if train_config.subsample_augment and len(record.points) > 64:
                    frac = rng.uniform(0.7, 1.0)
                    k = max(64, int(frac * len(record.points)))
                    keep = np.sort(rng.choice(len(record.points), k, replace=False))
                examples.append(prepare_example(record, model_config, theta, keep))
            stats, stats_mask, inputs, targets, mask = make_batch(
                examples, model_config, model.dtype
            )
            model.zero_grad()
            logits = model.forward(
                inputs, stats, stats_mask, rng=dropout_rng, training=True
            )
            loss, dlogits = cross_entropy_next_token(logits, targets, mask)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at step {state.step}")
            model.backward(dlogits)
            clip_gradients(list(model.params()), train_config.grad_clip)
            lr_scale = _lr_scale(state.step, total_steps, train_config)
            optimizer.step(model.params(), lr_scale=lr_scale)
            state.step += 1
            n = int(mask.sum())
            epoch_total += loss * n
            epoch_count += n
        train_loss = epoch_total / max(1, epoch_count)
        val_loss = _epoch_loss(model, val_records, model_config, train_config)
        state.epoch = epoch + 1
        state.history.append(
            {"epoch": state.epoch, "step": state.step,
             "train_loss": train_loss, "val_loss": val_loss}
        )
        if callback is not None:
            callback(state, state.epoch, train_loss, val_loss)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            out / train_config.checkpoint_name,
            model,
            {"train_config": train_config.to_dict(), "seed": seed,
             "step": state.step},
        )
        write_loss_curve(out / "loss_curve.csv", state.history)
    return state


def write_loss_curve(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,step,train_loss,val_loss\n")
        for row in history:
            val = "" if row["val_loss"] is None else f"{row['val_loss']:.6f}"
            fh.write(f"{row['epoch']},{row['step']},{row['train_loss']:.6f},{val}\n")


# ---------------------------------------------------------------------------
# checkpoints (np.load-compatible zip with fixed timestamps, so identical
# training runs produce byte-identical files)

def save_checkpoint(path, model: SceneModel, extra=None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
    }
    if extra:
        meta.update(extra)
    entries = {"__meta__": np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    ).copy()}
    for name, value, _ in model.params():
        entries[f"param::{name}"] = value
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in entries.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path) -> tuple[SceneModel, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        config = ModelConfig.from_dict(meta["model_config"])
        model = SceneModel(config, seed=0)
        for name, value, _ in model.params():
            value[...] = data[f"param::{name}"]
    return model, meta
