"""Acceptance suite: one test per release criterion, slow runs last.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL
line per criterion with its measured value.
"""

import itertools
import math
import time

import numpy as np
import pytest

from scenelang import generate, geom, lang, metrics, tokens
from scenelang import model as M
import scenelang.model.training as train_mod

from helpers import brute_force_bottleneck, random_quad

DESK_MODEL = M.ModelConfig()  # d_model=128, 2 layers, 4 heads

SINGLE_ROOM = generate.GenConfig(
    room_count=(1, 1), boxes_per_room=(0, 2), prims=False,
    curved_wall_prob=0.0, wall_prim_prob=0.0, windows_per_room=(0, 2),
    max_points=4000,
)

MIXED = generate.GenConfig(room_count=(1, 3), boxes_per_room=(0, 3))


def _report(criterion, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    print(line, flush=True)
    assert passed, line


# ---------------------------------------------------------------------------
# 1. tokenizer bijection over 10,000 generated scenes

def test_c01_tokenizer_bijection():
    start = time.time()
    failures = 0
    for seed in range(10_000):
        program = generate.generate_scene(MIXED, seed)
        seq = tokens.tokenize(program)
        if tokens.detokenize(seq, program.resolution) != lang.quantize_scene(
            lang.normalize_origin(program)
        ):
            failures += 1
    elapsed = time.time() - start
    _report(
        1,
        failures == 0 and elapsed < 120.0,
        f"10,000 scenes, {failures} round-trip failures, {elapsed:.1f}s (< 120s)",
    )


# ---------------------------------------------------------------------------
# 2. entity distance equals the 4!-permutation brute force

def test_c02_entity_distance_oracle():
    rng = np.random.default_rng(2)
    start = time.time()
    mismatches = 0
    for _ in range(1000):
        e1, e2 = random_quad(rng), random_quad(rng)
        if metrics.entity_distance(e1, e2) != brute_force_bottleneck(
            e1.corners, e2.corners
        ):
            mismatches += 1
    elapsed = time.time() - start
    _report(
        2,
        mismatches == 0 and elapsed < 10.0,
        f"1000 pairs, {mismatches} mismatches vs brute force, {elapsed:.1f}s (< 10s)",
    )


# ---------------------------------------------------------------------------
# 3. oriented-box IoU vs Monte-Carlo and closed forms

def _mc_iou(a, b, n, rng):
    # half-diagonal bound covers any yaw of either box
    ra = np.linalg.norm(a.extents) / 2.0
    rb = np.linalg.norm(b.extents) / 2.0
    lo = np.minimum(a.center - ra, b.center - rb)
    hi = np.maximum(a.center + ra, b.center + rb)
    pts = rng.uniform(lo, hi, (n, 3))

    def inside(box):
        c = math.cos(math.radians(box.yaw))
        s = math.sin(math.radians(box.yaw))
        d = pts - box.center
        local = np.stack(
            [c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1
        )
        return (np.abs(local) <= box.extents / 2).all(axis=1)

    in_a, in_b = inside(a), inside(b)
    union = np.logical_or(in_a, in_b).sum()
    return float(np.logical_and(in_a, in_b).sum() / union) if union else 0.0


def test_c03_obb_iou_oracle():
    rng = np.random.default_rng(3)
    start = time.time()

    def box(center, yaw, extents):
        return geom.OrientedBox(np.array(center, float), yaw, np.array(extents, float), 0)

    unit = box([0, 0, 0], 0.0, [1, 1, 1])
    exact_ok = (
        abs(metrics.obb_iou(unit, unit) - 1.0) < 1e-9
        and abs(metrics.obb_iou(unit, box([0.5, 0, 0], 0.0, [1, 1, 1])) - 1 / 3) < 1e-9
        and abs(metrics.obb_iou(unit, box([0, 0, 0], 45.0, [1, 1, 1])) - 1 / math.sqrt(2)) < 1e-6
    )
    worst = 0.0
    for _ in range(100):
        a = box(rng.uniform(-0.5, 0.5, 3), float(rng.uniform(0, 360)), rng.uniform(0.4, 1.5, 3))
        b = box(rng.uniform(-0.5, 0.5, 3), float(rng.uniform(0, 360)), rng.uniform(0.4, 1.5, 3))
        worst = max(worst, abs(metrics.obb_iou(a, b) - _mc_iou(a, b, 1_000_000, rng)))
    elapsed = time.time() - start
    _report(
        3,
        exact_ok and worst < 0.005 and elapsed < 120.0,
        f"closed forms ok={exact_ok}, max |IoU - MC(1e6)| = {worst:.5f} (< 0.005), "
        f"{elapsed:.1f}s (< 120s)",
    )


# ---------------------------------------------------------------------------
# 4. metric order invariance across scene shuffles

def test_c04_metric_order_invariance():
    rng = np.random.default_rng(4)
    layout_reports = []
    det_reports = []
    for seed in range(24):
        program = generate.generate_scene(MIXED, 10_000 + seed)
        g = geom.interpret_scene(program)
        noisy = lang.apply_z_rotation(program, float(rng.uniform(0, 3)))
        gn = geom.interpret_scene(noisy)
        drop = max(0, len(gn.layout_entities) - int(rng.integers(0, 3)))
        layout_reports.append(
            metrics.evaluate_layout(gn.layout_entities[:drop], g.layout_entities)
        )
        det_reports.append(metrics.detection_f1(gn.boxes, g.boxes, (0.25, 0.5)))
    base_layout = metrics.aggregate_layout(layout_reports).to_dict()
    base_det = metrics.aggregate_detection(det_reports).to_dict()
    stable = True
    for shuffle in range(10):
        perm = np.random.default_rng(shuffle).permutation(len(layout_reports))
        got_layout = metrics.aggregate_layout([layout_reports[i] for i in perm]).to_dict()
        got_det = metrics.aggregate_detection([det_reports[i] for i in perm]).to_dict()
        if (
            got_layout["mean_avg_f1"] != base_layout["mean_avg_f1"]
            or got_layout["mean_f1_per_threshold"] != base_layout["mean_f1_per_threshold"]
            or got_det["mean_f1"] != base_det["mean_f1"]
        ):
            stable = False
    _report(4, stable, "layout + detection F1 bit-identical under 10 scene shuffles")


# ---------------------------------------------------------------------------
# 5. geometry checks

def test_c05_geometry_checks():
    # straight-line Bezier twin of a planar wall
    wall = lang.WallCmd(0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 2.5)
    curved = lang.CurvedWallCmd(0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.5, 0.0)
    wall_mesh = geom.interpret_scene(lang.SceneProgram((wall,))).meshes["wall_0"]
    bez = geom.tessellate_curved_wall(curved, segments=16)
    wall_quad = geom.wall_corners(wall).corners
    ends = bez.vertices[[0, 16, 2 * 16 + 1, 17]]
    corner_dev = max(
        min(float(np.linalg.norm(e - c)) for c in wall_quad) for e in ends
    )
    iou = metrics.voxel_geometry_iou([wall_mesh], [bez], 0.05)

    # area bookkeeping over generated scenes
    area_ok = True
    cfg = generate.GenConfig(curved_wall_prob=0.0, prims=False, wall_prim_prob=0.0)
    for seed in range(10):
        program = generate.generate_scene(cfg, seed)
        g = geom.interpret_scene(program)
        walls = program.wall_by_id()
        openings = {wid: 0.0 for wid in walls}
        for cmd in program.commands:
            if isinstance(cmd, (lang.DoorCmd, lang.WindowCmd)):
                openings[cmd.wall0_id] += cmd.width * cmd.height
        for wid, w in walls.items():
            length = math.hypot(w.b_x - w.a_x, w.b_y - w.a_y)
            if abs(g.meshes[f"wall_{wid}"].area() - (length * w.height - openings[wid])) > 1e-6:
                area_ok = False

    # interpret commutes with rotation
    rng = np.random.default_rng(5)
    commute_dev = 0.0
    for seed in range(10):
        program = generate.generate_scene(MIXED, 20_000 + seed)
        theta = float(rng.uniform(0, 360))
        pivot = tuple(rng.uniform(-2, 2, 2))
        g1 = geom.rotate_geometry(geom.interpret_scene(program), theta, pivot)
        g2 = geom.interpret_scene(lang.apply_z_rotation(program, theta, pivot))
        for name in g1.meshes:
            commute_dev = max(
                commute_dev,
                float(np.abs(g1.meshes[name].vertices - g2.meshes[name].vertices).max()),
            )
        for e1, e2 in zip(g1.layout_entities, g2.layout_entities):
            commute_dev = max(commute_dev, float(np.abs(e1.corners - e2.corners).max()))
    _report(
        5,
        corner_dev < 1e-6 and iou >= 0.99 and area_ok and commute_dev < 1e-9,
        f"bezier twin corner dev {corner_dev:.2e} (< 1e-6), voxel IoU {iou:.3f} (>= 0.99), "
        f"area bookkeeping ok={area_ok}, rotate-commute dev {commute_dev:.2e} (< 1e-9)",
    )


# ---------------------------------------------------------------------------
# 6. gradient check

def test_c06_gradient_check():
    start = time.time()
    err = M.gradient_check(seed=0)
    elapsed = time.time() - start
    _report(
        6,
        err < 1e-4 and elapsed < 60.0,
        f"max relative gradient error {err:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)",
    )


# ---------------------------------------------------------------------------
# 7/8/9/10 share trained models; fixtures keep the heavy work single-run

@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    """Default desk model memorizing 32 single-room scenes (criterion 7)."""
    data_dir = tmp_path_factory.mktemp("overfit_data")
    n = 38  # exactly 32 scenes hash into the train split
    generate.generate_dataset(SINGLE_ROOM, n, 21, data_dir)
    tc = M.TrainConfig(
        batch_size=8, epochs=600, warmup_steps=50, learning_rate=1e-3,
        lr_schedule="cosine", rotate_augment=False, subsample_augment=False,
        max_points=3000, val_batch_limit=1,
    )
    start = time.time()
    state = M.train(data_dir, DESK_MODEL, tc, seed=2)
    return {
        "data_dir": data_dir,
        "state": state,
        "train_seconds": time.time() - start,
    }


def test_c07_overfit_demonstration(overfit_run):
    state = overfit_run["state"]
    records = M.load_records(overfit_run["data_dir"], "train", 3000, 2)
    assert len(records) == 32
    accs, f1s = [], []
    for record in records:
        stats, cells, seq = train_mod.prepare_example(record, DESK_MODEL)
        feats = M.EncoderFeatures(state.model.encode_stats(stats[None])[0], cells)
        rollout = M.decode(state.model, feats, constrained=True, max_len=384)
        accs.append(tokens.token_accuracy_slack(rollout.tokens, seq, 0))
        program, _, _ = M.predict_scene(
            state.model, record.points, constrained=True, max_len=384
        )
        pred_entities, _ = geom.layout_entities_lenient(program)
        gt_entities = geom.interpret_scene(record.program).layout_entities
        f1s.append(metrics.evaluate_layout(pred_entities, gt_entities).mean_avg_f1)
    acc = float(np.mean(accs))
    f1 = float(np.mean(f1s))
    minutes = overfit_run["train_seconds"] / 60.0
    loss_tail = [h["train_loss"] for h in state.history]
    # loss decreases after warmup, allowing plateaus of <= 5 epochs, checked
    # down to a 0.1 nats/token convergence floor (~90% per-token probability);
    # below that the curve sits in optimizer noise and the accuracy/F1 gates
    # above carry the criterion
    warm = loss_tail[5:]
    floor = 0.1
    plateau_ok = all(
        min(warm[i + 1 : i + 6]) <= max(warm[i], floor)
        for i in range(len(warm) - 6)
    )
    _report(
        7,
        acc >= 0.95 and f1 >= 0.9 and minutes < 30.0 and plateau_ok,
        f"32-scene overfit: slack-0 token accuracy {acc:.4f} (>= 0.95), "
        f"mean average F1 {f1:.4f} (>= 0.9), train {minutes:.1f} min (< 30), "
        f"monotone-after-warmup={plateau_ok}",
    )


@pytest.fixture(scope="module")
def generalization_run(tmp_path_factory):
    """2000-train-scene run with held-out F1 logged at three checkpoints."""
    data_dir = tmp_path_factory.mktemp("gen_data")
    n = 2495  # exactly 2000 scenes hash into the train split
    generate.generate_dataset(SINGLE_ROOM, n, 5, data_dir)
    heldout = M.load_records(data_dir, "test", 4000, 5)[:100]

    def heldout_f1_at_50cm(model):
        scores = []
        for record in heldout:
            program, _, _ = M.predict_scene(
                model, record.points, constrained=True, max_len=384
            )
            pred, _ = geom.layout_entities_lenient(program)
            gt = geom.interpret_scene(record.program).layout_entities
            scores.append(
                metrics.evaluate_layout(pred, gt, thresholds=(0.5,)).mean_f1_per_threshold[0]
            )
        return float(np.mean(scores))

    untrained = heldout_f1_at_50cm(M.SceneModel(DESK_MODEL, seed=1))
    checkpoints = []

    def callback(state, epoch, train_loss, val_loss):
        if epoch in (3, 6, 12):
            checkpoints.append((epoch, heldout_f1_at_50cm(state.model)))

    tc = M.TrainConfig(
        batch_size=8, epochs=12, warmup_steps=100, learning_rate=2e-3,
        lr_schedule="cosine", rotate_augment=False, subsample_augment=True,
        max_points=3000, val_batch_limit=4,
    )
    state = M.train(data_dir, DESK_MODEL, tc, seed=1, callback=callback)
    return {
        "untrained": untrained,
        "checkpoints": checkpoints,
        "state": state,
        "heldout": len(heldout),
    }


def test_c08_generalization_smoke(generalization_run):
    untrained = generalization_run["untrained"]
    checkpoints = generalization_run["checkpoints"]
    scores = [f1 for _, f1 in checkpoints]
    final = scores[-1]
    monotone = all(a < b for a, b in zip(scores, scores[1:]))
    _report(
        8,
        len(scores) >= 3 and final > untrained and final > 0.0 and monotone,
        f"held-out F1@50cm over {generalization_run['heldout']} scenes: untrained "
        f"{untrained:.4f}, checkpoints {[(e, round(f, 4)) for e, f in checkpoints]}, "
        f"strictly improving={monotone}",
    )


def test_c09_constrained_decoding_safety(overfit_run):
    state = overfit_run["state"]
    records = M.load_records(overfit_run["data_dir"], "train", 3000, 2)
    failures = 0
    total = 0
    # 900 rollouts from randomly initialized models
    rng = np.random.default_rng(9)
    for seed in range(90):
        model = M.SceneModel(
            M.ModelConfig(d_model=32, n_layers=1, n_heads=2, d_ff=64,
                          vocab_size=2048, max_seq=2048),
            seed,
        )
        stats = rng.normal(0.0, 0.5, (1, 4, 10)).astype(model.dtype)
        feats = M.EncoderFeatures(model.encode_stats(stats)[0], np.zeros((4, 3), int))
        for k in range(10):
            rollout = M.decode(
                model, feats, strategy="nucleus", top_p=0.98,
                seed=seed * 10 + k, constrained=True, max_len=512,
            )
            total += 1
            try:
                tokens.detokenize(rollout.tokens)
            except Exception:
                failures += 1
    # 100 rollouts from the trained model
    for k in range(100):
        record = records[k % len(records)]
        stats, cells, _ = train_mod.prepare_example(record, DESK_MODEL)
        feats = M.EncoderFeatures(state.model.encode_stats(stats[None])[0], cells)
        rollout = M.decode(
            state.model, feats, strategy="nucleus", top_p=0.95, seed=k,
            constrained=True, max_len=512,
        )
        total += 1
        try:
            tokens.detokenize(rollout.tokens)
        except Exception:
            failures += 1
    _report(
        9,
        total == 1000 and failures == 0,
        f"{total} constrained rollouts, {failures} strict detokenize failures",
    )


def test_c10_determinism(tmp_path):
    cfg = generate.GenConfig(
        room_count=(1, 1), boxes_per_room=(0, 1), prims=False,
        curved_wall_prob=0.0, wall_prim_prob=0.0, max_points=800,
        point_density=60.0,
    )
    same = True
    # gen twice
    generate.generate_dataset(cfg, 3, 17, tmp_path / "g1")
    generate.generate_dataset(cfg, 3, 17, tmp_path / "g2")
    for p in sorted((tmp_path / "g1").iterdir()):
        if (tmp_path / "g2" / p.name).read_bytes() != p.read_bytes():
            same = False
    # train twice
    small = M.ModelConfig(d_model=32, n_layers=1, n_heads=2, d_ff=64,
                          vocab_size=2048, max_seq=256)
    tc = M.TrainConfig(batch_size=4, epochs=3, warmup_steps=2, max_points=512)
    M.train(tmp_path / "g1", small, tc, seed=11, out_dir=tmp_path / "t1")
    M.train(tmp_path / "g1", small, tc, seed=11, out_dir=tmp_path / "t2")
    for name in ("checkpoint.npz", "loss_curve.csv"):
        if (tmp_path / "t1" / name).read_bytes() != (tmp_path / "t2" / name).read_bytes():
            same = False
    # infer twice
    from scenelang.cli import main as cli_main

    ok = True
    for tag in ("i1", "i2"):
        rc = cli_main([
            "infer", "--ckpt", str(tmp_path / "t1" / "checkpoint.npz"),
            "--cloud", str(tmp_path / "g1" / "scene_000000.xyz"),
            "--top-p", "0.9", "--constrained", "--seed", "3",
            "--out", str(tmp_path / f"{tag}.scene"),
        ])
        ok = ok and rc == 0
    if not ok or (tmp_path / "i1.scene").read_bytes() != (tmp_path / "i2.scene").read_bytes():
        same = False
    # eval twice
    ok = True
    for tag in ("e1", "e2"):
        rc = cli_main([
            "eval-layout", str(tmp_path / "g1"), str(tmp_path / "g1"),
            "--out", str(tmp_path / f"{tag}.json"),
        ])
        ok = ok and rc == 0
    if not ok or (tmp_path / "e1.json").read_bytes() != (tmp_path / "e2.json").read_bytes():
        same = False
    _report(10, same, "gen, train, infer, eval byte-identical across two seeded runs")
