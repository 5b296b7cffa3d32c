"""Shared test utilities: random command/program builders and small oracles."""

import itertools
import math

import numpy as np

from scenelang import lang


def random_wall(rng, wall_id):
    ax, ay = rng.uniform(-10, 10, 2)
    angle = rng.uniform(0, 2 * np.pi)
    length = rng.uniform(0.5, 8.0)
    az = rng.uniform(-1, 1)
    return lang.WallCmd(
        wall_id,
        float(ax), float(ay), float(az),
        float(ax + length * np.cos(angle)), float(ay + length * np.sin(angle)),
        float(az),
        float(rng.uniform(2.0, 3.5)),
    )


def random_opening(rng, cls, opening_id, wall):
    length = math.hypot(wall.b_x - wall.a_x, wall.b_y - wall.a_y)
    width = float(rng.uniform(0.1, min(1.2, length * 0.5)))
    height = float(rng.uniform(0.3, wall.height * 0.6))
    u = float(rng.uniform(width / 2, length - width / 2))
    dx = (wall.b_x - wall.a_x) / length
    dy = (wall.b_y - wall.a_y) / length
    zc = float(rng.uniform(height / 2, wall.height - height / 2))
    base = dict(
        id=opening_id,
        wall0_id=wall.id,
        wall1_id=wall.id,
        position_x=wall.a_x + dx * u,
        position_y=wall.a_y + dy * u,
        position_z=wall.a_z + zc,
        width=width,
        height=height,
    )
    if cls is lang.DoorCmd and rng.random() < 0.5:
        base["open_degree"] = float(rng.integers(0, 181))
        base["hinge_side"] = int(rng.integers(2))
        base["open_direction"] = int(rng.integers(2))
    return cls(**base)


def random_bbox(rng, bbox_id):
    return lang.BboxCmd(
        bbox_id,
        int(rng.integers(0, 12)),
        *(float(v) for v in rng.uniform(-8, 8, 2)),
        float(rng.uniform(0.2, 1.5)),
        float(rng.integers(0, 360)),
        *(float(v) for v in rng.uniform(0.2, 2.0, 3)),
    )


def random_prim(rng, bbox, prim_num):
    return lang.PrimCmd(
        bbox.id,
        prim_num,
        int(rng.integers(2)),
        float(bbox.position_x + rng.uniform(-0.2, 0.2)),
        float(bbox.position_y + rng.uniform(-0.2, 0.2)),
        float(bbox.position_z + rng.uniform(-0.2, 0.2)),
        float(rng.integers(0, 360)),
        float(rng.integers(0, 360)),
        float(rng.integers(0, 360)),
        *(float(v) for v in rng.uniform(0.1, 0.8, 3)),
    )


def random_curved_wall(rng):
    ax, ay = rng.uniform(-8, 8, 2)
    bx, by = ax + rng.uniform(1, 6), ay + rng.uniform(-2, 2)
    return lang.CurvedWallCmd(
        float(ax), float(ay), 0.0, float(bx), float(by), 0.0,
        float(ax + rng.uniform(0, 2)), float(ay + rng.uniform(-1, 1)),
        float(bx - rng.uniform(0, 2)), float(by + rng.uniform(-1, 1)),
        float(rng.uniform(2.0, 3.0)),
        float(rng.choice([0.0, 0.1, 0.2])),
    )


def random_wall_prim(rng, wall):
    length = math.hypot(wall.b_x - wall.a_x, wall.b_y - wall.a_y)
    sx = float(rng.uniform(0.1, min(0.5, length / 2)))
    sz = float(rng.uniform(0.1, wall.height / 2))
    return lang.WallPrimCmd(
        wall.id,
        float(rng.uniform(sx / 2, length - sx / 2)),
        float(rng.uniform(0.05, 0.2)),
        float(rng.uniform(sz / 2, wall.height - sz / 2)),
        sx,
        float(rng.uniform(0.05, 0.3)),
        sz,
    )


def random_program(rng, with_extensions=True) -> lang.SceneProgram:
    """A random valid program covering every command kind."""
    commands = []
    walls = [random_wall(rng, i) for i in range(int(rng.integers(1, 5)))]
    commands.extend(walls)
    next_id = {"door": 0, "window": 0}
    for _ in range(int(rng.integers(0, 3))):
        wall = walls[int(rng.integers(len(walls)))]
        cls, key = (
            (lang.DoorCmd, "door") if rng.random() < 0.5 else (lang.WindowCmd, "window")
        )
        commands.append(random_opening(rng, cls, next_id[key], wall))
        next_id[key] += 1
    boxes = [random_bbox(rng, i) for i in range(int(rng.integers(0, 3)))]
    commands.extend(boxes)
    for box in boxes:
        for k in range(int(rng.integers(0, 3))):
            commands.append(random_prim(rng, box, k))
    if with_extensions:
        if rng.random() < 0.4:
            commands.append(random_curved_wall(rng))
        if rng.random() < 0.4:
            commands.append(random_wall_prim(rng, walls[int(rng.integers(len(walls)))]))
    program = lang.SceneProgram(tuple(commands))
    assert lang.validate_scene(program) == []
    return program


def random_quad(rng, cls="wall"):
    """A random non-degenerate planar quad entity."""
    from scenelang.geom import EntityCorners

    origin = rng.uniform(-5, 5, 3)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    v = rng.normal(size=3)
    v -= u * (u @ v)
    v /= np.linalg.norm(v)
    w, h = rng.uniform(0.5, 4.0, 2)
    corners = np.stack([origin, origin + u * w, origin + u * w + v * h, origin + v * h])
    return EntityCorners(cls, corners)


def brute_force_bottleneck(c1, c2) -> float:
    """min over all corner permutations of the max corner distance."""
    best = math.inf
    dists = np.linalg.norm(c1[:, None, :] - c2[None, :, :], axis=2)
    for perm in itertools.permutations(range(4)):
        worst = max(dists[i, perm[i]] for i in range(4))
        best = min(best, worst)
    return float(best)


def point_triangle_distance(p, tri):
    """Euclidean distance from a point to a triangle."""
    a, b, c = tri
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(ap))
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        t = d1 / (d1 - d3)
        return float(np.linalg.norm(ap - t * ab))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        t = d2 / (d2 - d6)
        return float(np.linalg.norm(ap - t * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(bp - t * (c - b)))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return float(np.linalg.norm(p - (a + ab * v + ac * w)))
