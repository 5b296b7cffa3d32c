"""Procedural generation of ground-truth scenes and simulated point clouds.

Floor plans are rectilinear: rooms are placed as a strip of axis-aligned
rectangles sharing full-depth interior walls.  Doors go on interior walls
(or an exterior wall when a room has no interior neighbor), windows on
exterior walls, boxes inside rooms without footprint overlap, and primitives
inside their parent boxes.  Everything is quantized to the resolution grid
and emitted in canonical order with the scene's minimum corner at the
origin, so generated programs tokenize losslessly.

Point clouds are sampled area-uniformly on the interpreted surface meshes,
then degraded: Gaussian jitter, a fraction of uniform outliers inside an
inflated scene box, and removal of contiguous surface patches standing in
for never-visited regions.

All randomness flows from ``numpy`` generators seeded per scene, so every
output is a deterministic function of (config, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import geom, lang, tokens
from .errors import EmptyGeometry, GenerationFailed

XYZ_FORMAT = "%.6f"
OUTLIER_MARGIN = 0.25  # meters added around the scene box for outlier points


@dataclass(frozen=True)
class GenConfig:
    room_count: tuple[int, int] = (1, 3)
    room_width: tuple[float, float] = (2.5, 5.0)
    room_depth: tuple[float, float] = (2.5, 6.0)
    wall_height: tuple[float, float] = (2.4, 3.0)
    doors_per_room: tuple[int, int] = (1, 1)
    windows_per_room: tuple[int, int] = (0, 2)
    boxes_per_room: tuple[int, int] = (0, 3)
    n_classes: int = 8
    prims: bool = True
    prims_per_box: tuple[int, int] = (1, 3)
    curved_wall_prob: float = 0.15
    wall_prim_prob: float = 0.1
    door_open_fraction: float = 0.5
    point_density: float = 400.0      # points per square meter of surface
    noise_sigma: float = 0.01
    outlier_fraction: float = 0.005
    dropout_fraction: float = 0.1
    dropout_patch_radius: float = 0.4
    max_points: int = 20000
    resolution: float = lang.DEFAULT_RESOLUTION

    def validate(self):
        for name in ("room_width", "room_depth", "wall_height"):
            lo, hi = getattr(self, name)
            if lo > hi or lo <= 0:
                raise ValueError(f"invalid size range for {name}")
        for name in ("room_count", "doors_per_room", "windows_per_room",
                     "boxes_per_room", "prims_per_box"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"invalid count range for {name}")
        if self.room_count[0] < 1:
            raise ValueError("room_count must be at least 1")
        for name in ("curved_wall_prob", "wall_prim_prob", "door_open_fraction",
                     "outlier_fraction", "dropout_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.point_density <= 0 or self.max_points < 1 or self.resolution <= 0:
            raise ValueError("density, max_points and resolution must be positive")


def scene_seed(master_seed: int, index: int, stream: int = 0) -> int:
    """Independent per-scene seed derived from a splittable sequence."""
    ss = np.random.SeedSequence([master_seed, index, stream])
    return int(ss.generate_state(1, np.uint64)[0])


def _snap(x, res):
    return round(x / res) * res


def _uniform_grid(rng, lo, hi, res):
    return _snap(rng.uniform(lo, hi), res)


class _Placement:
    """Per-wall interval bookkeeping so openings never overlap."""

    def __init__(self):
        self.used = {}

    def claim(self, wall_id, u0, u1, gap=0.1):
        for (a, b) in self.used.get(wall_id, []):
            if u0 < b + gap and u1 > a - gap:
                return False
        self.used.setdefault(wall_id, []).append((u0, u1))
        return True


def _footprints_overlap(c1, yaw1, ext1, c2, yaw2, ext2, clearance=0.0):
    """Separating-axis test for two rotated rectangles in the plane."""
    def corners(c, yaw, ext):
        cs, sn = math.cos(math.radians(yaw)), math.sin(math.radians(yaw))
        hx, hy = ext[0] / 2.0 + clearance / 2.0, ext[1] / 2.0 + clearance / 2.0
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        return local @ np.array([[cs, sn], [-sn, cs]]) + c

    p1, p2 = corners(c1, yaw1, ext1), corners(c2, yaw2, ext2)
    for poly in (p1, p2):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            a1, a2 = p1 @ axis, p2 @ axis
            if a1.max() < a2.min() or a2.max() < a1.min():
                return False
    return True


def _place_opening(rng, wall, width_range, height_range, z_center_range, res, placement):
    """Pick an on-grid opening rectangle inside the wall face, or None."""
    length = math.hypot(wall.b_x - wall.a_x, wall.b_y - wall.a_y)
    margin = 4 * res
    for _ in range(16):
        width = _uniform_grid(rng, *width_range, res)
        height = _uniform_grid(rng, *height_range, res)
        if width < 2 * res or height < 2 * res:
            continue
        if width + 2 * margin > length:
            continue
        zc_lo = max(z_center_range[0], height / 2.0)
        zc_hi = min(z_center_range[1], wall.height - margin - height / 2.0)
        if zc_lo > zc_hi:
            continue
        u = _uniform_grid(rng, margin + width / 2.0, length - margin - width / 2.0, res)
        zc = _uniform_grid(rng, zc_lo, zc_hi, res)
        if zc - height / 2.0 < -1e-9 or zc + height / 2.0 > wall.height + 1e-9:
            continue
        if not placement.claim(wall.id, u - width / 2.0, u + width / 2.0):
            continue
        dx = (wall.b_x - wall.a_x) / length
        dy = (wall.b_y - wall.a_y) / length
        return {
            "position_x": _snap(wall.a_x + dx * u, res),
            "position_y": _snap(wall.a_y + dy * u, res),
            "position_z": _snap(wall.a_z + zc, res),
            "width": width,
            "height": height,
        }
    return None


def generate_scene(config: GenConfig, seed: int) -> lang.SceneProgram:
    """Generate one valid, canonical, origin-normalized scene program."""
    config.validate()
    rng = np.random.default_rng(seed)
    last_error = None
    for _ in range(8):
        try:
            program = _generate_once(config, rng)
        except GenerationFailed as exc:
            last_error = exc
            continue
        violations = lang.validate_scene(program)
        if not violations:
            return program
        last_error = GenerationFailed(f"generated program invalid: {violations[:3]}")
    raise GenerationFailed(str(last_error))


def _generate_once(config: GenConfig, rng) -> lang.SceneProgram:
    res = config.resolution
    n_rooms = int(rng.integers(config.room_count[0], config.room_count[1] + 1))
    depth = _uniform_grid(rng, *config.room_depth, res)
    height = _uniform_grid(rng, *config.wall_height, res)
    widths = [_uniform_grid(rng, *config.room_width, res) for _ in range(n_rooms)]
    xs = [0.0]
    for w in widths:
        xs.append(_snap(xs[-1] + w, res))
    total = xs[-1]

    commands: list[lang.Command] = []
    wall_id = 0

    def add_wall(ax, ay, bx, by):
        nonlocal wall_id
        commands.append(
            lang.WallCmd(wall_id, ax, ay, 0.0, bx, by, 0.0, height)
        )
        wall_id += 1
        return commands[-1]

    # boundary walls wound counter-clockwise so +normal faces the interior
    bottom = [add_wall(xs[i], 0.0, xs[i + 1], 0.0) for i in range(n_rooms)]
    right = add_wall(total, 0.0, total, depth)
    top = [add_wall(xs[i + 1], depth, xs[i], depth) for i in reversed(range(n_rooms))]
    left = add_wall(0.0, depth, 0.0, 0.0)
    interior = [add_wall(xs[i], 0.0, xs[i], depth) for i in range(1, n_rooms)]

    exterior_by_room = []
    for i in range(n_rooms):
        walls_here = [bottom[i], top[n_rooms - 1 - i]]
        if i == 0:
            walls_here.append(left)
        if i == n_rooms - 1:
            walls_here.append(right)
        exterior_by_room.append(walls_here)

    # one exterior wall may become a curved wall (never carries openings)
    curved = None
    if rng.random() < config.curved_wall_prob:
        room = int(rng.integers(n_rooms))
        candidates = [w for w in exterior_by_room[room]]
        victim = candidates[int(rng.integers(len(candidates)))]
        bulge = _snap(rng.uniform(0.2, 0.6), res)
        a = np.array([victim.a_x, victim.a_y])
        b = np.array([victim.b_x, victim.b_y])
        d = b - a
        length = np.linalg.norm(d)
        d = d / length
        outward = np.array([d[1], -d[0]])  # opposite the interior-facing normal
        c1 = a + d * (length / 3.0) + outward * bulge
        c2 = a + d * (2.0 * length / 3.0) + outward * bulge
        curved = lang.CurvedWallCmd(
            victim.a_x, victim.a_y, 0.0, victim.b_x, victim.b_y, 0.0,
            _snap(c1[0], res), _snap(c1[1], res),
            _snap(c2[0], res), _snap(c2[1], res),
            height, 0.0,
        )
        commands.remove(victim)
        commands.append(curved)
        for i in range(n_rooms):
            exterior_by_room[i] = [w for w in exterior_by_room[i] if w is not victim]

    placement = _Placement()
    door_id = 0
    window_id = 0

    def add_door(wall):
        nonlocal door_id
        spot = _place_opening(
            rng, wall, (0.7, 1.1), (1.9, min(2.2, height - 0.2)),
            (0.0, height), res, placement,
        )
        if spot is None:
            return False
        # door reaches the floor; snap to the double grid so the center stays on-grid
        spot["height"] = _snap(spot["height"], 2 * res)
        spot["position_z"] = spot["height"] / 2.0
        if rng.random() < config.door_open_fraction:
            state = {
                "open_degree": float(rng.integers(40, 121)),
                "hinge_side": int(rng.integers(2)),
                "open_direction": int(rng.integers(2)),
            }
        else:
            state = {}
        commands.append(lang.DoorCmd(door_id, wall.id, wall.id, **spot, **state))
        door_id += 1
        return True

    for wall in interior:
        add_door(wall)
    if not interior:
        n_doors = int(rng.integers(config.doors_per_room[0], config.doors_per_room[1] + 1))
        for _ in range(n_doors):
            candidates = exterior_by_room[0]
            if candidates:
                add_door(candidates[int(rng.integers(len(candidates)))])

    for room in range(n_rooms):
        n_windows = int(
            rng.integers(config.windows_per_room[0], config.windows_per_room[1] + 1)
        )
        for _ in range(n_windows):
            candidates = exterior_by_room[room]
            if not candidates:
                break
            wall = candidates[int(rng.integers(len(candidates)))]
            spot = _place_opening(
                rng, wall, (0.6, 1.4), (0.8, 1.5), (1.2, 1.7), res, placement
            )
            if spot is None:
                continue
            commands.append(lang.WindowCmd(window_id, wall.id, wall.id, **spot))
            window_id += 1

    # wall-mounted cuboid composition on a random planar wall
    if rng.random() < config.wall_prim_prob and commands:
        walls_now = [c for c in commands if isinstance(c, lang.WallCmd)]
        wall = walls_now[int(rng.integers(len(walls_now)))]
        length = math.hypot(wall.b_x - wall.a_x, wall.b_y - wall.a_y)
        sx = _snap(rng.uniform(0.2, min(0.6, length - 0.4)), res)
        sy = _snap(rng.uniform(0.1, 0.3), res)
        sz = _snap(rng.uniform(0.2, 0.6), res)
        if sx >= 2 * res and sy >= 2 * res and sz >= 2 * res:
            px = _uniform_grid(rng, 0.2 + sx / 2.0, length - 0.2 - sx / 2.0, res)
            pz = _uniform_grid(rng, 0.2 + sz / 2.0, wall.height - 0.2 - sz / 2.0, res)
            commands.append(
                lang.WallPrimCmd(wall.id, px, _snap(sy / 2.0, res), pz, sx, sy, sz)
            )

    # boxes per room, non-overlapping footprints
    bbox_id = 0
    placed_boxes = []
    for room in range(n_rooms):
        x0, x1 = xs[room], xs[room + 1]
        n_boxes = int(rng.integers(config.boxes_per_room[0], config.boxes_per_room[1] + 1))
        for _ in range(n_boxes):
            for _attempt in range(24):
                ext = np.array(
                    [
                        _uniform_grid(rng, 0.3, 1.2, res),
                        _uniform_grid(rng, 0.3, 1.2, res),
                        _uniform_grid(rng, 0.3, 1.6, res),
                    ]
                )
                if ext.min() < 2 * res:
                    continue
                yaw = float(rng.integers(0, 360))
                cs, sn = abs(math.cos(math.radians(yaw))), abs(math.sin(math.radians(yaw)))
                hx = (ext[0] * cs + ext[1] * sn) / 2.0
                hy = (ext[0] * sn + ext[1] * cs) / 2.0
                m = 0.15
                if x0 + hx + m >= x1 - hx - m or hy + m >= depth - hy - m:
                    continue
                cx = _uniform_grid(rng, x0 + hx + m, x1 - hx - m, res)
                cy = _uniform_grid(rng, hy + m, depth - hy - m, res)
                center = np.array([cx, cy])
                if any(
                    _footprints_overlap(center, yaw, ext[:2], pc, pyaw, pext, clearance=2 * res)
                    for pc, pyaw, pext in placed_boxes
                ):
                    continue
                cz = _snap(ext[2] / 2.0, res)
                commands.append(
                    lang.BboxCmd(
                        bbox_id,
                        int(rng.integers(config.n_classes)),
                        cx, cy, cz, yaw,
                        float(ext[0]), float(ext[1]), float(ext[2]),
                    )
                )
                placed_boxes.append((center, yaw, ext[:2]))
                if config.prims:
                    _add_prims(rng, commands, commands[-1], config, res)
                bbox_id += 1
                break
    program = lang.SceneProgram(tuple(commands), res)
    program = lang.canonicalize(program)
    program = lang.normalize_origin(program)
    program = lang.quantize_scene(program, res)
    if tokens.sequence_length(program) > tokens.MAX_TOKENS:
        raise GenerationFailed("scene exceeds the token budget")
    return program


def _add_prims(rng, commands, box, config, res):
    """Fill a box with 1-4 contained primitives aligned to the box frame."""
    n = int(rng.integers(config.prims_per_box[0], config.prims_per_box[1] + 1))
    pad = 2 * res
    cs, sn = math.cos(math.radians(box.angle_z)), math.sin(math.radians(box.angle_z))
    parent_ext = np.array([box.scale_x, box.scale_y, box.scale_z])
    for k in range(n):
        swap = bool(rng.integers(2))
        angle_z = (box.angle_z + (90.0 if swap else 0.0)) % 360.0
        ext = np.array(
            [
                _snap(rng.uniform(0.25, 0.9) * parent_ext[0], res),
                _snap(rng.uniform(0.25, 0.9) * parent_ext[1], res),
                _snap(rng.uniform(0.25, 0.9) * parent_ext[2], res),
            ]
        )
        if ext.min() < 2 * res:
            continue
        aligned = np.array([ext[1], ext[0], ext[2]]) if swap else ext
        slack = parent_ext - aligned
        if (slack < 2 * pad).any():
            local = np.zeros(3)
            if (slack < 0).any():
                continue
        else:
            local = np.array(
                [
                    rng.uniform(-(slack[0] / 2 - pad), slack[0] / 2 - pad),
                    rng.uniform(-(slack[1] / 2 - pad), slack[1] / 2 - pad),
                    rng.uniform(-(slack[2] / 2 - pad), slack[2] / 2 - pad),
                ]
            )
        wx = box.position_x + local[0] * cs - local[1] * sn
        wy = box.position_y + local[0] * sn + local[1] * cs
        wz = box.position_z + local[2]
        commands.append(
            lang.PrimCmd(
                box.id, k, int(rng.integers(2)),
                _snap(wx, res), _snap(wy, res), _snap(wz, res),
                0.0, 0.0, angle_z,
                float(ext[0]), float(ext[1]), float(ext[2]),
            )
        )


# ---------------------------------------------------------------------------
# point cloud simulation

def sample_point_cloud(geometry: geom.SceneGeometry, config: GenConfig, seed: int) -> np.ndarray:
    """Simulated surface scan of interpreted geometry; (N, 3) meters."""
    tris = geometry.all_triangles()
    if len(tris) == 0:
        raise EmptyGeometry("no surface to sample")
    rng = np.random.default_rng(seed)
    cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    areas = np.linalg.norm(cross, axis=1) / 2.0
    total = float(areas.sum())
    if total <= 0.0:
        raise EmptyGeometry("geometry has zero surface area")
    n = max(1, round(total * config.point_density))
    idx = rng.choice(len(tris), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    t = tris[idx]
    points = (
        (1.0 - r1)[:, None] * t[:, 0]
        + (r1 * (1.0 - r2))[:, None] * t[:, 1]
        + (r1 * r2)[:, None] * t[:, 2]
    )
    if config.noise_sigma > 0:
        points = points + rng.normal(0.0, config.noise_sigma, points.shape)
    n_out = round(config.outlier_fraction * n)
    if n_out > 0:
        lo = tris.reshape(-1, 3).min(axis=0) - OUTLIER_MARGIN
        hi = tris.reshape(-1, 3).max(axis=0) + OUTLIER_MARGIN
        sel = rng.choice(n, size=n_out, replace=False)
        points[sel] = rng.uniform(lo, hi, (n_out, 3))
    if config.dropout_fraction > 0:
        target = round(config.dropout_fraction * len(points))
        removed = np.zeros(len(points), dtype=bool)
        for _ in range(64):
            if removed.sum() >= target:
                break
            center = points[int(rng.integers(len(points)))]
            removed |= (
                np.linalg.norm(points - center, axis=1) < config.dropout_patch_radius
            )
        if removed.sum() < len(points):
            points = points[~removed]
    if len(points) > config.max_points:
        keep = np.sort(rng.choice(len(points), size=config.max_points, replace=False))
        points = points[keep]
    return points


def write_xyz(path, points):
    np.savetxt(path, points, fmt=XYZ_FORMAT)


def read_xyz(path):
    points = np.loadtxt(path, ndmin=2)
    if points.size == 0:
        return np.zeros((0, 3))
    return points.reshape(-1, 3)


# ---------------------------------------------------------------------------
# dataset emission

def split_of_index(index: int) -> str:
    digest = hashlib.sha256(str(index).encode()).hexdigest()
    bucket = int(digest, 16) % 10
    if bucket < 8:
        return "train"
    return "val" if bucket == 8 else "test"


def generate_dataset(config: GenConfig, n: int, seed: int, out_dir) -> dict:
    """Write n (scene, cloud, tokens) triples plus a manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes = []
    for i in range(n):
        s_scene = scene_seed(seed, i, 0)
        s_cloud = scene_seed(seed, i, 1)
        program = generate_scene(config, s_scene)
        geometry = geom.interpret_scene(program)
        cloud = sample_point_cloud(geometry, config, s_cloud)
        stem = f"scene_{i:06d}"
        (out / f"{stem}.scene").write_text(lang.serialize_scene_text(program))
        write_xyz(out / f"{stem}.xyz", cloud)
        tokens.write_token_file(out / f"{stem}.tok", [tokens.tokenize(program)])
        scenes.append(
            {
                "index": i,
                "stem": stem,
                "scene_seed": s_scene,
                "cloud_seed": s_cloud,
                "split": split_of_index(i),
                "n_points": int(len(cloud)),
                "n_commands": len(program.commands),
            }
        )
    manifest = {
        "version": 1,
        "seed": seed,
        "count": n,
        "config": asdict(config),
        "scenes": scenes,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
