"""Interprets scene programs into 3D geometry.

Produces three things from a program: 4-corner layout entities for walls,
doors and windows; oriented boxes for object commands; and triangle meshes
(wall faces with openings cut out, tessellated curved walls, volumetric
primitives, wall-mounted cuboids, door leaves).

Rotation convention for primitives: the three Euler angles are applied as
rotations about the fixed world axes, X first, then Y, then Z, i.e.
``R = Rz @ Ry @ Rx``.  A global rotation about the vertical axis therefore
composes into ``angle_z`` alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lang
from .errors import (
    DanglingReference,
    DegenerateCurve,
    DegenerateWall,
    InvalidProgram,
    OutsideWallFace,
    UnknownPrimitiveClass,
)

UP = np.array([0.0, 0.0, 1.0])

DEFAULT_BEZIER_SEGMENTS = 16
DEFAULT_CYLINDER_SIDES = 24


@dataclass(frozen=True, eq=False)
class EntityCorners:
    cls: str                 # wall | door | window
    corners: np.ndarray      # (4, 3) ordered corner points, meters


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: np.ndarray       # (3,)
    yaw: float               # degrees about +z
    extents: np.ndarray      # (3,) full sizes
    cls: int

    @property
    def volume(self):
        return float(np.prod(self.extents))


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray     # (V, 3) float
    triangles: np.ndarray    # (T, 3) int

    def area(self):
        v = self.vertices
        t = self.triangles
        if len(t) == 0:
            return 0.0
        cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return float(np.linalg.norm(cross, axis=1).sum() / 2.0)

    def signed_volume(self):
        """Signed volume of a closed mesh (positive for outward winding)."""
        v = self.vertices
        t = self.triangles
        if len(t) == 0:
            return 0.0
        return float(
            np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]])).sum()
            / 6.0
        )


@dataclass(eq=False)
class SceneGeometry:
    layout_entities: list[EntityCorners] = field(default_factory=list)
    boxes: list[OrientedBox] = field(default_factory=list)
    meshes: dict[str, Mesh] = field(default_factory=dict)

    def all_triangles(self):
        """Concatenated (N, 3, 3) triangle array over every mesh."""
        tris = [
            m.vertices[m.triangles]
            for m in self.meshes.values()
            if len(m.triangles) > 0
        ]
        if not tris:
            return np.zeros((0, 3, 3))
        return np.concatenate(tris, axis=0)


def _wall_frame(wall: lang.WallCmd):
    """Return (origin, direction, normal, length) of a wall's base line."""
    a = np.array([wall.a_x, wall.a_y, wall.a_z])
    b = np.array([wall.b_x, wall.b_y, wall.b_z])
    d = b - a
    d[2] = 0.0
    length = float(np.linalg.norm(d))
    if length < 1e-9:
        raise DegenerateWall(f"wall {wall.id}: endpoints coincide in the plane")
    d = d / length
    normal = np.cross(UP, d)
    return a, d, normal, length


def wall_corners(wall: lang.WallCmd) -> EntityCorners:
    """Corners [a, b, b+h, a+h]; counter-clockwise from the +normal side."""
    a, d, _, length = _wall_frame(wall)
    b = a + d * length
    h = UP * wall.height
    return EntityCorners("wall", np.stack([a, b, b + h, a + h]))


def opening_corners(
    opening, walls: dict[int, lang.WallCmd], tolerance: float = lang.DEFAULT_RESOLUTION
) -> EntityCorners:
    """Opening rectangle in the plane of wall0, edges wall-parallel/vertical."""
    wall = walls.get(opening.wall0_id)
    if wall is None:
        raise DanglingReference(opening.wall0_id)
    a, d, _, length = _wall_frame(wall)
    rel = np.array([opening.position_x, opening.position_y, 0.0]) - np.array(
        [a[0], a[1], 0.0]
    )
    u = float(rel @ d)
    u0, u1 = u - opening.width / 2.0, u + opening.width / 2.0
    v0 = opening.position_z - opening.height / 2.0 - wall.a_z
    v1 = v0 + opening.height
    if u0 < -tolerance or u1 > length + tolerance or v0 < -tolerance or v1 > wall.height + tolerance:
        raise OutsideWallFace(
            f"opening {opening.id} exceeds wall {wall.id} face extents"
        )
    base = a + UP * v0
    cls = "door" if isinstance(opening, lang.DoorCmd) else "window"
    c0 = base + d * u0
    c1 = base + d * u1
    h = UP * opening.height
    return EntityCorners(cls, np.stack([c0, c1, c1 + h, c0 + h]))


def box_corners(box: lang.BboxCmd) -> np.ndarray:
    """8 corners of the yaw-rotated box; bottom face first, counter-clockwise."""
    c = math.cos(math.radians(box.angle_z))
    s = math.sin(math.radians(box.angle_z))
    hx, hy, hz = box.scale_x / 2.0, box.scale_y / 2.0, box.scale_z / 2.0
    footprint = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    rot = footprint @ np.array([[c, s], [-s, c]])
    corners = np.zeros((8, 3))
    corners[:4, :2] = rot + [box.position_x, box.position_y]
    corners[4:, :2] = corners[:4, :2]
    corners[:4, 2] = box.position_z - hz
    corners[4:, 2] = box.position_z + hz
    return corners


def oriented_box(box: lang.BboxCmd) -> OrientedBox:
    return OrientedBox(
        np.array([box.position_x, box.position_y, box.position_z]),
        box.angle_z,
        np.array([box.scale_x, box.scale_y, box.scale_z]),
        box.class_id,
    )


# ---------------------------------------------------------------------------
# meshes

def _grid_face_mesh(origin, d, up, length, height, holes) -> Mesh:
    """Rectangle (length x height) minus axis-aligned holes, as triangles.

    ``holes`` are (u0, u1, v0, v1) rectangles in face coordinates.  The face
    is split along every hole edge; cells not covered by a hole are emitted.
    """
    us = {0.0, length}
    vs = {0.0, height}
    clipped = []
    for (u0, u1, v0, v1) in holes:
        u0, u1 = max(u0, 0.0), min(u1, length)
        v0, v1 = max(v0, 0.0), min(v1, height)
        if u1 - u0 <= 1e-12 or v1 - v0 <= 1e-12:
            continue
        clipped.append((u0, u1, v0, v1))
        us.update((u0, u1))
        vs.update((v0, v1))
    us = sorted(us)
    vs = sorted(vs)
    verts = []
    index = {}

    def vid(i, j):
        key = (i, j)
        if key not in index:
            index[key] = len(verts)
            verts.append(origin + d * us[i] + up * vs[j])
        return index[key]

    tris = []
    for i in range(len(us) - 1):
        for j in range(len(vs) - 1):
            um = (us[i] + us[i + 1]) / 2.0
            vm = (vs[j] + vs[j + 1]) / 2.0
            if any(u0 < um < u1 and v0 < vm < v1 for (u0, u1, v0, v1) in clipped):
                continue
            if us[i + 1] - us[i] <= 1e-12 or vs[j + 1] - vs[j] <= 1e-12:
                continue
            a, b = vid(i, j), vid(i + 1, j)
            c, e = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, e))
    if not verts:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    return Mesh(np.array(verts), np.array(tris, dtype=int))


def _box_mesh(corners: np.ndarray) -> Mesh:
    """Closed cuboid mesh from 8 corners (bottom CCW 0-3, top 4-7), outward."""
    tris = np.array(
        [
            (0, 2, 1), (0, 3, 2),      # bottom (faces -z)
            (4, 5, 6), (4, 6, 7),      # top (+z)
            (0, 1, 5), (0, 5, 4),      # side 0-1
            (1, 2, 6), (1, 6, 5),      # side 1-2
            (2, 3, 7), (2, 7, 6),      # side 2-3
            (3, 0, 4), (3, 4, 7),      # side 3-0
        ],
        dtype=int,
    )
    return Mesh(corners.copy(), tris)


def euler_xyz_matrix(angle_x: float, angle_y: float, angle_z: float) -> np.ndarray:
    """World-axis rotations applied X, then Y, then Z: ``Rz @ Ry @ Rx``."""
    ax, ay, az = (math.radians(a) for a in (angle_x, angle_y, angle_z))
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def primitive_mesh(prim: lang.PrimCmd, cylinder_sides: int = DEFAULT_CYLINDER_SIDES) -> Mesh:
    """Cuboid (class 0) or extruded regular-polygon cylinder (class 1)."""
    if cylinder_sides < 3:
        raise ValueError("cylinder_sides must be >= 3")
    scale = np.array([prim.scale_x, prim.scale_y, prim.scale_z])
    center = np.array([prim.center_x, prim.center_y, prim.center_z])
    rot = euler_xyz_matrix(prim.angle_x, prim.angle_y, prim.angle_z)
    if prim.class_id == 0:
        unit = np.array(
            [
                [-0.5, -0.5, -0.5],
                [0.5, -0.5, -0.5],
                [0.5, 0.5, -0.5],
                [-0.5, 0.5, -0.5],
                [-0.5, -0.5, 0.5],
                [0.5, -0.5, 0.5],
                [0.5, 0.5, 0.5],
                [-0.5, 0.5, 0.5],
            ]
        )
        mesh = _box_mesh(unit * scale)
    elif prim.class_id == 1:
        n = cylinder_sides
        ang = 2.0 * np.pi * np.arange(n) / n
        ring = np.stack([0.5 * np.cos(ang), 0.5 * np.sin(ang)], axis=1)
        bottom = np.concatenate([ring, np.full((n, 1), -0.5)], axis=1)
        top = np.concatenate([ring, np.full((n, 1), 0.5)], axis=1)
        verts = np.concatenate([bottom, top], axis=0) * scale
        tris = []
        for k in range(n):
            k2 = (k + 1) % n
            tris.append((k, k2, n + k2))
            tris.append((k, n + k2, n + k))
        for k in range(1, n - 1):          # top cap, CCW from +z
            tris.append((n, n + k, n + k + 1))
        for k in range(1, n - 1):          # bottom cap, CW from +z
            tris.append((0, k + 1, k))
        mesh = Mesh(verts, np.array(tris, dtype=int))
    else:
        raise UnknownPrimitiveClass(f"primitive class {prim.class_id}")
    mesh.vertices = mesh.vertices @ rot.T + center
    return mesh


def bezier_point(p0, p1, p2, p3, t):
    mt = 1.0 - t
    return (
        mt**3 * p0 + 3.0 * mt**2 * t * p1 + 3.0 * mt * t**2 * p2 + t**3 * p3
    )


def bezier_tangent(p0, p1, p2, p3, t):
    mt = 1.0 - t
    return 3.0 * mt**2 * (p1 - p0) + 6.0 * mt * t * (p2 - p1) + 3.0 * t**2 * (p3 - p2)


def tessellate_curved_wall(cmd: lang.CurvedWallCmd, segments: int = DEFAULT_BEZIER_SEGMENTS) -> Mesh:
    """Extrude the cubic Bezier footprint [a, c1, c2, b] vertically.

    With zero thickness the result is a single ribbon; with positive
    thickness the footprint is offset by +-thickness/2 along the curve
    normal and closed into a watertight slab.
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    p0 = np.array([cmd.a_x, cmd.a_y])
    p1 = np.array([cmd.c1_x, cmd.c1_y])
    p2 = np.array([cmd.c2_x, cmd.c2_y])
    p3 = np.array([cmd.b_x, cmd.b_y])
    pts = np.stack([p0, p1, p2, p3])
    if np.max(np.linalg.norm(pts - pts[0], axis=1)) < 1e-12:
        raise DegenerateCurve("all control points coincide")
    ts = np.linspace(0.0, 1.0, segments + 1)
    base = np.array([bezier_point(p0, p1, p2, p3, t) for t in ts])
    z0 = cmd.a_z
    h = cmd.height
    if cmd.thickness <= 0.0:
        verts = np.zeros((2 * (segments + 1), 3))
        verts[: segments + 1, :2] = base
        verts[: segments + 1, 2] = z0
        verts[segments + 1:, :2] = base
        verts[segments + 1:, 2] = z0 + h
        tris = []
        for k in range(segments):
            a, b = k, k + 1
            c, d = segments + 1 + k + 1, segments + 1 + k
            tris.append((a, b, c))
            tris.append((a, c, d))
        return Mesh(verts, np.array(tris, dtype=int))

    # offset curve into a closed slab
    chord = p3 - p0
    normals = []
    for t in ts:
        tan = bezier_tangent(p0, p1, p2, p3, t)
        if np.linalg.norm(tan) < 1e-12:
            tan = chord
        tan = tan / np.linalg.norm(tan)
        normals.append(np.array([-tan[1], tan[0]]))  # left of travel
    normals = np.array(normals)
    half = cmd.thickness / 2.0
    left = base + half * normals
    right = base - half * normals
    m = segments + 1
    verts = np.zeros((4 * m, 3))
    verts[0 * m : 1 * m, :2] = left
    verts[0 * m : 1 * m, 2] = z0
    verts[1 * m : 2 * m, :2] = right
    verts[1 * m : 2 * m, 2] = z0
    verts[2 * m : 3 * m, :2] = left
    verts[2 * m : 3 * m, 2] = z0 + h
    verts[3 * m : 4 * m, :2] = right
    verts[3 * m : 4 * m, 2] = z0 + h
    LB, RB, LT, RT = 0, m, 2 * m, 3 * m
    tris = []
    for k in range(segments):
        # left face (outward = +normal side)
        tris.append((LB + k, LT + k, LT + k + 1))
        tris.append((LB + k, LT + k + 1, LB + k + 1))
        # right face
        tris.append((RB + k, RB + k + 1, RT + k + 1))
        tris.append((RB + k, RT + k + 1, RT + k))
        # top
        tris.append((LT + k, RT + k, RT + k + 1))
        tris.append((LT + k, RT + k + 1, LT + k + 1))
        # bottom
        tris.append((LB + k, LB + k + 1, RB + k + 1))
        tris.append((LB + k, RB + k + 1, RB + k))
    # end caps
    tris.append((LB, RB, RT))
    tris.append((LB, RT, LT))
    tris.append((LB + segments, LT + segments, RT + segments))
    tris.append((LB + segments, RT + segments, RB + segments))
    return Mesh(verts, np.array(tris, dtype=int))


def door_leaf_quad(door: lang.DoorCmd, walls: dict[int, lang.WallCmd]) -> Mesh:
    """Door leaf hinged on the edge picked by hinge_side, swung open_degree."""
    wall = walls.get(door.wall0_id)
    if wall is None:
        raise DanglingReference(door.wall0_id)
    a, d, normal, length = _wall_frame(wall)
    rel = np.array([door.position_x - a[0], door.position_y - a[1], 0.0])
    u = float(rel @ d)
    if door.hinge_side == 0:
        hinge_u, sign = u - door.width / 2.0, 1.0
    else:
        hinge_u, sign = u + door.width / 2.0, -1.0
    side = 1.0 if door.open_direction == 0 else -1.0
    phi = math.radians(door.open_degree)
    leaf_dir = math.cos(phi) * sign * d + math.sin(phi) * side * normal
    z0 = door.position_z - door.height / 2.0
    base = np.array([a[0], a[1], z0]) + d * hinge_u
    c0 = base
    c1 = base + leaf_dir * door.width
    h = UP * door.height
    verts = np.stack([c0, c1, c1 + h, c0 + h])
    return Mesh(verts, np.array([(0, 1, 2), (0, 2, 3)], dtype=int))


def wall_prim_mesh(cmd: lang.WallPrimCmd, walls: dict[int, lang.WallCmd]) -> Mesh:
    """Cuboid composed with its parent wall, placed in the wall's local frame."""
    wall = walls.get(cmd.parent_wall_id)
    if wall is None:
        raise DanglingReference(cmd.parent_wall_id)
    a, d, normal, _ = _wall_frame(wall)
    center = a + d * cmd.pos_x + normal * cmd.pos_y + UP * cmd.pos_z
    hx, hy, hz = cmd.size_x / 2.0, cmd.size_y / 2.0, cmd.size_z / 2.0
    corners = []
    for dz in (-hz, hz):
        for du, dv in ((-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)):
            corners.append(center + d * du + normal * dv + UP * dz)
    return _box_mesh(np.array(corners))


def interpret_scene(
    program: lang.SceneProgram,
    bezier_segments: int = DEFAULT_BEZIER_SEGMENTS,
    cylinder_sides: int = DEFAULT_CYLINDER_SIDES,
) -> SceneGeometry:
    """Interpret a valid program into layout entities, boxes, and meshes.

    Output ordering follows the canonical command order.  Openings are cut
    out of wall0 and, for two-wall openings, also out of wall1 where the
    rectangle overlaps that wall's face.
    """
    violations = lang.validate_scene(program)
    if violations:
        raise InvalidProgram(violations)
    geo = SceneGeometry()
    walls = program.wall_by_id()
    ordered = sorted(
        program.commands,
        key=lambda c: (lang.KIND_ORDER.index(lang.kind_of(c)),)
        + tuple(lang.canonical_sort_key(c)),
    )

    holes_per_wall: dict[int, list] = {w: [] for w in walls}
    for cmd in ordered:
        if isinstance(cmd, (lang.DoorCmd, lang.WindowCmd)):
            for wid in {cmd.wall0_id, cmd.wall1_id}:
                uv = lang.wall_face_uv(cmd, walls[wid])
                if uv is None:
                    continue
                u0, u1, v0, v1, length = uv
                u0, u1 = max(u0, 0.0), min(u1, length)
                v0, v1 = max(v0, 0.0), min(v1, walls[wid].height)
                if u1 > u0 and v1 > v0:
                    holes_per_wall[wid].append((u0, u1, v0, v1))

    for cmd in ordered:
        if isinstance(cmd, lang.WallCmd):
            geo.layout_entities.append(wall_corners(cmd))
            a, d, _, length = _wall_frame(cmd)
            geo.meshes[f"wall_{cmd.id}"] = _grid_face_mesh(
                a, d, UP, length, cmd.height, holes_per_wall[cmd.id]
            )
        elif isinstance(cmd, lang.CurvedWallCmd):
            name = f"curved_wall_{sum(1 for k in geo.meshes if k.startswith('curved_wall_'))}"
            geo.meshes[name] = tessellate_curved_wall(cmd, bezier_segments)
        elif isinstance(cmd, lang.WallPrimCmd):
            name = f"wall_prim_{sum(1 for k in geo.meshes if k.startswith('wall_prim_'))}"
            geo.meshes[name] = wall_prim_mesh(cmd, walls)
        elif isinstance(cmd, (lang.DoorCmd, lang.WindowCmd)):
            geo.layout_entities.append(
                opening_corners(cmd, walls, tolerance=program.resolution)
            )
            if isinstance(cmd, lang.DoorCmd):
                geo.meshes[f"door_leaf_{cmd.id}"] = door_leaf_quad(cmd, walls)
        elif isinstance(cmd, lang.BboxCmd):
            geo.boxes.append(oriented_box(cmd))
        elif isinstance(cmd, lang.PrimCmd):
            geo.meshes[f"prim_{cmd.bbox_id}_{cmd.prim_num}"] = primitive_mesh(
                cmd, cylinder_sides
            )
    return geo


def layout_entities_lenient(program: lang.SceneProgram):
    """Corner entities for every realizable wall/door/window command.

    Meant for model predictions: commands with unresolvable references or
    degenerate geometry are skipped (openings are kept even when they fall
    outside their wall's face; the metrics will penalize them naturally).
    Returns (entities, dropped_count).
    """
    walls = program.wall_by_id()
    entities = []
    dropped = 0
    for cmd in program.commands:
        try:
            if isinstance(cmd, lang.WallCmd):
                entities.append(wall_corners(cmd))
            elif isinstance(cmd, (lang.DoorCmd, lang.WindowCmd)):
                entities.append(opening_corners(cmd, walls, tolerance=math.inf))
        except (DanglingReference, DegenerateWall):
            dropped += 1
    return entities, dropped


def rotate_geometry(geo: SceneGeometry, theta: float, pivot=(0.0, 0.0)) -> SceneGeometry:
    """Rotate interpreted geometry about the vertical axis through pivot."""
    c = math.cos(math.radians(theta))
    s = math.sin(math.radians(theta))
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    piv = np.array([pivot[0], pivot[1], 0.0])

    def rp(points):
        return (points - piv) @ rot.T + piv

    out = SceneGeometry()
    out.layout_entities = [
        EntityCorners(e.cls, rp(e.corners)) for e in geo.layout_entities
    ]
    out.boxes = [
        OrientedBox(rp(b.center[None])[0], (b.yaw + theta) % 360.0, b.extents.copy(), b.cls)
        for b in geo.boxes
    ]
    out.meshes = {
        name: Mesh(rp(m.vertices), m.triangles.copy()) for name, m in geo.meshes.items()
    }
    return out


# ---------------------------------------------------------------------------
# OBJ export

def export_obj(geometry: SceneGeometry) -> str:
    """Wavefront OBJ text: one object group per mesh, 1-based indices."""
    lines = ["# scenelang geometry export"]
    offset = 1
    for name, mesh in geometry.meshes.items():
        lines.append(f"o {name}")
        for v in mesh.vertices:
            lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
        for t in mesh.triangles:
            lines.append(f"f {t[0] + offset} {t[1] + offset} {t[2] + offset}")
        offset += len(mesh.vertices)
    return "\n".join(lines) + "\n"
