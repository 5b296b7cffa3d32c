"""Scene command language: data model, text format, validation, normalization.

A scene is an ordered list of typed commands.  The text format is one command
per line::

    make_wall, id=0, a_x=0.0, a_y=0.0, a_z=0.0, b_x=4.0, b_y=0.0, b_z=0.0, height=2.5

Keys may appear in any order; ``#`` starts a comment; blank lines are
ignored.  A comment of the form ``# resolution=0.05`` records a non-default
quantization resolution so that serialization round-trips exactly.

Conventions baked into the model:

* Lengths and positions are meters, angles are degrees.
* Walls are gravity-aligned planes over a level base (``a_z == b_z``).
* Doors always carry state fields (``open_degree``, ``hinge_side``,
  ``open_direction``); parsing defaults them to a closed door.
* ``make_wall_prim`` coordinates live in the parent wall's local frame
  (x along the wall, y along the wall normal, z above the wall base), so
  rigid motions of the scene leave them unchanged.
"""

from __future__ import annotations

import math
import re
from dataclasses import MISSING as dc_MISSING, dataclass, fields as dc_fields, replace

from .errors import (
    DanglingReference,
    DuplicateParameter,
    InvalidProgram,
    MalformedNumber,
    MissingParameter,
    UnknownCommand,
    UnknownParameter,
)

DEFAULT_RESOLUTION = 0.05
ANGLE_RESOLUTION = 1.0

# field value classes
INT = "int"
LENGTH = "length"
ANGLE = "angle"


@dataclass(frozen=True)
class FieldSpec:
    name: str               # attribute name on the command dataclass
    key: str                # key used in the text format
    ftype: str              # INT | LENGTH | ANGLE
    group: str | None = None  # world-position group this field belongs to
    axis: str | None = None   # x | y | z within its group


@dataclass(frozen=True)
class WallCmd:
    id: int
    a_x: float
    a_y: float
    a_z: float
    b_x: float
    b_y: float
    b_z: float
    height: float


@dataclass(frozen=True)
class DoorCmd:
    id: int
    wall0_id: int
    wall1_id: int
    position_x: float
    position_y: float
    position_z: float
    width: float
    height: float
    open_degree: float = 0.0
    hinge_side: int = 0
    open_direction: int = 0


@dataclass(frozen=True)
class WindowCmd:
    id: int
    wall0_id: int
    wall1_id: int
    position_x: float
    position_y: float
    position_z: float
    width: float
    height: float


@dataclass(frozen=True)
class BboxCmd:
    id: int
    class_id: int
    position_x: float
    position_y: float
    position_z: float
    angle_z: float
    scale_x: float
    scale_y: float
    scale_z: float


@dataclass(frozen=True)
class PrimCmd:
    bbox_id: int
    prim_num: int
    class_id: int
    center_x: float
    center_y: float
    center_z: float
    angle_x: float
    angle_y: float
    angle_z: float
    scale_x: float
    scale_y: float
    scale_z: float


@dataclass(frozen=True)
class CurvedWallCmd:
    a_x: float
    a_y: float
    a_z: float
    b_x: float
    b_y: float
    b_z: float
    c1_x: float
    c1_y: float
    c2_x: float
    c2_y: float
    height: float
    thickness: float


@dataclass(frozen=True)
class WallPrimCmd:
    parent_wall_id: int
    pos_x: float
    pos_y: float
    pos_z: float
    size_x: float
    size_y: float
    size_z: float


Command = (
    WallCmd | DoorCmd | WindowCmd | BboxCmd | PrimCmd | CurvedWallCmd | WallPrimCmd
)


def _f(name, ftype, group=None, axis=None, key=None):
    return FieldSpec(name, key or name, ftype, group, axis)


@dataclass(frozen=True)
class KindSpec:
    kind: str
    command_name: str
    cls: type
    fields: tuple[FieldSpec, ...]

    @property
    def arity(self):
        return len(self.fields)


_OPENING_FIELDS = (
    _f("id", INT),
    _f("wall0_id", INT),
    _f("wall1_id", INT),
    _f("position_x", LENGTH, "position", "x"),
    _f("position_y", LENGTH, "position", "y"),
    _f("position_z", LENGTH, "position", "z"),
    _f("width", LENGTH),
    _f("height", LENGTH),
)

KIND_SPECS: dict[str, KindSpec] = {
    spec.kind: spec
    for spec in (
        KindSpec(
            "wall",
            "make_wall",
            WallCmd,
            (
                _f("id", INT),
                _f("a_x", LENGTH, "a", "x"),
                _f("a_y", LENGTH, "a", "y"),
                _f("a_z", LENGTH, "a", "z"),
                _f("b_x", LENGTH, "b", "x"),
                _f("b_y", LENGTH, "b", "y"),
                _f("b_z", LENGTH, "b", "z"),
                _f("height", LENGTH),
            ),
        ),
        KindSpec(
            "door",
            "make_door",
            DoorCmd,
            _OPENING_FIELDS
            + (
                _f("open_degree", ANGLE),
                _f("hinge_side", INT),
                _f("open_direction", INT),
            ),
        ),
        KindSpec("window", "make_window", WindowCmd, _OPENING_FIELDS),
        KindSpec(
            "bbox",
            "make_bbox",
            BboxCmd,
            (
                _f("id", INT),
                _f("class_id", INT, key="class"),
                _f("position_x", LENGTH, "position", "x"),
                _f("position_y", LENGTH, "position", "y"),
                _f("position_z", LENGTH, "position", "z"),
                _f("angle_z", ANGLE),
                _f("scale_x", LENGTH),
                _f("scale_y", LENGTH),
                _f("scale_z", LENGTH),
            ),
        ),
        KindSpec(
            "prim",
            "make_prim",
            PrimCmd,
            (
                _f("bbox_id", INT),
                _f("prim_num", INT),
                _f("class_id", INT, key="class"),
                _f("center_x", LENGTH, "center", "x"),
                _f("center_y", LENGTH, "center", "y"),
                _f("center_z", LENGTH, "center", "z"),
                _f("angle_x", ANGLE),
                _f("angle_y", ANGLE),
                _f("angle_z", ANGLE),
                _f("scale_x", LENGTH),
                _f("scale_y", LENGTH),
                _f("scale_z", LENGTH),
            ),
        ),
        KindSpec(
            "curved_wall",
            "make_curved_wall",
            CurvedWallCmd,
            (
                _f("a_x", LENGTH, "a", "x"),
                _f("a_y", LENGTH, "a", "y"),
                _f("a_z", LENGTH, "a", "z"),
                _f("b_x", LENGTH, "b", "x"),
                _f("b_y", LENGTH, "b", "y"),
                _f("b_z", LENGTH, "b", "z"),
                _f("c1_x", LENGTH, "c1", "x"),
                _f("c1_y", LENGTH, "c1", "y"),
                _f("c2_x", LENGTH, "c2", "x"),
                _f("c2_y", LENGTH, "c2", "y"),
                _f("height", LENGTH),
                _f("thickness", LENGTH),
            ),
        ),
        KindSpec(
            "wall_prim",
            "make_wall_prim",
            WallPrimCmd,
            (
                _f("parent_wall_id", INT),
                _f("pos_x", LENGTH),
                _f("pos_y", LENGTH),
                _f("pos_z", LENGTH),
                _f("size_x", LENGTH),
                _f("size_y", LENGTH),
                _f("size_z", LENGTH),
            ),
        ),
    )
}

_SPEC_BY_CLASS = {spec.cls: spec for spec in KIND_SPECS.values()}
_SPEC_BY_COMMAND_NAME = {spec.command_name: spec for spec in KIND_SPECS.values()}

# deterministic ordering used by canonicalize()
KIND_ORDER = ("wall", "curved_wall", "wall_prim", "door", "window", "bbox", "prim")


def kind_of(cmd: Command) -> str:
    return _SPEC_BY_CLASS[type(cmd)].kind


def spec_of(cmd: Command) -> KindSpec:
    return _SPEC_BY_CLASS[type(cmd)]


@dataclass(frozen=True)
class SceneProgram:
    commands: tuple[Command, ...] = ()
    resolution: float = DEFAULT_RESOLUTION

    def walls(self):
        return [c for c in self.commands if isinstance(c, WallCmd)]

    def of_kind(self, kind):
        cls = KIND_SPECS[kind].cls
        return [c for c in self.commands if isinstance(c, cls)]

    def wall_by_id(self):
        return {w.id: w for w in self.walls()}


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    index: int | None = None

    def __str__(self):
        where = f" (command {self.index})" if self.index is not None else ""
        return f"{self.code}: {self.message}{where}"


# ---------------------------------------------------------------------------
# parsing / serialization

_RESOLUTION_DIRECTIVE = re.compile(r"^#\s*resolution\s*=\s*(\S+)\s*$")


def _parse_number(token, ftype, line):
    token = token.strip()
    if ftype == INT:
        try:
            return int(token)
        except ValueError:
            pass
        try:
            value = float(token)
        except ValueError:
            raise MalformedNumber(token, line) from None
        if not value.is_integer():
            raise MalformedNumber(token, line)
        return int(value)
    try:
        value = float(token)
    except ValueError:
        raise MalformedNumber(token, line) from None
    if not math.isfinite(value):
        raise MalformedNumber(token, line)
    return value


def parse_scene_text(text: str, check_references: bool = True) -> SceneProgram:
    """Parse the scene text format into a program, preserving line order."""
    commands = []
    lines_of_commands = []
    resolution = DEFAULT_RESOLUTION
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _RESOLUTION_DIRECTIVE.match(line)
            if m:
                resolution = _parse_number(m.group(1), LENGTH, lineno)
            continue
        if "#" in line:
            line = line[: line.index("#")].strip()
            if not line:
                continue
        parts = [p.strip() for p in line.split(",")]
        name = parts[0]
        spec = _SPEC_BY_COMMAND_NAME.get(name)
        if spec is None:
            raise UnknownCommand(name, lineno)
        seen = {}
        for part in parts[1:]:
            if not part:
                continue
            if "=" not in part:
                raise MalformedNumber(part, lineno)
            key, _, value = part.partition("=")
            key = key.strip()
            if key in seen:
                raise DuplicateParameter(key, lineno)
            seen[key] = value
        kwargs = {}
        known = {f.key: f for f in spec.fields}
        for key in seen:
            if key not in known:
                raise UnknownParameter(key, lineno)
        defaults = {
            f.name: f.default
            for f in dc_fields(spec.cls)
            if f.default is not dc_MISSING
        }
        for field in spec.fields:
            if field.key not in seen:
                if field.name in defaults:
                    kwargs[field.name] = defaults[field.name]
                    continue
                raise MissingParameter(field.key, lineno)
            kwargs[field.name] = _parse_number(seen[field.key], field.ftype, lineno)
        commands.append(spec.cls(**kwargs))
        lines_of_commands.append(lineno)
    program = SceneProgram(tuple(commands), resolution)
    if check_references:
        _check_references(program, lines_of_commands)
    return program


def _check_references(program, lines=None):
    wall_ids = {w.id for w in program.walls()}
    bbox_ids = {b.id for b in program.of_kind("bbox")}
    for i, cmd in enumerate(program.commands):
        line = lines[i] if lines else None
        if isinstance(cmd, (DoorCmd, WindowCmd)):
            for ref in (cmd.wall0_id, cmd.wall1_id):
                if ref not in wall_ids:
                    raise DanglingReference(ref, line)
        elif isinstance(cmd, PrimCmd):
            if cmd.bbox_id not in bbox_ids:
                raise DanglingReference(cmd.bbox_id, line)
        elif isinstance(cmd, WallPrimCmd):
            if cmd.parent_wall_id not in wall_ids:
                raise DanglingReference(cmd.parent_wall_id, line)


def _format_value(value, ftype):
    if ftype == INT:
        return str(int(value))
    return repr(float(value))


def serialize_scene_text(program: SceneProgram) -> str:
    """Serialize to the text format; output reparses to an identical program."""
    lines = []
    if program.resolution != DEFAULT_RESOLUTION and program.commands:
        lines.append(f"# resolution={program.resolution!r}")
    for cmd in program.commands:
        spec = spec_of(cmd)
        pairs = ", ".join(
            f"{f.key}={_format_value(getattr(cmd, f.name), f.ftype)}"
            for f in spec.fields
        )
        lines.append(f"{spec.command_name}, {pairs}")
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# validation

def wall_face_uv(opening, wall):
    """Opening rectangle as (u0, u1, v0, v1) in the wall's face coordinates."""
    dx = wall.b_x - wall.a_x
    dy = wall.b_y - wall.a_y
    length = math.hypot(dx, dy)
    if length < 1e-9:
        return None
    u = ((opening.position_x - wall.a_x) * dx + (opening.position_y - wall.a_y) * dy) / length
    v = opening.position_z - wall.a_z
    return (
        u - opening.width / 2.0,
        u + opening.width / 2.0,
        v - opening.height / 2.0,
        v + opening.height / 2.0,
        length,
    )


def validate_scene(program: SceneProgram) -> list[Violation]:
    """Collect every invariant violation; empty list iff the program is valid."""
    out = []
    tol = program.resolution
    for kind in ("wall", "door", "window", "bbox"):
        seen = {}
        for i, cmd in enumerate(program.commands):
            if kind_of(cmd) != kind:
                continue
            if cmd.id in seen:
                out.append(
                    Violation("DuplicateId", f"{kind} id {cmd.id} reused", i)
                )
            seen[cmd.id] = i
    walls = program.wall_by_id()
    bbox_ids = {b.id for b in program.of_kind("bbox")}
    for i, cmd in enumerate(program.commands):
        kind = kind_of(cmd)
        if isinstance(cmd, WallCmd):
            if cmd.height <= 0:
                out.append(Violation("NonPositiveExtent", "wall height <= 0", i))
            if math.hypot(cmd.b_x - cmd.a_x, cmd.b_y - cmd.a_y) < 1e-9:
                out.append(Violation("DegenerateWall", "wall endpoints coincide", i))
            if abs(cmd.a_z - cmd.b_z) > 1e-9:
                out.append(Violation("SlopedBase", "wall base is not level", i))
        elif isinstance(cmd, (DoorCmd, WindowCmd)):
            if cmd.width <= 0 or cmd.height <= 0:
                out.append(Violation("NonPositiveExtent", f"{kind} extents <= 0", i))
            for ref in {cmd.wall0_id, cmd.wall1_id}:
                if ref not in walls:
                    out.append(
                        Violation(
                            "DanglingReference", f"{kind} references wall {ref}", i
                        )
                    )
            wall = walls.get(cmd.wall0_id)
            if wall is not None and cmd.width > 0 and cmd.height > 0:
                uv = wall_face_uv(cmd, wall)
                if uv is not None:
                    u0, u1, v0, v1, length = uv
                    if (
                        u0 < -tol
                        or u1 > length + tol
                        or v0 < -tol
                        or v1 > wall.height + tol
                    ):
                        out.append(
                            Violation(
                                "OutsideWallFace",
                                f"{kind} rectangle exceeds wall {wall.id} face",
                                i,
                            )
                        )
            if isinstance(cmd, DoorCmd):
                if not 0.0 <= cmd.open_degree <= 180.0:
                    out.append(
                        Violation("AngleOutOfRange", "open_degree outside [0, 180]", i)
                    )
                if cmd.hinge_side not in (0, 1) or cmd.open_direction not in (0, 1):
                    out.append(Violation("InvalidFlag", "door state flags not in {0,1}", i))
        elif isinstance(cmd, BboxCmd):
            if min(cmd.scale_x, cmd.scale_y, cmd.scale_z) <= 0:
                out.append(Violation("NonPositiveExtent", "bbox scale <= 0", i))
            if not 0.0 <= cmd.angle_z < 360.0:
                out.append(Violation("AngleOutOfRange", "angle_z outside [0, 360)", i))
        elif isinstance(cmd, PrimCmd):
            if min(cmd.scale_x, cmd.scale_y, cmd.scale_z) <= 0:
                out.append(Violation("NonPositiveExtent", "prim scale <= 0", i))
            if cmd.bbox_id not in bbox_ids:
                out.append(
                    Violation("DanglingReference", f"prim references bbox {cmd.bbox_id}", i)
                )
        elif isinstance(cmd, CurvedWallCmd):
            if cmd.height <= 0:
                out.append(Violation("NonPositiveExtent", "curved wall height <= 0", i))
            if cmd.thickness < 0:
                out.append(Violation("NonPositiveExtent", "curved wall thickness < 0", i))
        elif isinstance(cmd, WallPrimCmd):
            if min(cmd.size_x, cmd.size_y, cmd.size_z) <= 0:
                out.append(Violation("NonPositiveExtent", "wall prim size <= 0", i))
            if cmd.parent_wall_id not in walls:
                out.append(
                    Violation(
                        "DanglingReference",
                        f"wall prim references wall {cmd.parent_wall_id}",
                        i,
                    )
                )
    return out


# ---------------------------------------------------------------------------
# normalization

def canonical_sort_key(cmd: Command):
    if isinstance(cmd, PrimCmd):
        return (cmd.bbox_id, cmd.prim_num)
    if isinstance(cmd, CurvedWallCmd):
        return tuple(getattr(cmd, f.name) for f in spec_of(cmd).fields)
    if isinstance(cmd, WallPrimCmd):
        return tuple(getattr(cmd, f.name) for f in spec_of(cmd).fields)
    return (cmd.id,)


def canonicalize(program: SceneProgram) -> SceneProgram:
    """Sort commands into the deterministic kind/id order and re-densify ids.

    Ids become 0..n-1 per kind; all cross references are rewritten.
    Idempotent, and invariant under permutation of the input commands.
    """
    violations = validate_scene(program)
    if violations:
        raise InvalidProgram(violations)
    by_kind = {kind: [] for kind in KIND_ORDER}
    for cmd in program.commands:
        by_kind[kind_of(cmd)].append(cmd)
    for kind in KIND_ORDER:
        by_kind[kind].sort(key=canonical_sort_key)
    wall_map = {w.id: new for new, w in enumerate(by_kind["wall"])}
    bbox_map = {b.id: new for new, b in enumerate(by_kind["bbox"])}
    out = []
    for kind in KIND_ORDER:
        for new_id, cmd in enumerate(by_kind[kind]):
            if isinstance(cmd, WallCmd):
                cmd = replace(cmd, id=new_id)
            elif isinstance(cmd, (DoorCmd, WindowCmd)):
                cmd = replace(
                    cmd,
                    id=new_id,
                    wall0_id=wall_map[cmd.wall0_id],
                    wall1_id=wall_map[cmd.wall1_id],
                )
            elif isinstance(cmd, BboxCmd):
                cmd = replace(cmd, id=new_id)
            elif isinstance(cmd, PrimCmd):
                cmd = replace(cmd, bbox_id=bbox_map[cmd.bbox_id])
            elif isinstance(cmd, WallPrimCmd):
                cmd = replace(cmd, parent_wall_id=wall_map[cmd.parent_wall_id])
            out.append(cmd)
    return SceneProgram(tuple(out), program.resolution)


def quantize_value(x: float, res: float) -> float:
    return round(x / res) * res


def quantize_angle(deg: float) -> float:
    return (round(deg / ANGLE_RESOLUTION) * ANGLE_RESOLUTION) % 360.0


def quantize_scene(program: SceneProgram, res: float | None = None) -> SceneProgram:
    """Snap every length to the ``res`` grid and every angle to 1 degree."""
    if res is None:
        res = program.resolution
    if res <= 0:
        raise ValueError("resolution must be positive")
    out = []
    for cmd in program.commands:
        updates = {}
        for field in spec_of(cmd).fields:
            value = getattr(cmd, field.name)
            if field.ftype == LENGTH:
                updates[field.name] = quantize_value(value, res)
            elif field.ftype == ANGLE:
                updates[field.name] = quantize_angle(value)
        out.append(replace(cmd, **updates))
    return SceneProgram(tuple(out), res)


def world_minimum(program: SceneProgram) -> tuple[float, float, float]:
    """Per-axis minimum over all world-positioned fields (0 if none)."""
    mins = {"x": [], "y": [], "z": []}
    for cmd in program.commands:
        for field in spec_of(cmd).fields:
            if field.group is not None:
                mins[field.axis].append(getattr(cmd, field.name))
    return tuple(min(mins[a]) if mins[a] else 0.0 for a in ("x", "y", "z"))


def translate(program: SceneProgram, offset) -> SceneProgram:
    """Translate all world-positioned fields by ``offset`` (3-vector)."""
    ox, oy, oz = offset
    delta = {"x": ox, "y": oy, "z": oz}
    out = []
    for cmd in program.commands:
        updates = {}
        for field in spec_of(cmd).fields:
            if field.group is not None:
                updates[field.name] = getattr(cmd, field.name) + delta[field.axis]
        out.append(replace(cmd, **updates) if updates else cmd)
    return SceneProgram(tuple(out), program.resolution)


def normalize_origin(program: SceneProgram) -> SceneProgram:
    """Translate the scene so its minimum x, y, z coordinate is zero."""
    mn = world_minimum(program)
    if mn == (0.0, 0.0, 0.0):
        return program
    return translate(program, (-mn[0], -mn[1], -mn[2]))


def apply_z_rotation(program: SceneProgram, theta: float, pivot=(0.0, 0.0)) -> SceneProgram:
    """Rotate the scene about the vertical axis through ``pivot`` by ``theta`` degrees.

    Positional fields rotate; ``angle_z`` fields increment modulo 360; sizes,
    heights, and wall-local fields are unchanged.
    """
    if theta % 360.0 == 0.0:
        return program
    px, py = pivot
    c = math.cos(math.radians(theta))
    s = math.sin(math.radians(theta))
    out = []
    for cmd in program.commands:
        spec = spec_of(cmd)
        updates = {}
        groups = {}
        for field in spec.fields:
            if field.group is not None and field.axis in ("x", "y"):
                groups.setdefault(field.group, {})[field.axis] = field.name
        for axes in groups.values():
            x = getattr(cmd, axes["x"])
            y = getattr(cmd, axes["y"])
            dx, dy = x - px, y - py
            updates[axes["x"]] = px + dx * c - dy * s
            updates[axes["y"]] = py + dx * s + dy * c
        if isinstance(cmd, (BboxCmd, PrimCmd)):
            updates["angle_z"] = (cmd.angle_z + theta) % 360.0
        out.append(replace(cmd, **updates) if updates else cmd)
    return SceneProgram(tuple(out), program.resolution)
