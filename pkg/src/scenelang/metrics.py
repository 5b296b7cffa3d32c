"""Layout and detection metrics.

Layout entities (walls, doors, windows) are compared with a bottleneck
corner distance: the smallest possible value of the maximum corner-to-corner
distance over one-to-one corner assignments.  Scene-level scores are F1 at a
distance threshold, and the average of F1 over a fixed threshold ladder.

Oriented boxes are gravity aligned, so 3D IoU reduces to a 2D convex polygon
intersection (Sutherland-Hodgman clipping + shoelace area) times the
vertical overlap.  Detection quality is F1 at an IoU threshold; there are no
confidence scores, so ranked average precision is deliberately out of scope
and every metric here is invariant to scene evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ClassMismatch, EmptyGeometry
from .geom import EntityCorners, Mesh, OrientedBox

DEFAULT_THRESHOLDS = (
    0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10,
    0.15, 0.25, 0.30, 0.50, 0.75, 1.00,
)

LAYOUT_CLASSES = ("wall", "door", "window")

def _stable_mean(values):
    """Mean reduced in sorted order: bit-identical under input permutation."""
    arr = np.sort(np.asarray(values, dtype=float))
    return float(arr.sum() / len(arr))


# ---------------------------------------------------------------------------
# entity distance

def _feasible(ok: np.ndarray) -> bool:
    """Perfect matching existence on a small boolean bipartite matrix."""
    n = ok.shape[0]
    match = [-1] * n

    def augment(row, seen):
        for col in range(n):
            if ok[row, col] and not seen[col]:
                seen[col] = True
                if match[col] == -1 or augment(match[col], seen):
                    match[col] = row
                    return True
        return False

    for row in range(n):
        if not augment(row, [False] * n):
            return False
    return True


def bottleneck_assignment_cost(cost: np.ndarray) -> float:
    """Smallest c such that a perfect matching exists using entries <= c.

    Binary search over the sorted candidate entries with a matching
    feasibility check at each probe; ties resolve to the lowest candidate.
    """
    values = np.unique(cost)
    lo, hi = 0, len(values) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _feasible(cost <= values[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(values[lo])


def entity_distance(e1: EntityCorners, e2: EntityCorners) -> float:
    """Bottleneck corner distance between two 4-corner entities of one class."""
    if e1.cls != e2.cls:
        raise ClassMismatch(f"{e1.cls} vs {e2.cls}")
    cost = np.linalg.norm(e1.corners[:, None, :] - e2.corners[None, :, :], axis=2)
    return bottleneck_assignment_cost(cost)


# ---------------------------------------------------------------------------
# layout F1

@dataclass
class LayoutSceneReport:
    thresholds: tuple
    f1_per_threshold: dict            # class -> list of F1 per threshold
    mean_f1_per_threshold: list       # mean over present classes
    avg_f1_per_class: dict            # class -> mean over thresholds
    mean_avg_f1: float
    matched_distances: dict           # class -> list of matched pair distances
    counts: dict                      # class -> (n_pred, n_gt)

    def to_dict(self):
        return {
            "thresholds": list(self.thresholds),
            "f1_per_threshold": {k: list(v) for k, v in self.f1_per_threshold.items()},
            "mean_f1_per_threshold": list(self.mean_f1_per_threshold),
            "avg_f1_per_class": dict(self.avg_f1_per_class),
            "mean_avg_f1": self.mean_avg_f1,
            "matched_distances": {
                k: [float(d) for d in v] for k, v in self.matched_distances.items()
            },
            "counts": {k: list(v) for k, v in self.counts.items()},
        }


def _match_distances(pred, gt):
    """Optimal one-to-one matching minimizing total entity distance.

    Returns the matched distance list (length = min(len(pred), len(gt))).
    """
    if not pred or not gt:
        return []
    cost = np.array([[entity_distance(p, g) for g in gt] for p in pred])
    rows, cols = linear_sum_assignment(cost)
    return [float(cost[r, c]) for r, c in zip(rows, cols)]


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def _split_by_class(entities):
    out = {}
    for e in entities:
        out.setdefault(e.cls, []).append(e)
    return out


def layout_f1_at_threshold(pred, gt, threshold: float):
    """Per-class and mean F1 at one entity-distance threshold.

    Matching is one-to-one minimizing total distance; a matched pair counts
    as a true positive iff its distance is <= threshold, otherwise it
    contributes one false positive and one false negative.  Classes absent
    from both sides are skipped.
    """
    report = evaluate_layout(pred, gt, thresholds=(threshold,))
    per_class = {c: v[0] for c, v in report.f1_per_threshold.items()}
    return per_class, report.mean_f1_per_threshold[0]


def average_f1(pred, gt, thresholds=DEFAULT_THRESHOLDS):
    """Mean over the threshold ladder of the per-threshold F1."""
    report = evaluate_layout(pred, gt, thresholds)
    return dict(report.avg_f1_per_class), report.mean_avg_f1


def evaluate_layout(pred, gt, thresholds=DEFAULT_THRESHOLDS) -> LayoutSceneReport:
    pred_by_class = _split_by_class(pred)
    gt_by_class = _split_by_class(gt)
    classes = [
        c for c in LAYOUT_CLASSES if c in pred_by_class or c in gt_by_class
    ]
    f1s = {}
    matched = {}
    counts = {}
    for cls in classes:
        p = pred_by_class.get(cls, [])
        g = gt_by_class.get(cls, [])
        counts[cls] = (len(p), len(g))
        distances = _match_distances(p, g)
        matched[cls] = distances
        row = []
        for thr in thresholds:
            tp = sum(1 for d in distances if d <= thr)
            fp = len(p) - tp
            fn = len(g) - tp
            row.append(_f1(tp, fp, fn))
        f1s[cls] = row
    if classes:
        mean_rows = [
            float(np.mean([f1s[c][i] for c in classes]))
            for i in range(len(thresholds))
        ]
    else:
        mean_rows = [1.0] * len(thresholds)  # empty vs empty: perfect agreement
    avg_per_class = {c: float(np.mean(f1s[c])) for c in classes}
    mean_avg = float(np.mean(mean_rows))
    return LayoutSceneReport(
        tuple(thresholds), f1s, mean_rows, avg_per_class, mean_avg, matched, counts
    )


# ---------------------------------------------------------------------------
# oriented box IoU

def _footprint(box: OrientedBox) -> np.ndarray:
    c = math.cos(math.radians(box.yaw))
    s = math.sin(math.radians(box.yaw))
    hx, hy = box.extents[0] / 2.0, box.extents[1] / 2.0
    local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    return local @ np.array([[c, s], [-s, c]]) + box.center[:2]


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against a convex CCW polygon."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = b - a
        if not output:
            break
        inputs = output
        output = []

        def inside(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= 0.0

        for j, cur in enumerate(inputs):
            prev = inputs[j - 1]
            cur_in, prev_in = inside(cur), inside(prev)
            if cur_in != prev_in:
                d = cur - prev
                denom = edge[0] * d[1] - edge[1] * d[0]
                if abs(denom) > 1e-15:
                    t = (edge[0] * (a[1] - prev[1]) - edge[1] * (a[0] - prev[0])) / denom
                    output.append(prev + t * d)
            if cur_in:
                output.append(cur)
    return np.array(output) if output else np.zeros((0, 2))


def _shoelace(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def obb_iou(b1: OrientedBox, b2: OrientedBox) -> float:
    """IoU of two gravity-aligned oriented boxes."""
    z_overlap = min(
        b1.center[2] + b1.extents[2] / 2.0, b2.center[2] + b2.extents[2] / 2.0
    ) - max(
        b1.center[2] - b1.extents[2] / 2.0, b2.center[2] - b2.extents[2] / 2.0
    )
    if z_overlap <= 0.0:
        return 0.0
    inter_area = _shoelace(_clip_polygon(_footprint(b1), _footprint(b2)))
    if inter_area <= 0.0:
        return 0.0
    inter = inter_area * z_overlap
    union = b1.volume + b2.volume - inter
    return float(inter / union) if union > 0 else 0.0


# ---------------------------------------------------------------------------
# detection F1

@dataclass
class DetSceneReport:
    iou_thresholds: tuple
    per_class: dict        # cls -> {thr: {"tp", "fp", "fn", "f1"}}
    mean_f1: dict          # thr -> mean F1 over present classes

    def to_dict(self):
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "per_class": {
                str(c): {str(t): dict(v) for t, v in thrs.items()}
                for c, thrs in self.per_class.items()
            },
            "mean_f1": {str(t): v for t, v in self.mean_f1.items()},
        }


def detection_f1(pred, gt, iou_thresholds=(0.25, 0.5)) -> DetSceneReport:
    """Class-wise F1 at IoU thresholds under optimal one-to-one matching.

    Matching maximizes total IoU per class once; each threshold is then
    applied to the matched pairs.  Classes present in either side count.
    """
    if isinstance(iou_thresholds, float):
        iou_thresholds = (iou_thresholds,)
    pred_by_class = {}
    gt_by_class = {}
    for b in pred:
        pred_by_class.setdefault(b.cls, []).append(b)
    for b in gt:
        gt_by_class.setdefault(b.cls, []).append(b)
    classes = sorted(set(pred_by_class) | set(gt_by_class))
    per_class = {}
    for cls in classes:
        p = pred_by_class.get(cls, [])
        g = gt_by_class.get(cls, [])
        ious = []
        if p and g:
            mat = np.array([[obb_iou(pb, gb) for gb in g] for pb in p])
            rows, cols = linear_sum_assignment(-mat)
            ious = [float(mat[r, c]) for r, c in zip(rows, cols)]
        per_class[cls] = {}
        for thr in iou_thresholds:
            tp = sum(1 for v in ious if v >= thr)
            per_class[cls][thr] = {
                "tp": tp,
                "fp": len(p) - tp,
                "fn": len(g) - tp,
                "f1": _f1(tp, len(p) - tp, len(g) - tp),
            }
    mean_f1 = {}
    for thr in iou_thresholds:
        vals = [per_class[c][thr]["f1"] for c in classes]
        mean_f1[thr] = float(np.mean(vals)) if vals else 1.0
    return DetSceneReport(tuple(iou_thresholds), per_class, mean_f1)


# ---------------------------------------------------------------------------
# voxel occupancy IoU

_BOX_AXES = np.eye(3)


def _occupied_cells(triangles: np.ndarray, origin, res: float, dims) -> np.ndarray:
    """Mark grid cells intersected by any triangle (separating axis test)."""
    grid = np.zeros(dims, dtype=bool)
    half = res / 2.0
    for tri in triangles:
        lo = np.clip(np.floor((tri.min(axis=0) - origin) / res).astype(int), 0, np.array(dims) - 1)
        hi = np.clip(np.floor((tri.max(axis=0) - origin) / res).astype(int), 0, np.array(dims) - 1)
        xs = np.arange(lo[0], hi[0] + 1)
        ys = np.arange(lo[1], hi[1] + 1)
        zs = np.arange(lo[2], hi[2] + 1)
        cx, cy, cz = np.meshgrid(xs, ys, zs, indexing="ij")
        centers = (
            np.stack([cx, cy, cz], axis=-1).reshape(-1, 3) * res
            + origin
            + half
        )
        edges = np.array([tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]])
        axes = [_BOX_AXES[0], _BOX_AXES[1], _BOX_AXES[2], np.cross(edges[0], edges[1])]
        for e in edges:
            for ax in _BOX_AXES:
                axes.append(np.cross(e, ax))
        keep = np.ones(len(centers), dtype=bool)
        for ax in axes:
            norm = np.linalg.norm(ax)
            if norm < 1e-12:
                continue
            proj = tri @ ax                                # (3,)
            cproj = centers @ ax                           # (M,)
            # slack keeps grid-aligned faces from dropping boundary cells
            radius = half * np.abs(ax).sum() + 1e-9 * norm
            tmin, tmax = proj.min(), proj.max()
            keep &= (tmax - cproj >= -radius) & (tmin - cproj <= radius)
            if not keep.any():
                break
        if keep.any():
            sel = np.stack([cx, cy, cz], axis=-1).reshape(-1, 3)[keep]
            grid[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return grid


def voxel_geometry_iou(meshes1, meshes2, res: float = 0.05) -> float:
    """IoU of surface-occupied voxel sets over the joint bounding box."""
    if res <= 0:
        raise ValueError("resolution must be positive")

    def _tris(meshes):
        if isinstance(meshes, Mesh):
            meshes = [meshes]
        arrs = [m.vertices[m.triangles] for m in meshes if len(m.triangles) > 0]
        return np.concatenate(arrs, axis=0) if arrs else np.zeros((0, 3, 3))

    t1, t2 = _tris(meshes1), _tris(meshes2)
    if len(t1) == 0 or len(t2) == 0:
        raise EmptyGeometry("both mesh sets must contain triangles")
    both = np.concatenate([t1, t2], axis=0).reshape(-1, 3)
    origin = both.min(axis=0) - res
    top = both.max(axis=0) + res
    dims = tuple(np.maximum(1, np.ceil((top - origin) / res).astype(int)))
    g1 = _occupied_cells(t1, origin, res, dims)
    g2 = _occupied_cells(t2, origin, res, dims)
    if not g1.any() or not g2.any():
        raise EmptyGeometry("a mesh set occupies no cells")
    inter = np.logical_and(g1, g2).sum()
    union = np.logical_or(g1, g2).sum()
    return float(inter / union)


# ---------------------------------------------------------------------------
# dataset aggregation

@dataclass
class LayoutDatasetReport:
    n_scenes: int
    mean_avg_f1: float
    avg_f1_per_class: dict
    mean_f1_per_threshold: list
    thresholds: tuple
    distance_percentiles: dict  # class -> {"median", "p90", "count"}

    def to_dict(self):
        return {
            "n_scenes": self.n_scenes,
            "mean_avg_f1": self.mean_avg_f1,
            "avg_f1_per_class": dict(self.avg_f1_per_class),
            "mean_f1_per_threshold": list(self.mean_f1_per_threshold),
            "thresholds": list(self.thresholds),
            "distance_percentiles": {
                k: dict(v) for k, v in self.distance_percentiles.items()
            },
        }


def aggregate_layout(reports) -> LayoutDatasetReport:
    """Unweighted mean of per-scene values; distance percentiles pooled."""
    if not reports:
        raise ValueError("at least one scene report required")
    thresholds = reports[0].thresholds
    mean_avg = _stable_mean([r.mean_avg_f1 for r in reports])
    per_thr = [
        _stable_mean([r.mean_f1_per_threshold[i] for r in reports])
        for i in range(len(thresholds))
    ]
    per_class = {}
    pooled = {}
    for cls in LAYOUT_CLASSES:
        vals = [r.avg_f1_per_class[cls] for r in reports if cls in r.avg_f1_per_class]
        if vals:
            per_class[cls] = _stable_mean(vals)
        dists = [d for r in reports for d in r.matched_distances.get(cls, [])]
        if dists:
            pooled[cls] = {
                "median": float(np.percentile(dists, 50)),
                "p90": float(np.percentile(dists, 90)),
                "count": len(dists),
            }
    return LayoutDatasetReport(
        len(reports), mean_avg, per_class, per_thr, thresholds, pooled
    )


@dataclass
class DetDatasetReport:
    n_scenes: int
    mean_f1: dict          # thr -> mean over scenes of per-scene mean F1
    per_class_f1: dict     # cls -> thr -> mean over scenes where class present

    def to_dict(self):
        return {
            "n_scenes": self.n_scenes,
            "mean_f1": {str(t): v for t, v in self.mean_f1.items()},
            "per_class_f1": {
                str(c): {str(t): v for t, v in thrs.items()}
                for c, thrs in self.per_class_f1.items()
            },
        }


def aggregate_detection(reports) -> DetDatasetReport:
    if not reports:
        raise ValueError("at least one scene report required")
    thresholds = reports[0].iou_thresholds
    mean_f1 = {
        thr: _stable_mean([r.mean_f1[thr] for r in reports]) for thr in thresholds
    }
    classes = sorted({c for r in reports for c in r.per_class})
    per_class = {}
    for cls in classes:
        per_class[cls] = {}
        for thr in thresholds:
            vals = [r.per_class[cls][thr]["f1"] for r in reports if cls in r.per_class]
            per_class[cls][thr] = _stable_mean(vals)
    return DetDatasetReport(len(reports), mean_f1, per_class)


def layout_csv(names, reports) -> str:
    """Per-scene rows: one line per scene with the headline layout scores."""
    header = ["scene", "mean_avg_f1"]
    header += [f"avg_f1_{cls}" for cls in LAYOUT_CLASSES]
    header += [f"f1_at_{int(round(t * 100))}cm" for t in reports[0].thresholds]
    lines = [",".join(header)]
    for name, rep in zip(names, reports):
        row = [name, f"{rep.mean_avg_f1:.6f}"]
        for cls in LAYOUT_CLASSES:
            value = rep.avg_f1_per_class.get(cls)
            row.append("" if value is None else f"{value:.6f}")
        row += [f"{v:.6f}" for v in rep.mean_f1_per_threshold]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def detection_csv(names, reports) -> str:
    header = ["scene"] + [
        f"mean_f1_at_{thr}" for thr in reports[0].iou_thresholds
    ]
    lines = [",".join(header)]
    for name, rep in zip(names, reports):
        row = [name] + [f"{rep.mean_f1[t]:.6f}" for t in rep.iou_thresholds]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
