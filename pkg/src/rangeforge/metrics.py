"""Detection-quality and density metrics over distance ranges.

Implements a single well-defined protocol: rotated bird's-eye-view
intersection times vertical overlap for 3D IoU, greedy score-ordered
matching, and interpolated average precision sampled at a fixed number of
recall positions. Per-range AP buckets objects by planar distance of the
ground-truth center; object density statistics bucket by 3D distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidApVector, NegativeScore, UnknownClass
from .geometry import PointCloud, RangeSpec

DEFAULT_IOU_THRESHOLDS = {
    "vehicle": 0.7,
    "car": 0.7,
    "bus": 0.7,
    "truck": 0.7,
    "pedestrian": 0.3,
    "cyclist": 0.5,
}


@dataclass(frozen=True)
class ApVector:
    """Overall average precision plus one AP per distance ring, all in [0, 1].

    Rings without ground truth report 0 rather than NaN.
    """

    overall: float
    ranges: tuple

    def __post_init__(self):
        object.__setattr__(self, "overall", float(self.overall))
        object.__setattr__(self, "ranges", tuple(float(r) for r in self.ranges))
        for v in (self.overall, *self.ranges):
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise InvalidApVector(f"AP value {v} outside [0, 1]")

    @classmethod
    def zeros(cls, n_rings: int = 5) -> "ApVector":
        return cls(0.0, (0.0,) * n_rings)

    def to_dict(self) -> dict:
        return {"overall": self.overall, "ranges": list(self.ranges)}

    @classmethod
    def from_dict(cls, d: dict) -> "ApVector":
        try:
            return cls(float(d["overall"]), tuple(float(v) for v in d["ranges"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidApVector(f"malformed AP document: {exc}") from exc


def _normalize_yaw(yaw: float) -> float:
    wrapped = (yaw + math.pi) % (2.0 * math.pi) - math.pi
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center, (length, width, height), yaw about +Z.

    ``score`` is present on detections and absent (None) on ground truth.
    """

    center: tuple
    dims: tuple
    yaw: float
    class_label: str
    score: Optional[float] = None
    frame_id: str = ""

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        dims = tuple(float(d) for d in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims must have three components")
        if any(d <= 0 for d in dims):
            raise ValueError(f"box dims must be positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", _normalize_yaw(float(self.yaw)))

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def bev_corners(self) -> np.ndarray:
        """(4, 2) XY corners, counter-clockwise."""
        half_l, half_w = self.dims[0] / 2.0, self.dims[1] / 2.0
        local = np.array(
            [[half_l, half_w], [-half_l, half_w], [-half_l, -half_w], [half_l, -half_w]]
        )
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])

    def z_interval(self) -> Tuple[float, float]:
        half_h = self.dims[2] / 2.0
        return self.center[2] - half_h, self.center[2] + half_h


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon by a convex CCW polygon."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a, b = clip[i], clip[(i + 1) % n]
        edge = b - a

        def side(p):
            # >= 0 on or left of the edge (inside for a CCW clip polygon)
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        inputs, output = output, []
        prev = inputs[-1]
        f_prev = side(prev)
        for cur in inputs:
            f_cur = side(cur)
            if (f_cur >= 0.0) != (f_prev >= 0.0) and f_prev != f_cur:
                t = f_prev / (f_prev - f_cur)
                output.append(prev + t * (cur - prev))
            if f_cur >= 0.0:
                output.append(cur)
            prev, f_prev = cur, f_cur
    return np.array(output) if output else np.empty((0, 2))


def bev_iou(a: Box3D, b: Box3D) -> float:
    """3D IoU from rotated-rectangle overlap in XY times vertical overlap."""
    inter_area = _polygon_area(_clip_polygon(a.bev_corners(), b.bev_corners()))
    if inter_area <= 0.0:
        return 0.0
    za0, za1 = a.z_interval()
    zb0, zb1 = b.z_interval()
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    inter = inter_area * dz
    union = a.volume + b.volume - inter
    return min(max(inter / union, 0.0), 1.0)


def points_in_box(cloud: PointCloud, box: Box3D, tolerance: float = 1e-9) -> int:
    """Number of cloud points inside the oriented box, boundary inclusive."""
    rel = cloud.xyz - np.array(box.center)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = c * rel[:, 0] + s * rel[:, 1]
    v = -s * rel[:, 0] + c * rel[:, 1]
    w = rel[:, 2]
    inside = (
        (np.abs(u) <= box.dims[0] / 2.0 + tolerance)
        & (np.abs(v) <= box.dims[1] / 2.0 + tolerance)
        & (np.abs(w) <= box.dims[2] / 2.0 + tolerance)
    )
    return int(np.count_nonzero(inside))


@dataclass(frozen=True)
class EvalConfig:
    """Per-class IoU thresholds, range bucketing, and recall sampling."""

    iou_thresholds: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS)
    )
    range_spec: RangeSpec = field(default_factory=RangeSpec)
    recall_positions: int = 40

    def __post_init__(self):
        for cls_name, thr in self.iou_thresholds.items():
            if not 0.0 < thr <= 1.0:
                raise ValueError(f"IoU threshold for {cls_name!r} outside (0, 1]: {thr}")
        if self.recall_positions < 1:
            raise ValueError("recall_positions must be >= 1")

    @property
    def classes(self):
        return set(self.iou_thresholds)


@dataclass(frozen=True)
class DensityStats:
    """Mean in-box point counts per (class, ring); empty buckets are absent."""

    mean_points: Dict[Tuple[str, int], float]
    box_counts: Dict[Tuple[str, int], int]
    boundaries: tuple

    def ring_label(self, ring: int) -> str:
        return f"[{self.boundaries[ring]:g},{self.boundaries[ring + 1]:g})"

    def to_dict(self) -> dict:
        classes: Dict[str, dict] = {}
        for (cls_name, ring), mean in sorted(self.mean_points.items()):
            classes.setdefault(cls_name, {})[self.ring_label(ring)] = {
                "mean_points": mean,
                "boxes": self.box_counts[(cls_name, ring)],
            }
        return {"boundaries": list(self.boundaries), "classes": classes}


def density_stats(frames, spec: RangeSpec = None) -> DensityStats:
    """Mean number of points inside ground-truth boxes per class and range.

    ``frames`` yields (cloud, boxes) pairs. Boxes are bucketed by the 3D
    distance of their center from the sensor; boxes at or past the last edge
    are ignored.
    """
    if spec is None:
        spec = RangeSpec()
    sums: Dict[Tuple[str, int], float] = {}
    counts: Dict[Tuple[str, int], int] = {}
    for cloud, boxes in frames:
        for box in boxes:
            dist = math.sqrt(sum(c * c for c in box.center))
            ring = int(spec.ring_of(dist))
            if ring < 0 or ring >= spec.n_rings:
                continue
            key = (box.class_label, ring)
            sums[key] = sums.get(key, 0.0) + points_in_box(cloud, box)
            counts[key] = counts.get(key, 0) + 1
    means = {key: sums[key] / counts[key] for key in sums}
    return DensityStats(means, counts, spec.boundaries)


@dataclass(frozen=True)
class EvalResult:
    """Per-class AP vectors plus their unweighted class mean."""

    per_class: Dict[str, ApVector]
    mean_ap: ApVector


def _average_precision(tp_flags: Sequence[bool], n_gt: int, positions: int) -> float:
    """Interpolated AP over evenly spaced recall positions (1/R .. 1)."""
    if n_gt == 0:
        return 0.0
    precisions = []
    recalls = []
    tp = 0
    for k, flag in enumerate(tp_flags):
        tp += 1 if flag else 0
        precisions.append(tp / (k + 1))
        recalls.append(tp / n_gt)
    ap = 0.0
    for i in range(positions):
        r = (i + 1) / positions
        best = 0.0
        for prec, rec in zip(precisions, recalls):
            if rec >= r and prec > best:
                best = prec
        ap += best
    return ap / positions


def _match_class(dets: List[Box3D], gts: List[Box3D], threshold: float):
    """Greedy score-ordered matching within frames.

    Returns detections in descending-score order with a TP flag and the
    matched ground-truth index (into ``gts``) or None. Ties on score keep
    input order; ties on IoU pick the earlier ground-truth box.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    gt_by_frame: Dict[str, List[int]] = {}
    for gi, gt in enumerate(gts):
        gt_by_frame.setdefault(gt.frame_id, []).append(gi)
    taken = [False] * len(gts)
    matches = []
    for di in order:
        det = dets[di]
        best_iou, best_gi = 0.0, None
        for gi in gt_by_frame.get(det.frame_id, ()):
            if taken[gi]:
                continue
            iou = bev_iou(det, gts[gi])
            if iou >= threshold and iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi is not None:
            taken[best_gi] = True
        matches.append((di, best_gi))
    return matches


def _planar_ring(box: Box3D, spec: RangeSpec) -> int:
    return int(spec.ring_of(math.hypot(box.center[0], box.center[1])))


def per_range_ap(
    detections: Iterable[Box3D],
    ground_truth: Iterable[Box3D],
    config: EvalConfig = None,
) -> EvalResult:
    """Average precision per class, overall and per distance ring.

    Detections need scores; both sets must use classes known to the config.
    Matched detections inherit their ground-truth box's ring; unmatched
    detections bucket by their own center. Objects at or past the last ring
    edge count toward the overall AP only. The mean vector averages, for
    each component, the classes that have ground truth in that component's
    scope.
    """
    if config is None:
        config = EvalConfig()
    detections = list(detections)
    ground_truth = list(ground_truth)
    for box in detections:
        if box.class_label not in config.classes:
            raise UnknownClass(f"detection class {box.class_label!r} not configured")
        if box.score is None or box.score < 0:
            raise NegativeScore(f"detection score missing or negative: {box.score!r}")
    for box in ground_truth:
        if box.class_label not in config.classes:
            raise UnknownClass(f"ground-truth class {box.class_label!r} not configured")

    spec = config.range_spec
    n_rings = spec.n_rings
    per_class: Dict[str, ApVector] = {}
    seen_classes = sorted(
        {b.class_label for b in detections} | {b.class_label for b in ground_truth}
    )
    gt_rings: Dict[str, List[int]] = {}
    for cls_name in seen_classes:
        dets = [d for d in detections if d.class_label == cls_name]
        gts = [g for g in ground_truth if g.class_label == cls_name]
        matches = _match_class(dets, gts, config.iou_thresholds[cls_name])
        rings = [_planar_ring(g, spec) for g in gts]
        gt_rings[cls_name] = rings

        overall = _average_precision(
            [gi is not None for _, gi in matches], len(gts), config.recall_positions
        )
        range_ap = []
        for ring in range(n_rings):
            flags = []
            for di, gi in matches:
                bucket = rings[gi] if gi is not None else _planar_ring(dets[di], spec)
                if bucket == ring:
                    flags.append(gi is not None)
            n_gt_ring = sum(1 for r in rings if r == ring)
            range_ap.append(
                _average_precision(flags, n_gt_ring, config.recall_positions)
            )
        per_class[cls_name] = ApVector(overall, tuple(range_ap))

    def mean_over(values: List[float]) -> float:
        return sum(values) / len(values) if values else 0.0

    overall_mean = mean_over(
        [per_class[c].overall for c in seen_classes if gt_rings[c]]
    )
    ring_means = tuple(
        mean_over(
            [
                per_class[c].ranges[ring]
                for c in seen_classes
                if any(r == ring for r in gt_rings[c])
            ]
        )
        for ring in range(n_rings)
    )
    return EvalResult(per_class, ApVector(overall_mean, ring_means))
