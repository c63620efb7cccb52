import math

import numpy as np
import pytest

from rangeforge.errors import InvalidApVector, NegativeScore, UnknownClass
from rangeforge.geometry import PointCloud, RangeSpec
from rangeforge.metrics import (
    ApVector,
    Box3D,
    EvalConfig,
    bev_iou,
    density_stats,
    per_range_ap,
    points_in_box,
)

from oracles import ap_reference, iou_rasterized, points_in_box_reference


def box(x=0.0, y=0.0, z=0.0, l=1.0, w=1.0, h=1.0, yaw=0.0, cls="car", score=None, frame="f0"):
    return Box3D((x, y, z), (l, w, h), yaw, cls, score=score, frame_id=frame)


class TestBevIou:
    def test_identical(self):
        b = box(3, 4, 0, 4, 2, 1.5, yaw=0.7)
        assert abs(bev_iou(b, b) - 1.0) <= 1e-12

    def test_axis_aligned_slab(self):
        a = box(0, 0, 0)
        b = box(0.5, 0, 0)
        assert bev_iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_rotated_45_octagon(self):
        a = box(0, 0, 0)
        b = box(0, 0, 0, yaw=math.pi / 4)
        area = 2.0 * (math.sqrt(2.0) - 1.0)
        expected = area / (2.0 - area)
        assert bev_iou(a, b) == pytest.approx(expected, abs=1e-9)
        raster = iou_rasterized(a, b, cell=1e-3)
        assert bev_iou(a, b) == pytest.approx(raster, rel=1e-3)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = box(*rng.uniform(-2, 2, 3), *rng.uniform(0.5, 3, 3), yaw=rng.uniform(-3, 3))
            b = box(*rng.uniform(-2, 2, 3), *rng.uniform(0.5, 3, 3), yaw=rng.uniform(-3, 3))
            assert abs(bev_iou(a, b) - bev_iou(b, a)) <= 1e-12

    def test_disjoint(self):
        assert bev_iou(box(0, 0, 0), box(10, 0, 0)) == 0.0
        assert bev_iou(box(0, 0, 0), box(0, 0, 5)) == 0.0  # vertical miss

    def test_nested(self):
        outer = box(0, 0, 0, 4, 4, 4)
        inner = box(0, 0, 0, 2, 2, 2)
        assert bev_iou(outer, inner) == pytest.approx(8.0 / 64.0, abs=1e-12)

    def test_matches_raster_on_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = box(*rng.uniform(-1, 1, 3), *rng.uniform(0.8, 2.5, 3), yaw=rng.uniform(-3, 3))
            b = box(*rng.uniform(-1, 1, 3), *rng.uniform(0.8, 2.5, 3), yaw=rng.uniform(-3, 3))
            got = bev_iou(a, b)
            ref = iou_rasterized(a, b, cell=2e-3)
            assert got == pytest.approx(ref, abs=5e-3)


class TestPointsInBox:
    def test_center(self):
        cloud = PointCloud(np.array([[1.0, 2.0, 3.0, 0.0]]))
        assert points_in_box(cloud, box(1, 2, 3, 4, 2, 1)) == 1

    def test_corners_inclusive(self):
        b = box(5, -2, 1, 4, 2, 1.5, yaw=0.6)
        corners = []
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        for sx in (-1, 1):
            for sy in (-1, 1):
                for sz in (-1, 1):
                    u, v, w = sx * 2.0, sy * 1.0, sz * 0.75
                    corners.append(
                        [b.center[0] + c * u - s * v, b.center[1] + s * u + c * v, b.center[2] + w, 0.0]
                    )
        assert points_in_box(PointCloud(np.array(corners)), b) == 8

    def test_matches_reference(self):
        rng = np.random.default_rng(2)
        cloud = PointCloud.from_arrays(rng.uniform(-4, 4, size=(1000, 3)))
        b = box(0.5, -0.3, 0.2, 3, 2, 1.5, yaw=1.1)
        assert points_in_box(cloud, b) == points_in_box_reference(cloud, b)


class TestDensityStats:
    def test_single_box_mean(self):
        rng = np.random.default_rng(3)
        b = box(5, 0, 0, 4, 2, 1.5, cls="car")
        inside = np.column_stack(
            [
                rng.uniform(3.1, 6.9, 100),
                rng.uniform(-0.9, 0.9, 100),
                rng.uniform(-0.7, 0.7, 100),
            ]
        )
        cloud = PointCloud.from_arrays(inside)
        stats = density_stats([(cloud, [b])], RangeSpec())
        assert stats.mean_points[("car", 0)] == 100.0
        assert stats.box_counts[("car", 0)] == 1
        assert ("car", 1) not in stats.mean_points

    def test_buckets_by_3d_distance(self):
        # planar 9.9 m but z pushes the 3D distance past 10
        b = box(9.9, 0, 4.0, 2, 2, 2, cls="car")
        cloud = PointCloud.from_arrays(np.array([[9.9, 0.0, 4.0]]))
        stats = density_stats([(cloud, [b])], RangeSpec())
        assert ("car", 1) in stats.mean_points
        assert ("car", 0) not in stats.mean_points

    def test_beyond_ignored(self):
        b = box(60, 0, 0, 2, 2, 2, cls="car")
        cloud = PointCloud.from_arrays(np.empty((0, 3)))
        stats = density_stats([(cloud, [b])], RangeSpec())
        assert stats.mean_points == {}


def perfect_detections(gts):
    return [
        Box3D(g.center, g.dims, g.yaw, g.class_label, score=1.0, frame_id=g.frame_id)
        for g in gts
    ]


def random_instance(rng, n_frames=3, max_boxes=5):
    classes = ["car", "pedestrian", "cyclist"]
    gts, dets = [], []
    for f in range(n_frames):
        frame = f"f{f}"
        for b in range(rng.integers(0, max_boxes + 1)):
            cls = classes[rng.integers(0, len(classes))]
            dist = rng.uniform(2, 55)
            az = rng.uniform(0, 2 * math.pi)
            center = (dist * math.cos(az), dist * math.sin(az), rng.uniform(-1, 1))
            dims = tuple(rng.uniform(0.8, 4.0, 3))
            yaw = rng.uniform(-math.pi, math.pi)
            gts.append(Box3D(center, dims, yaw, cls, frame_id=frame))
            # detection near (sometimes exactly on, sometimes off) the truth
            kind = rng.integers(0, 3)
            if kind == 0:
                det_center, det_yaw = center, yaw
            elif kind == 1:
                det_center = (
                    center[0] + rng.uniform(-0.4, 0.4),
                    center[1] + rng.uniform(-0.4, 0.4),
                    center[2],
                )
                det_yaw = yaw + rng.uniform(-0.1, 0.1)
            else:
                det_center = (center[0] + 20, center[1], center[2])
                det_yaw = yaw
            dets.append(
                Box3D(
                    det_center, dims, det_yaw, cls,
                    score=float(rng.uniform(0.1, 1.0)) + 1e-6 * len(dets),
                    frame_id=frame,
                )
            )
    return dets, gts


class TestPerRangeAp:
    def test_perfect_detector(self):
        gts = [
            box(5, 0, 0, cls="car"),
            box(15, 0, 0, cls="car"),
            box(25, 0, 0, cls="pedestrian"),
            box(45, 0, 0, cls="cyclist"),
        ]
        result = per_range_ap(perfect_detections(gts), gts)
        assert result.mean_ap.overall == 1.0
        for cls_name, ap in result.per_class.items():
            assert ap.overall == 1.0
        assert result.mean_ap.ranges[0] == 1.0
        assert result.mean_ap.ranges[2] == 1.0
        assert result.mean_ap.ranges[4] == 1.0
        assert result.mean_ap.ranges[3] == 0.0  # no ground truth there

    def test_zero_detections(self):
        gts = [box(5, 0, 0, cls="car")]
        result = per_range_ap([], gts)
        assert result.mean_ap.overall == 0.0
        assert result.per_class["car"].overall == 0.0

    def test_matches_reference(self):
        rng = np.random.default_rng(4)
        config = EvalConfig()
        for _ in range(40):
            dets, gts = random_instance(rng)
            got = per_range_ap(dets, gts, config)
            ref_per_class, (ref_overall, ref_ranges) = ap_reference(dets, gts, config)
            for cls_name, (overall, ranges) in ref_per_class.items():
                assert got.per_class[cls_name].overall == pytest.approx(overall, abs=1e-9)
                for a, b in zip(got.per_class[cls_name].ranges, ranges):
                    assert a == pytest.approx(b, abs=1e-9)
            assert got.mean_ap.overall == pytest.approx(ref_overall, abs=1e-9)
            for a, b in zip(got.mean_ap.ranges, ref_ranges):
                assert a == pytest.approx(b, abs=1e-9)

    def test_adding_true_positive_never_hurts(self):
        gts = [box(5, 0, 0, cls="car"), box(5, 6, 0, cls="car")]
        dets = [box(5, 0, 0, cls="car", score=0.9)]
        before = per_range_ap(dets, gts).per_class["car"].overall
        dets_plus = dets + [box(5, 6, 0, cls="car", score=0.5)]
        after = per_range_ap(dets_plus, gts).per_class["car"].overall
        assert after >= before

    def test_adding_false_positive_never_helps(self):
        gts = [box(5, 0, 0, cls="car")]
        dets = [box(5, 0, 0, cls="car", score=0.9)]
        before = per_range_ap(dets, gts).per_class["car"].overall
        dets_plus = dets + [box(35, 20, 0, cls="car", score=0.95)]
        after = per_range_ap(dets_plus, gts).per_class["car"].overall
        assert after <= before

    def test_score_scale_invariance(self):
        rng = np.random.default_rng(5)
        dets, gts = random_instance(rng)
        base = per_range_ap(dets, gts)
        scaled = [
            Box3D(d.center, d.dims, d.yaw, d.class_label, score=d.score * 2.0,
                  frame_id=d.frame_id)
            for d in dets
        ]
        doubled = per_range_ap(scaled, gts)
        assert doubled.mean_ap.to_dict() == base.mean_ap.to_dict()

    def test_bucket_gt_counts_cover_total(self):
        rng = np.random.default_rng(6)
        _, gts = random_instance(rng)
        spec = RangeSpec()
        in_rings = sum(
            1
            for g in gts
            if 0 <= spec.ring_of(math.hypot(g.center[0], g.center[1])) < spec.n_rings
        )
        beyond = len(gts) - in_rings
        assert in_rings + beyond == len(gts)

    def test_unknown_class(self):
        with pytest.raises(UnknownClass):
            per_range_ap([], [box(5, 0, 0, cls="unicorn")])

    def test_bad_scores(self):
        gts = [box(5, 0, 0, cls="car")]
        with pytest.raises(NegativeScore):
            per_range_ap([box(5, 0, 0, cls="car", score=-0.1)], gts)
        with pytest.raises(NegativeScore):
            per_range_ap([box(5, 0, 0, cls="car")], gts)  # score missing


class TestApVector:
    def test_bounds_checked(self):
        with pytest.raises(InvalidApVector):
            ApVector(1.2, (0, 0, 0, 0, 0))
        with pytest.raises(InvalidApVector):
            ApVector(0.5, (0, 0, float("nan"), 0, 0))

    def test_round_trip(self):
        ap = ApVector(0.5, (0.1, 0.2, 0.3, 0.4, 0.5))
        assert ApVector.from_dict(ap.to_dict()) == ap
