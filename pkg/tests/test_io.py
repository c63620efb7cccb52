import json
import struct

import numpy as np
import pytest

from rangeforge.errors import (
    DataError,
    InsufficientFrames,
    NonFiniteCoordinate,
    SchemaViolation,
    TruncatedFile,
)
from rangeforge.geometry import PointCloud
from rangeforge.io import (
    DatasetLayout,
    read_cloud,
    read_labels,
    read_manifest,
    select_subsets,
    write_cloud,
    write_labels,
    write_manifest,
)
from rangeforge.metrics import Box3D

from conftest import random_scan


class TestCloudIO:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        cloud = read_cloud(path)
        assert len(cloud) == 0
        assert cloud.frame_id == "empty"

    def test_two_known_points(self, tmp_path):
        path = tmp_path / "two.bin"
        values = (1.0, 2.0, 3.0, 0.5, -4.0, 5.5, 0.25, 1.0)
        path.write_bytes(struct.pack("<8f", *values))
        cloud = read_cloud(path)
        assert cloud.points.shape == (2, 4)
        assert cloud.points[0].tolist() == [1.0, 2.0, 3.0, 0.5]
        assert cloud.points[1].tolist() == [-4.0, 5.5, 0.25, 1.0]

    def test_round_trip_simulated_frame(self, tmp_path):
        cloud, _, _ = random_scan(40)
        path = tmp_path / "frame.bin"
        write_cloud(cloud, path)
        raw = path.read_bytes()
        again = read_cloud(path)
        write_cloud(again, path)
        assert path.read_bytes() == raw

    def test_truncated(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 18)
        with pytest.raises(TruncatedFile):
            read_cloud(path)

    def test_non_finite(self, tmp_path):
        path = tmp_path / "nan.bin"
        path.write_bytes(struct.pack("<4f", 1.0, float("nan"), 0.0, 0.0))
        with pytest.raises(NonFiniteCoordinate):
            read_cloud(path)


class TestLabelIO:
    def test_empty_array(self, tmp_path):
        path = tmp_path / "l.json"
        path.write_text("[]")
        assert read_labels(path) == []

    def test_one_box_round_trip(self, tmp_path):
        box = Box3D((1.0, 2.0, 3.0), (4.0, 2.0, 1.5), 0.3, "car", frame_id="l")
        path = tmp_path / "l.json"
        write_labels([box], path)
        loaded = read_labels(path)
        assert loaded == [box]

    def test_score_distinguishes_detections(self, tmp_path):
        gt = Box3D((1, 2, 3), (4, 2, 1.5), 0.0, "car", frame_id="l")
        det = Box3D((1, 2, 3), (4, 2, 1.5), 0.0, "car", score=0.8, frame_id="l")
        path = tmp_path / "l.json"
        write_labels([gt, det], path)
        loaded = read_labels(path)
        assert loaded[0].score is None
        assert loaded[1].score == 0.8

    @pytest.mark.parametrize(
        "doc,fragment",
        [
            ('{"not": "a list"}', "top level"),
            ('[{"class": "car"}]', "boxes[0].center"),
            ('[{"class": "car", "center": [1, 2], "dims": [1, 1, 1], "yaw": 0}]',
             "boxes[0].center"),
            ('[{"class": "car", "center": [1, 2, 3], "dims": [1, "x", 1], "yaw": 0}]',
             "boxes[0].dims[1]"),
            ('[{"class": "car", "center": [1, 2, 3], "dims": [1, 0, 1], "yaw": 0}]',
             "boxes[0].dims"),
            ('[{"class": 7, "center": [1, 2, 3], "dims": [1, 1, 1], "yaw": 0}]',
             "boxes[0].class"),
        ],
    )
    def test_schema_violations_cite_field(self, tmp_path, doc, fragment):
        path = tmp_path / "l.json"
        path.write_text(doc)
        with pytest.raises(SchemaViolation) as info:
            read_labels(path)
        assert fragment in str(info.value)


class TestDatasetLayout:
    def test_manifest_validates_points(self, tmp_path):
        layout = DatasetLayout(tmp_path).create()
        write_cloud(PointCloud(np.zeros((1, 4))), layout.points_path("a"))
        write_manifest(["a", "b"], layout.manifest_path)
        with pytest.raises(DataError):
            layout.frame_ids()
        write_cloud(PointCloud(np.zeros((1, 4))), layout.points_path("b"))
        assert layout.frame_ids() == ["a", "b"]

    def test_manifest_round_trip(self, tmp_path):
        write_manifest(["x", "y", "z"], tmp_path / "m.txt")
        assert read_manifest(tmp_path / "m.txt") == ["x", "y", "z"]


class TestSelectSubsets:
    def test_exact_fit_partition(self):
        manifest = [f"f{i}" for i in range(1250)]
        train, val = select_subsets(manifest, 1000, 250)
        assert len(train) == 1000 and len(val) == 250
        assert set(train) | set(val) == set(manifest)
        assert set(train) & set(val) == set()

    def test_hand_traced_strides(self):
        # N=10, stride 10//4=2 -> train frames 0,2,4,6; remainder
        # [1,3,5,7,8,9], stride 6//2=3 -> val frames 1,7
        manifest = [f"f{i}" for i in range(10)]
        train, val = select_subsets(manifest, 4, 2)
        assert train == ["f0", "f2", "f4", "f6"]
        assert val == ["f1", "f7"]

    def test_insufficient(self):
        with pytest.raises(InsufficientFrames):
            select_subsets(["a", "b", "c"], 3, 1)

    def test_deterministic(self):
        manifest = [f"f{i}" for i in range(101)]
        assert select_subsets(manifest, 30, 10) == select_subsets(manifest, 30, 10)
