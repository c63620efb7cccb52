"""Dataset file formats and deterministic subset selection.

Clouds are headerless little-endian float32 quadruples (x, y, z, intensity),
the common interchange format for exported LiDAR frames. Labels are JSON
arrays of box records; a record with a ``score`` field is a detection, one
without is ground truth. A dataset root holds ``points/<frame>.bin``,
``labels/<frame>.json`` and an ordered ``manifest.txt``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DataError,
    InsufficientFrames,
    NonFiniteCoordinate,
    SchemaViolation,
    TruncatedFile,
)
from .geometry import PointCloud
from .metrics import Box3D

RECORD_BYTES = 16  # four little-endian float32 per point


def read_cloud(path, frame_id: str = None) -> PointCloud:
    """Read a .bin cloud; raises TruncatedFile on partial records and
    NonFiniteCoordinate on NaN/Inf values."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % RECORD_BYTES != 0:
        raise TruncatedFile(
            f"{path}: {len(raw)} bytes is not a multiple of {RECORD_BYTES}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    cloud = PointCloud(data, frame_id if frame_id is not None else path.stem)
    return cloud.validate()


def write_cloud(cloud: PointCloud, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(cloud.points.astype("<f4").tobytes())


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise SchemaViolation(f"{where}.{key}: missing")
    return record[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"{where}: expected a number, got {value!r}")
    return float(value)


def _triple(value, where: str) -> tuple:
    if not isinstance(value, list) or len(value) != 3:
        raise SchemaViolation(f"{where}: expected a list of three numbers")
    return tuple(_number(v, f"{where}[{i}]") for i, v in enumerate(value))


def read_labels(path, frame_id: str = None) -> List[Box3D]:
    """Read a JSON label file into boxes; errors cite the offending field."""
    path = Path(path)
    fid = frame_id if frame_id is not None else path.stem
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise SchemaViolation(f"{path}: top level must be an array")
    boxes = []
    for i, record in enumerate(doc):
        where = f"boxes[{i}]"
        if not isinstance(record, dict):
            raise SchemaViolation(f"{where}: expected an object")
        cls_name = _require(record, "class", where)
        if not isinstance(cls_name, str):
            raise SchemaViolation(f"{where}.class: expected a string")
        center = _triple(_require(record, "center", where), f"{where}.center")
        dims = _triple(_require(record, "dims", where), f"{where}.dims")
        yaw = _number(_require(record, "yaw", where), f"{where}.yaw")
        score = record.get("score")
        if score is not None:
            score = _number(score, f"{where}.score")
        if any(d <= 0 for d in dims):
            raise SchemaViolation(f"{where}.dims: must be positive, got {list(dims)}")
        boxes.append(
            Box3D(center=center, dims=dims, yaw=yaw, class_label=cls_name,
                  score=score, frame_id=fid)
        )
    return boxes


def write_labels(boxes: Sequence[Box3D], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = []
    for box in boxes:
        record = {
            "class": box.class_label,
            "center": list(box.center),
            "dims": list(box.dims),
            "yaw": box.yaw,
        }
        if box.score is not None:
            record["score"] = box.score
        records.append(record)
    path.write_text(json.dumps(records, indent=2) + "\n")


def read_manifest(path) -> List[str]:
    lines = Path(path).read_text().splitlines()
    return [line.strip() for line in lines if line.strip()]


def write_manifest(frame_ids: Sequence[str], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{fid}\n" for fid in frame_ids))


@dataclass(frozen=True)
class DatasetLayout:
    """Dataset directory convention: points/, labels/, manifest.txt."""

    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def points_dir(self) -> Path:
        return self.root / "points"

    @property
    def labels_dir(self) -> Path:
        return self.root / "labels"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.txt"

    def points_path(self, frame_id: str) -> Path:
        return self.points_dir / f"{frame_id}.bin"

    def labels_path(self, frame_id: str) -> Path:
        return self.labels_dir / f"{frame_id}.json"

    def create(self) -> "DatasetLayout":
        self.points_dir.mkdir(parents=True, exist_ok=True)
        self.labels_dir.mkdir(parents=True, exist_ok=True)
        return self

    def frame_ids(self) -> List[str]:
        """Manifest order, validated: every frame must have a points file."""
        if not self.manifest_path.exists():
            raise DataError(f"missing manifest: {self.manifest_path}")
        ids = read_manifest(self.manifest_path)
        for fid in ids:
            if not self.points_path(fid).exists():
                raise DataError(f"manifest entry {fid!r} has no points file")
        return ids


def select_subsets(
    manifest: Sequence[str], n_train: int, n_val: int
) -> Tuple[List[str], List[str]]:
    """Deterministic stride sampling of train/val frame subsets.

    The train split takes every floor(N/n_train)-th frame from the start of
    the manifest; the val split takes every floor(M/n_val)-th frame of the
    M remaining frames, kept in manifest order. No randomness involved; the
    two splits are disjoint.
    """
    manifest = list(manifest)
    n = len(manifest)
    if n_train < 1 or n_val < 1:
        raise ValueError("subset sizes must be >= 1")
    if n_train + n_val > n:
        raise InsufficientFrames(
            f"need {n_train}+{n_val} frames, manifest has {n}"
        )
    stride = n // n_train
    train_idx = [i * stride for i in range(n_train)]
    taken = set(train_idx)
    remainder = [i for i in range(n) if i not in taken]
    stride_val = len(remainder) // n_val
    val_idx = [remainder[i * stride_val] for i in range(n_val)]
    return [manifest[i] for i in train_idx], [manifest[i] for i in val_idx]
