"""Point cloud primitives: spherical conversions and distance-ring partitioning.

All functions are pure and safe to call concurrently. Clouds are stored as
(N, 4) float64 arrays of x, y, z, intensity in a sensor-centered Cartesian
frame (x forward, z up).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence

import numpy as np

from .errors import NonFiniteCoordinate, PointBelowFirstEdge

DEFAULT_RING_EDGES = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)


class Point(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float = 0.0


class SphericalCoord(NamedTuple):
    norm: float  # meters, >= 0
    elevation: float  # degrees, positive above the sensor plane
    azimuth: float  # degrees in [0, 360)


def cartesian_to_spherical(xyz):
    """Convert (..., 3) Cartesian coordinates to (norm, elevation, azimuth).

    Elevation is measured from the XY plane, azimuth counter-clockwise from
    +X, both in degrees with azimuth wrapped into [0, 360). Zero-norm points
    map to (0, 0, 0) by convention.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    norm = np.sqrt(x * x + y * y + z * z)
    safe = np.where(norm > 0.0, norm, 1.0)
    elev = np.degrees(np.arcsin(np.clip(z / safe, -1.0, 1.0)))
    elev = np.where(norm > 0.0, elev, 0.0)
    azim = np.degrees(np.arctan2(y, x)) % 360.0
    # tiny negative angles round up to exactly 360.0 under fmod
    azim = np.where(azim >= 360.0, 0.0, azim)
    return norm, elev, azim


def spherical_to_cartesian(norm, elevation, azimuth):
    """Inverse of cartesian_to_spherical; angles in degrees.

    Returns an (..., 3) float64 array.
    """
    norm = np.asarray(norm, dtype=np.float64)
    erad = np.radians(np.asarray(elevation, dtype=np.float64))
    arad = np.radians(np.asarray(azimuth, dtype=np.float64))
    ce = np.cos(erad)
    return np.stack(
        (norm * ce * np.cos(arad), norm * ce * np.sin(arad), norm * np.sin(erad)),
        axis=-1,
    )


def to_spherical(p: Point) -> SphericalCoord:
    """Spherical coordinates of a single point (intensity ignored)."""
    n, e, a = cartesian_to_spherical(np.array([p.x, p.y, p.z], dtype=np.float64))
    return SphericalCoord(float(n), float(e), float(a))


def from_spherical(s: SphericalCoord, intensity: float = 0.0) -> Point:
    """Cartesian point for spherical coordinates; intensity is carried
    separately and defaults to 0."""
    xyz = spherical_to_cartesian(s.norm, s.elevation, s.azimuth)
    return Point(float(xyz[..., 0]), float(xyz[..., 1]), float(xyz[..., 2]), intensity)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered point collection with a pass-through intensity channel."""

    points: np.ndarray  # (N, 4) float64: x, y, z, intensity
    frame_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"expected (N, 4) points array, got shape {pts.shape}")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_arrays(cls, xyz, intensity=None, frame_id: str = "") -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        pts = np.empty((xyz.shape[0], 4), dtype=np.float64)
        pts[:, :3] = xyz
        pts[:, 3] = 0.0 if intensity is None else intensity
        return cls(pts, frame_id)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return self.points.shape[0]

    def validate(self) -> "PointCloud":
        if not np.isfinite(self.points).all():
            bad = int(np.flatnonzero(~np.isfinite(self.points).all(axis=1))[0])
            raise NonFiniteCoordinate(
                f"frame {self.frame_id!r}: non-finite value at point {bad}"
            )
        return self


@dataclass(frozen=True)
class RangeSpec:
    """Ascending ring edges in meters; rings are half-open [a, b) intervals
    of planar XY distance from the sensor."""

    boundaries: tuple = DEFAULT_RING_EDGES

    def __post_init__(self):
        edges = tuple(float(b) for b in self.boundaries)
        if len(edges) < 2:
            raise ValueError("range spec needs at least two edges")
        if edges[0] < 0:
            raise ValueError("range edges must be non-negative")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"range edges must be strictly ascending: {edges}")
        object.__setattr__(self, "boundaries", edges)

    @property
    def n_rings(self) -> int:
        return len(self.boundaries) - 1

    def ring_of(self, distances) -> np.ndarray:
        """Ring index per distance; n_rings marks at-or-past the last edge,
        -1 marks below the first edge."""
        d = np.asarray(distances, dtype=np.float64)
        return np.searchsorted(np.asarray(self.boundaries), d, side="right") - 1


@dataclass(frozen=True, eq=False)
class RangePartition:
    """Disjoint index clusters of a cloud, one per ring, plus the indices at
    or past the last edge. Together they cover 0..n_points-1 exactly."""

    clusters: List[np.ndarray]
    beyond: np.ndarray
    n_points: int


def partition_by_range(cloud: PointCloud, spec: RangeSpec = None) -> RangePartition:
    """Split a cloud into distance rings by planar XY distance.

    A point at exactly an interior edge belongs to the upper ring; points at
    or past the last edge land in ``beyond``. Raises NonFiniteCoordinate for
    invalid points and PointBelowFirstEdge when the first edge is positive
    and a point falls short of it.
    """
    if spec is None:
        spec = RangeSpec()
    cloud.validate()
    planar = np.hypot(cloud.points[:, 0], cloud.points[:, 1])
    ring = spec.ring_of(planar)
    if spec.boundaries[0] > 0.0 and (ring < 0).any():
        idx = int(np.flatnonzero(ring < 0)[0])
        raise PointBelowFirstEdge(
            f"frame {cloud.frame_id!r}: point {idx} at planar distance "
            f"{planar[idx]:.3f} m is below the first edge {spec.boundaries[0]} m"
        )
    clusters = [np.flatnonzero(ring == i) for i in range(spec.n_rings)]
    beyond = np.flatnonzero(ring == spec.n_rings)
    return RangePartition(clusters=clusters, beyond=beyond, n_points=len(cloud))
