import math

import numpy as np
import pytest

from rangeforge.geometry import cartesian_to_spherical
from rangeforge.metrics import Box3D, points_in_box
from rangeforge.resampling import SensorSpec, _horizontal_grid
from rangeforge.synth import Scene, simulate_scan

from conftest import random_scan


def down_sensor(beams=4, azim_step=45.0):
    return SensorSpec(beams, 1.0, azim_step, (-12.0, -12.0 + beams * 1.0))


class TestSimulateScan:
    def test_plane_only(self):
        sensor = down_sensor(4, 45.0)
        cloud, boxes = simulate_scan(Scene(objects=(), ground_z=-1.8, max_range=100.0), sensor)
        assert boxes == []
        assert len(cloud) == 4 * 8
        assert np.abs(cloud.xyz[:, 2] - (-1.8)).max() < 1e-9
        assert (cloud.intensity == 0.5).all()

    def test_no_ground(self):
        sensor = down_sensor(4, 45.0)
        cloud, _ = simulate_scan(Scene(objects=(), ground_z=None, max_range=100.0), sensor)
        assert len(cloud) == 0

    def test_near_box_denser_than_far_box(self):
        from conftest import car_band_sensor

        sensor = car_band_sensor()
        near = Box3D((10, 0, -1.05), (4, 2, 1.5), 0.0, "car")
        far = Box3D((0, 40, -1.05), (4, 2, 1.5), 0.0, "car")
        cloud, _ = simulate_scan(Scene(objects=(near, far), ground_z=-1.8, max_range=80.0), sensor)
        n_near = points_in_box(cloud, near, tolerance=1e-6)
        n_far = points_in_box(cloud, far, tolerance=1e-6)
        # area footprint shrinks with the square of the distance (ratio 16)
        assert n_far > 0
        assert 8.0 <= n_near / n_far <= 32.0

    def test_occlusion(self):
        sensor = SensorSpec(32, 0.5, 0.5, (-16.0, 0.0))
        blocker = Box3D((10, 0, -1.0), (2, 6, 3), 0.0, "truck")
        hidden = Box3D((20, 0, -1.0), (2, 2, 1.5), 0.0, "car")
        cloud, _ = simulate_scan(
            Scene(objects=(blocker, hidden), ground_z=None, max_range=60.0), sensor
        )
        assert points_in_box(cloud, hidden, tolerance=1e-6) == 0
        norms, _, _ = cartesian_to_spherical(cloud.xyz)
        assert norms.max() < 12.0

    def test_points_on_grid(self):
        cloud, _, sensor = random_scan(31)
        _, elev, azim = cartesian_to_spherical(cloud.xyz)
        beams = sensor.fov[0] + sensor.delta_elev * np.arange(sensor.beam_count)
        h_nodes = _horizontal_grid(sensor.delta_azim).nodes()
        elev_err = np.abs(elev[:, None] - beams[None, :]).min(axis=1)
        azim_err = np.abs(azim[:, None] - h_nodes[None, :]).min(axis=1)
        azim_err = np.minimum(azim_err, np.abs(azim - 360.0))
        assert elev_err.max() < 1e-9
        assert azim_err.max() < 1e-9

    def test_deterministic(self):
        a, _, _ = random_scan(32)
        b, _, _ = random_scan(32)
        assert a.points.tobytes() == b.points.tobytes()

    def test_row_major_order(self):
        cloud, _, sensor = random_scan(33)
        _, elev, azim = cartesian_to_spherical(cloud.xyz)
        rows = np.rint((elev - sensor.fov[0]) / sensor.delta_elev).astype(int)
        assert (np.diff(rows) >= 0).all()
        for r in np.unique(rows):
            a = azim[rows == r]
            assert (np.diff(a) > 0).all()

    def test_range_noise_moves_norms_not_angles(self):
        sensor = down_sensor(4, 15.0)
        scene = Scene(objects=(), ground_z=-1.8, max_range=100.0)
        clean, _ = simulate_scan(scene, sensor)
        noisy, _ = simulate_scan(scene, sensor, range_noise_sigma=0.05, noise_seed=1)
        assert len(clean) == len(noisy)
        _, e0, a0 = cartesian_to_spherical(clean.xyz)
        n1, e1, a1 = cartesian_to_spherical(noisy.xyz)
        n0, _, _ = cartesian_to_spherical(clean.xyz)
        assert np.abs(e1 - e0).max() < 1e-9
        assert np.abs(a1 - a0).max() < 1e-9
        assert np.abs(n1 - n0).max() > 0.0

    def test_object_outside_max_range_rejected(self):
        with pytest.raises(ValueError):
            Scene(objects=(Box3D((90, 0, 0), (2, 2, 2), 0.0, "car"),), max_range=50.0)
