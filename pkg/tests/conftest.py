import math

import numpy as np
import pytest

from rangeforge.metrics import Box3D
from rangeforge.resampling import SensorSpec
from rangeforge.synth import Scene, simulate_scan


@pytest.fixture
def small_sensor():
    return SensorSpec(beam_count=16, delta_elev=0.5, delta_azim=0.5, fov=(-12.0, -4.0))


def car_band_sensor():
    """64 uniform beams covering -18..0.9 deg, enough to see boxes out to
    ~50 m from a roof-mounted origin."""
    return SensorSpec(beam_count=64, delta_elev=0.3, delta_azim=0.25, fov=(-18.0, 1.0))


def random_scene(rng, n_objects=4, max_range=60.0):
    """Boxes scattered at distinct azimuths so they rarely occlude."""
    objects = []
    azimuths = rng.permutation(np.arange(0, 360, 360 / max(n_objects, 1)))
    for i in range(n_objects):
        dist = rng.uniform(4.0, 45.0)
        az = math.radians(azimuths[i] + rng.uniform(-10, 10))
        dims = (rng.uniform(1.5, 5.0), rng.uniform(1.0, 2.5), rng.uniform(1.0, 2.0))
        objects.append(
            Box3D(
                center=(dist * math.cos(az), dist * math.sin(az), -1.8 + dims[2] / 2),
                dims=dims,
                yaw=rng.uniform(-math.pi, math.pi),
                class_label="car",
            )
        )
    return Scene(objects=tuple(objects), ground_z=-1.8, max_range=max_range)


def random_scan(seed, sensor=None, n_objects=4):
    rng = np.random.default_rng(seed)
    if sensor is None:
        sensor = SensorSpec(
            beam_count=16, delta_elev=0.5, delta_azim=1.0, fov=(-12.0, -4.0)
        )
    cloud, boxes = simulate_scan(random_scene(rng, n_objects), sensor)
    return cloud, boxes, sensor
