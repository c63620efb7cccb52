"""rangeforge: range-stratified LiDAR point cloud density manipulation.

Partition clouds into planar distance rings, thin or grid-resample each
ring independently, search the per-ring parameters with a sequential
MCMC chain against a detection-quality objective, and measure the effect
with per-range average precision and object density statistics.
"""

__version__ = "0.1.0"

from .errors import RangeforgeError
from .geometry import (
    Point,
    PointCloud,
    RangePartition,
    RangeSpec,
    SphericalCoord,
    cartesian_to_spherical,
    from_spherical,
    partition_by_range,
    spherical_to_cartesian,
    to_spherical,
)
from .mcmc import (
    ChainState,
    ExternalObjective,
    Objective,
    SurrogateObjective,
    accept,
    propose,
    run_chain,
)
from .metrics import (
    ApVector,
    Box3D,
    DensityStats,
    EvalConfig,
    EvalResult,
    bev_iou,
    density_stats,
    per_range_ap,
    points_in_box,
)
from .resampling import (
    GridSpec,
    Method,
    ResampleParams,
    ResampleReport,
    SensorSpec,
    dgr_interpolate,
    dgr_resample,
    random_sample,
    resample_pipeline,
)
from .synth import Scene, simulate_scan

__all__ = [
    "__version__",
    "ApVector",
    "Box3D",
    "ChainState",
    "DensityStats",
    "EvalConfig",
    "EvalResult",
    "ExternalObjective",
    "GridSpec",
    "Method",
    "Objective",
    "Point",
    "PointCloud",
    "RangePartition",
    "RangeSpec",
    "RangeforgeError",
    "ResampleParams",
    "ResampleReport",
    "Scene",
    "SensorSpec",
    "SphericalCoord",
    "SurrogateObjective",
    "accept",
    "bev_iou",
    "cartesian_to_spherical",
    "density_stats",
    "dgr_interpolate",
    "dgr_resample",
    "from_spherical",
    "partition_by_range",
    "per_range_ap",
    "points_in_box",
    "propose",
    "random_sample",
    "resample_pipeline",
    "run_chain",
    "simulate_scan",
    "spherical_to_cartesian",
    "to_spherical",
]
