"""Privacy-preserving sphere-cloud maps for visual localization.

Sub-modules:
  geometry      poses, intrinsics, rotations, epipolar primitives
  construction  point/sphere/line clouds and their builders
  localization  p3p + LO-RANSAC + LM depth-guided pose estimation
  attack        density-based point-recovery attack
  scenegen      synthetic benchmark scenes with exact ground truth
  formats       binary file formats and COLMAP ingestion
  metrics       error aggregation and report files
  cli           the `spherecloud` command
"""

from .attack import AttackConfig, AttackResult, Line3, closest_points, run_attack
from .construction import (
    LineCloud,
    PointCloud,
    ProvenanceSidecar,
    SphereCloud,
    build_sphere_cloud,
    build_uniform_line_cloud,
    match_descriptors,
)
from .geometry import Intrinsics, Pose, lift_keypoint, rotation_error_deg, translation_error
from .localization import (
    Correspondence,
    LocalizationFailure,
    PoseEstimate,
    RansacConfig,
    estimate_pose,
    make_correspondence,
    refine_pose,
    shift_map_origin,
)
from .metrics import MetricsReport, aggregate_metrics
from .scenegen import NoiseSpec, SyntheticScene, apply_noise, generate_scene

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackResult",
    "Correspondence",
    "Intrinsics",
    "Line3",
    "LineCloud",
    "LocalizationFailure",
    "MetricsReport",
    "NoiseSpec",
    "PointCloud",
    "Pose",
    "PoseEstimate",
    "ProvenanceSidecar",
    "RansacConfig",
    "SphereCloud",
    "SyntheticScene",
    "aggregate_metrics",
    "apply_noise",
    "build_sphere_cloud",
    "build_uniform_line_cloud",
    "closest_points",
    "estimate_pose",
    "generate_scene",
    "lift_keypoint",
    "make_correspondence",
    "match_descriptors",
    "refine_pose",
    "rotation_error_deg",
    "run_attack",
    "shift_map_origin",
    "translation_error",
]
