"""Deterministic synthetic scenes with exact localization ground truth.

Points are drawn uniformly inside an axis-aligned box, cameras are placed on
an interior orbit looking through the box centre, and correspondences are the
in-frustum points of each camera with exact projections and depths.  A noise
pass can perturb depths and pixels and rewire a fraction of matches to wrong
map points while keeping the true labels, so inlier/outlier ground truth
stays recoverable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .construction import PointCloud
from .geometry import Intrinsics, Pose, normalize
from .rng import substreams

NEAR_PLANE = 0.05  # meters; points closer than this are not visible


@dataclass
class CameraView:
    """A query camera with its ground-truth world->query pose."""

    pose: Pose
    intrinsics: Intrinsics


@dataclass
class ViewCorrespondences:
    """Per-camera keypoint table.

    point_index is the true source map point of each keypoint; matched_index
    is the map point the keypoint claims to correspond to (differs only after
    outlier injection).  Pixels and depths reproject exactly until noise is
    applied.
    """

    point_index: np.ndarray  # (M,) int64
    matched_index: np.ndarray  # (M,) int64
    pixels: np.ndarray  # (M, 2) float64
    depths: np.ndarray  # (M,) float64

    def __len__(self) -> int:
        return len(self.point_index)

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.matched_index != self.point_index


@dataclass
class SyntheticScene:
    point_cloud: PointCloud
    cameras: list[CameraView]
    correspondences: list[ViewCorrespondences]


@dataclass
class NoiseSpec:
    """Measurement corruption levels; all zero reproduces the input scene."""

    depth_noise_rel: float = 0.0  # multiplicative Gaussian on depths
    pixel_noise_px: float = 0.0  # additive Gaussian on pixels
    outlier_rate: float = 0.0  # fraction of matches rewired to wrong points

    def __post_init__(self):
        if self.depth_noise_rel < 0 or self.pixel_noise_px < 0:
            raise ValueError("noise levels must be non-negative")
        if not (0.0 <= self.outlier_rate <= 1.0):
            raise ValueError("outlier rate must be in [0, 1]")


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray) -> Pose:
    """World->query pose of a camera at `eye` whose optical axis hits `target`."""
    forward = normalize(np.asarray(target, float) - np.asarray(eye, float))
    right = np.cross(forward, np.asarray(up, float))
    if np.linalg.norm(right) < 1e-12:
        # optical axis parallel to up: pick any perpendicular right vector
        alt = np.array([1.0, 0.0, 0.0])
        if abs(forward @ alt) > 0.9:
            alt = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, alt)
    right = normalize(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])  # rows: camera axes in world coords
    return Pose.world_to_query(R, -R @ np.asarray(eye, float))


def generate_scene(
    n_points: int,
    n_cameras: int,
    extent: float = 4.0,
    descriptor_dim: int = 128,
    seed: int = 0,
    layout: str = "box",
) -> SyntheticScene:
    """Build a synthetic scene with orbiting cameras and exact correspondences.

    Args:
        n_points: number of map points (>= 10).
        n_cameras: number of query cameras (>= 1).
        extent: side length of the point region in meters.
        descriptor_dim: dimensionality of the random unit descriptors.
        seed: master seed; substream 0 draws geometry, substream 1 descriptors,
            substream 2 colors.
        layout: "box" fills the volume uniformly (localization benchmarks);
            "wall" puts the points on the z = 0 plane, a flat scan with a
            single dense surface crossing per lifted line (attack benchmarks).
    """
    if n_points < 10 or n_cameras < 1:
        raise ValueError("need at least 10 points and 1 camera")
    if layout not in ("box", "wall"):
        raise ValueError(f"unknown layout {layout!r}")
    rng_geom, rng_desc, rng_color = substreams(seed, 3)

    half = extent / 2.0
    positions = rng_geom.uniform(-half, half, size=(n_points, 3))
    if layout == "wall":
        positions[:, 2] = 0.0
    descriptors = rng_desc.normal(size=(n_points, descriptor_dim))
    descriptors /= np.linalg.norm(descriptors, axis=1, keepdims=True)
    descriptors = descriptors.astype(np.float32)
    colors = rng_color.integers(0, 256, size=(n_points, 3), dtype=np.uint8)
    cloud = PointCloud(positions, descriptors, colors)

    intr = Intrinsics(fx=525.0, fy=525.0, cx=320.0, cy=240.0, width=640, height=480)
    cameras = []
    correspondences = []
    radius = 0.38 * extent
    for i in range(n_cameras):
        angle = 2.0 * np.pi * i / n_cameras
        height = 0.15 * extent * np.sin(3.0 * angle + 0.5)
        eye = np.array([radius * np.cos(angle), radius * np.sin(angle), height])
        pose = look_at(eye, np.zeros(3), up=np.array([0.0, 0.0, 1.0]))
        cam_pts = pose.apply(positions)
        z = cam_pts[:, 2]
        visible = z > NEAR_PLANE
        pix = np.full((n_points, 2), np.nan)
        pix[visible] = intr.project(cam_pts[visible])
        visible &= (
            (pix[:, 0] >= 0)
            & (pix[:, 0] < intr.width)
            & (pix[:, 1] >= 0)
            & (pix[:, 1] < intr.height)
        )
        idx = np.nonzero(visible)[0].astype(np.int64)
        cameras.append(CameraView(pose, intr))
        correspondences.append(
            ViewCorrespondences(
                point_index=idx,
                matched_index=idx.copy(),
                pixels=pix[visible],
                depths=z[visible].copy(),
            )
        )
    return SyntheticScene(cloud, cameras, correspondences)


def apply_noise(scene: SyntheticScene, spec: NoiseSpec, seed: int) -> SyntheticScene:
    """Return a copy of the scene with measurement noise and outlier matches.

    Depths pick up multiplicative Gaussian noise, pixels additive Gaussian
    noise, and an outlier_rate fraction of each view's matches is rewired to
    a uniformly chosen wrong map point.  True point indices are retained.
    Substream i of the seed drives view i.
    """
    n_points = len(scene.point_cloud)
    streams = substreams(seed, len(scene.correspondences))
    noisy = []
    for view, rng in zip(scene.correspondences, streams):
        m = len(view)
        depths = view.depths * (
            1.0 + rng.normal(0.0, spec.depth_noise_rel, size=m)
            if spec.depth_noise_rel > 0
            else np.ones(m)
        )
        pixels = view.pixels + (
            rng.normal(0.0, spec.pixel_noise_px, size=(m, 2))
            if spec.pixel_noise_px > 0
            else 0.0
        )
        matched = view.matched_index.copy()
        n_out = int(np.floor(spec.outlier_rate * m))
        if n_out > 0:
            chosen = rng.choice(m, size=n_out, replace=False)
            wrong = rng.integers(0, n_points - 1, size=n_out)
            wrong += wrong >= matched[chosen]  # shift past the true index
            matched[chosen] = wrong
        noisy.append(
            ViewCorrespondences(view.point_index.copy(), matched, pixels, depths)
        )
    return SyntheticScene(scene.point_cloud, scene.cameras, noisy)
