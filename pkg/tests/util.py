"""Shared builders for synthetic localization problems used across tests."""

import numpy as np

from spherecloud.geometry import Intrinsics, Pose, exp_so3
from spherecloud.localization import make_correspondence

KINECT = Intrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)


def random_pose_qw(rng, t_scale=2.0) -> Pose:
    """Random query->world pose with a comfortably nonzero translation."""
    while True:
        t = rng.normal(size=3) * t_scale
        if np.linalg.norm(t) > 0.3:
            return Pose.query_to_world(exp_so3(rng.normal(size=3)), t)


def synthetic_correspondences(pose_qw: Pose, n: int, rng, k: Intrinsics = KINECT):
    """Exact correspondences consistent with a query->world pose.

    Keypoints are drawn uniformly in the image with uniform depths, lifted to
    the query frame, and mapped through the pose to get the world-side
    bearings, so construction never rejects (except for the measure-zero case
    of a point at the sphere centre).
    """
    corrs = []
    while len(corrs) < n:
        u = rng.uniform([0.0, 0.0], [k.width, k.height])
        z = rng.uniform(0.3, 6.0)
        p_query = z * k.backproject(u)
        X = pose_qw.apply(p_query)
        a = np.linalg.norm(X)
        if a < 0.3:
            continue
        corrs.append(make_correspondence(u, z, X / a, k))
    return corrs


def scene_view_correspondences(scene, view_idx, centre, k=None):
    """Direct ground-truth correspondences of one synthetic-scene view.

    Bearings come from the matched point positions relative to the given
    centre, so outlier rewiring shows up as wrong bearings with true labels.
    """
    view = scene.correspondences[view_idx]
    cam = scene.cameras[view_idx]
    intr = cam.intrinsics if k is None else k
    positions = scene.point_cloud.positions
    corrs = []
    for j in range(len(view)):
        offset = positions[view.matched_index[j]] - centre
        bearing = offset / np.linalg.norm(offset)
        corrs.append(
            make_correspondence(view.pixels[j], view.depths[j], bearing, intr)
        )
    return corrs
