"""Core 3D types and camera-geometry primitives shared by every other module.

Conventions:
  - Points and vectors are float64 numpy arrays of shape (3,) (or (N, 3) batched).
  - Rotations are 3x3 orthonormal matrices with determinant +1.
  - A Pose maps coordinates from its source frame to its destination frame:
    x_dst = R @ x_src + t.  Frames are named strings; the two that matter in
    this package are WORLD and QUERY.
  - Angles are radians internally, degrees at reporting boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WORLD = "world"
QUERY = "query"

ROTATION_TOL = 1e-9


class FrameError(ValueError):
    """Raised when pose frames do not chain consistently."""


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a float64 3-vector from components or any length-3 sequence."""
    if y is None:
        v = np.asarray(x, dtype=np.float64)
    else:
        v = np.array([x, y, z], dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite component in 3-vector")
    return v


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||, raising on (near-)zero input."""
    n = np.linalg.norm(v)
    if n <= 1e-15:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def is_unit(v: np.ndarray, tol: float = 1e-9) -> bool:
    return abs(np.linalg.norm(v) - 1.0) <= tol


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]_x with [v]_x @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def is_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    R = np.asarray(R)
    if R.shape != (3, 3):
        return False
    if not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_from_axis_angle(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    return exp_so3(normalize(np.asarray(axis, dtype=np.float64)) * angle_rad)


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Matrix exponential of skew(w); series expansion near zero angle."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / theta
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def rotation_angle_rad(R: np.ndarray) -> float:
    """Rotation angle in [0, pi], stable near both 0 and pi."""
    # sin from the skew-symmetric part, cos from the trace
    s = 0.5 * math.sqrt(
        (R[2, 1] - R[1, 2]) ** 2 + (R[0, 2] - R[2, 0]) ** 2 + (R[1, 0] - R[0, 1]) ** 2
    )
    c = 0.5 * (np.trace(R) - 1.0)
    return math.atan2(s, c)


@dataclass(frozen=True)
class Intrinsics:
    """Ideal pinhole camera (datasets are assumed pre-undistorted)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def focal(self) -> float:
        """Single scalar focal length: geometric mean of fx and fy."""
        return math.sqrt(self.fx * self.fy)

    def backproject(self, u: np.ndarray) -> np.ndarray:
        """Unit-depth ray K^-1 [u, 1] for pixel(s) u, shape (2,) or (N, 2)."""
        u = np.asarray(u, dtype=np.float64)
        x = (u[..., 0] - self.cx) / self.fx
        y = (u[..., 1] - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def project(self, p: np.ndarray) -> np.ndarray:
        """Pinhole projection of camera-frame point(s) with positive depth."""
        p = np.asarray(p, dtype=np.float64)
        z = p[..., 2]
        if np.any(z <= 0):
            raise ValueError("cannot project points at non-positive depth")
        return np.stack(
            [self.fx * p[..., 0] / z + self.cx, self.fy * p[..., 1] / z + self.cy],
            axis=-1,
        )


@dataclass(frozen=True)
class Pose:
    """Rigid transform x_dst = R @ x_src + t with explicit frame names."""

    R: np.ndarray
    t: np.ndarray
    src: str = QUERY
    dst: str = WORLD

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        t = vec3(self.t)
        if not is_rotation(R):
            raise ValueError("R is not a rotation matrix (orthonormality/det check failed)")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, frame: str = WORLD) -> "Pose":
        return cls(np.eye(3), np.zeros(3), src=frame, dst=frame)

    @classmethod
    def query_to_world(cls, R, t) -> "Pose":
        return cls(R, t, src=QUERY, dst=WORLD)

    @classmethod
    def world_to_query(cls, R, t) -> "Pose":
        return cls(R, t, src=WORLD, dst=QUERY)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform point(s) of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.R.T + self.t

    def inverse(self) -> "Pose":
        """The inverse transform [R^T | -R^T t]; swaps the frame tag."""
        return Pose(self.R.T, -self.R.T @ self.t, src=self.dst, dst=self.src)

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self.compose(other))(x) == self(other(x))."""
        if self.src != other.dst:
            raise FrameError(
                f"cannot compose {self.src}->{self.dst} after {other.src}->{other.dst}"
            )
        return Pose(
            self.R @ other.R,
            self.R @ other.t + self.t,
            src=other.src,
            dst=self.dst,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)


def compose(a: Pose, b: Pose) -> Pose:
    """Functional alias for a.compose(b)."""
    return a.compose(b)


def invert(p: Pose) -> Pose:
    """Functional alias for p.inverse()."""
    return p.inverse()


def lift_keypoint(u: np.ndarray, z_tof: float, k: Intrinsics) -> np.ndarray:
    """Lift a 2D keypoint to 3D using its measured depth: z * K^-1 [u, 1].

    Args:
        u: pixel coordinates, shape (2,).
        z_tof: depth along the optical axis in meters, must be positive.
        k: camera intrinsics.

    Returns:
        Camera-frame 3D point with p[2] == z_tof.
    """
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite keypoint coordinates")
    if not (z_tof > 0):
        raise ValueError(f"depth must be positive, got {z_tof}")
    return z_tof * k.backproject(u)


def essential_from_pose(pose: Pose) -> np.ndarray:
    """Essential matrix E = R^T [t]_x of a query->world pose.

    For a consistent correspondence (bearing x from the map side, pixel u on
    the query side) it satisfies b^T E x == 0 with b = K^-1 [u, 1].  The sign
    of E is unspecified; only squared residuals are consumed downstream.
    """
    if np.linalg.norm(pose.t) <= 1e-12:
        raise ValueError("epipolar geometry undefined for zero translation")
    return pose.R.T @ skew(pose.t)


def rotation_error_deg(R: np.ndarray, R_gt: np.ndarray) -> float:
    """Angle of R @ R_gt^T in degrees, in [0, 180]."""
    return math.degrees(rotation_angle_rad(np.asarray(R) @ np.asarray(R_gt).T))


def translation_error(t: np.ndarray, t_gt: np.ndarray) -> float:
    """Euclidean distance ||t - t_gt|| in scene units."""
    t = np.asarray(t, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(t_gt))):
        raise ValueError("non-finite translation")
    return float(np.linalg.norm(t - t_gt))
