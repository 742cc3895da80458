"""Perspective-three-point minimal solver.

Solves for the rigid transform (R, t) aligning three 3D points p_i with three
unit bearings f_i so that  s_i * f_i = R @ p_i + t  for positive depths s_i.
In this package the bearings come from the sphere cloud (a virtual camera
sitting at the map centre) and the 3D points are depth-lifted query
keypoints, so the recovered transform maps query coordinates into the
sphere/world frame.

Classic distance-ratio formulation: the law of cosines in the three
camera-point triangles gives a quartic in v = s3/s1; each admissible root
yields the depths and an absolute-orientation fit recovers (R, t).
"""

from __future__ import annotations

import numpy as np


def _quartic_coeffs(A, C, ca, cb, cg):
    """Quartic in v = s3/s1 after eliminating s1 and u = s2/s1.

    A = |p2-p3|^2 / |p1-p3|^2, C = |p1-p2|^2 / |p1-p3|^2 and ca, cb, cg are
    the cosines between bearing pairs (2,3), (1,3), (1,2).
    """
    c4 = A * A - 2 * A * C - 2 * A + C * C - 4 * C * ca * ca + 2 * C + 1
    c3 = 4 * (
        -A * A * cb
        + 2 * A * C * cb
        + A * ca * cg
        + A * cb
        - C * C * cb
        + 2 * C * ca * ca * cb
        + C * ca * cg
        - C * cb
        - ca * cg
    )
    c2 = (
        4 * A * A * cb * cb
        + 2 * A * A
        - 8 * A * C * cb * cb
        - 4 * A * C
        - 8 * A * ca * cb * cg
        - 4 * A * cg * cg
        + 4 * C * C * cb * cb
        + 2 * C * C
        - 4 * C * ca * ca
        - 8 * C * ca * cb * cg
        + 4 * ca * ca
        + 4 * cg * cg
        - 2
    )
    c1 = 4 * (
        -A * A * cb
        + 2 * A * C * cb
        + A * ca * cg
        + 2 * A * cb * cg * cg
        - A * cb
        - C * C * cb
        + C * ca * cg
        + C * cb
        - ca * cg
    )
    c0 = A * A - 2 * A * C - 4 * A * cg * cg + 2 * A + C * C - 2 * C + 1
    return np.array([c4, c3, c2, c1, c0])


def _polish_root(coeffs: np.ndarray, v: float, steps: int = 3) -> float:
    """A few Newton iterations on the quartic to squeeze out root error."""
    for _ in range(steps):
        f = (((coeffs[0] * v + coeffs[1]) * v + coeffs[2]) * v + coeffs[3]) * v + coeffs[4]
        df = ((4 * coeffs[0] * v + 3 * coeffs[1]) * v + 2 * coeffs[2]) * v + coeffs[3]
        if abs(df) < 1e-14:
            break
        v = v - f / df
    return v


def _polish_depths(s: np.ndarray, a2, b2, c2, ca, cb, cg, steps: int = 5) -> np.ndarray:
    """Newton on the three law-of-cosines constraints in depth space.

    The eliminated quartic can be ill-conditioned near clustered solutions;
    the original 3x3 system is not, so a few steps restore full precision.
    """
    s = s.copy()
    for _ in range(steps):
        s1, s2, s3 = s
        F = np.array(
            [
                s2 * s2 + s3 * s3 - 2 * s2 * s3 * ca - a2,
                s1 * s1 + s3 * s3 - 2 * s1 * s3 * cb - b2,
                s1 * s1 + s2 * s2 - 2 * s1 * s2 * cg - c2,
            ]
        )
        J = np.array(
            [
                [0.0, 2 * s2 - 2 * s3 * ca, 2 * s3 - 2 * s2 * ca],
                [2 * s1 - 2 * s3 * cb, 0.0, 2 * s3 - 2 * s1 * cb],
                [2 * s1 - 2 * s2 * cg, 2 * s2 - 2 * s1 * cg, 0.0],
            ]
        )
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        s_new = s + delta
        if np.any(s_new <= 0):
            break
        s = s_new
        if np.max(np.abs(delta)) < 1e-14 * np.max(s):
            break
    return s


def _absolute_orientation(src: np.ndarray, dst: np.ndarray):
    """Rigid fit dst_i = R @ src_i + t over three point pairs (SVD/Kabsch)."""
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    H = (src - src_c).T @ (dst - dst_c)
    U, _, Vt = np.linalg.svd(H)
    R = Vt.T @ U.T
    if np.linalg.det(R) < 0:
        D = np.diag([1.0, 1.0, -1.0])
        R = Vt.T @ D @ U.T
    t = dst_c - R @ src_c
    return R, t


def solve_p3p(
    points: np.ndarray,
    bearings: np.ndarray,
    max_align_error_rad: float = 1e-6,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return the (R, t) candidates aligning 3 points with 3 unit bearings.

    Args:
        points: (3, 3) 3D points (query frame).
        bearings: (3, 3) unit bearings observed by the virtual camera.
        max_align_error_rad: candidates whose bearing alignment exceeds this
            angle on any of the three correspondences are dropped.

    Returns:
        0 to 4 (R, t) pairs with all depths s_i = f_i . (R p_i + t) positive.
        Degenerate inputs (collinear points, coincident bearings) yield [].
    """
    p = np.asarray(points, dtype=np.float64)
    f = np.asarray(bearings, dtype=np.float64)
    if p.shape != (3, 3) or f.shape != (3, 3):
        raise ValueError("solve_p3p needs exactly three correspondences")
    f = f / np.linalg.norm(f, axis=1, keepdims=True)

    d23 = p[1] - p[2]
    d13 = p[0] - p[2]
    d12 = p[0] - p[1]
    a2 = d23 @ d23
    b2 = d13 @ d13
    c2 = d12 @ d12
    scale2 = max(a2, b2, c2)
    if scale2 <= 0 or min(a2, b2, c2) <= 1e-24 * scale2:
        return []  # duplicated points
    # collinearity: triangle area relative to the longest edge
    cross = np.cross(d12, d13)
    if np.linalg.norm(cross) <= 1e-12 * scale2:
        return []

    ca = f[1] @ f[2]
    cb = f[0] @ f[2]
    cg = f[0] @ f[1]
    if max(ca, cb, cg) >= 1.0 - 1e-12:
        return []  # coincident bearings

    A = a2 / b2
    C = c2 / b2
    coeffs = _quartic_coeffs(A, C, ca, cb, cg)
    if not np.all(np.isfinite(coeffs)) or np.max(np.abs(coeffs)) < 1e-30:
        return []
    roots = np.roots(coeffs)

    solutions: list[tuple[np.ndarray, np.ndarray]] = []
    for root in roots:
        if abs(root.imag) > 1e-8 * max(1.0, abs(root.real)):
            continue
        v = _polish_root(coeffs, float(root.real))
        if v <= 0:
            continue
        qv = 1.0 + v * v - 2.0 * v * cb
        if qv <= 1e-15:
            continue
        denom = 2.0 * (ca * v - cg)
        num = (A - C) * (2.0 * cb * v - v * v - 1.0) + v * v - 1.0
        if abs(denom) > 1e-12:
            u_candidates = [num / denom]
        else:
            # u drops out of the eliminant; fall back to the direct quadratic
            disc = cg * cg - (1.0 - C * qv)
            if disc < 0:
                continue
            sq = np.sqrt(disc)
            u_candidates = [cg + sq, cg - sq]
        for u in u_candidates:
            if u <= 0:
                continue
            # consistency with the remaining constraint
            res = u * u + v * v - 2 * u * v * ca - A * qv
            if abs(res) > 1e-6 * max(1.0, A * qv):
                continue
            s1 = np.sqrt(b2 / qv)
            depths = _polish_depths(np.array([s1, u * s1, v * s1]), a2, b2, c2, ca, cb, cg)
            cam_pts = depths[:, None] * f
            R, t = _absolute_orientation(p, cam_pts)
            aligned = p @ R.T + t
            norms = np.linalg.norm(aligned, axis=1)
            if np.any(norms <= 0):
                continue
            dots = np.clip(np.sum(aligned / norms[:, None] * f, axis=1), -1.0, 1.0)
            if np.max(np.arccos(dots)) > max_align_error_rad:
                continue
            if not _is_duplicate(solutions, R, t):
                solutions.append((R, t))
    return solutions


def _is_duplicate(solutions, R, t, rot_tol=1e-7, t_tol=1e-7) -> bool:
    for R0, t0 in solutions:
        if np.linalg.norm(t - t0) <= t_tol * (1.0 + np.linalg.norm(t0)) and np.max(
            np.abs(R - R0)
        ) <= rot_tol:
            return True
    return False
