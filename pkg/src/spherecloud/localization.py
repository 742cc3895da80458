"""Depth-guided localization of an RGB-D query against a sphere cloud.

The pipeline treats the sphere cloud as a virtual camera at the world origin
(the map centre): three depth-lifted keypoints and their matched bearings feed
a p3p solver, hypotheses are screened by cheirality and scored with a
truncated MSAC cost combining a squared epipolar distance with a depth-ratio
regularizer, and promising models are polished by Levenberg-Marquardt on
their inlier sets (LO-RANSAC).

All functions here work in the sphere-centred world frame; use
``shift_map_origin`` to move a result back to the original map frame.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .geometry import WORLD, Intrinsics, Pose, exp_so3, orthonormalize, skew
from .p3p import solve_p3p

EPS_BEARING_Z = 1e-8  # below this |x_z| the z-normalized bearing is undefined
EPS_INTERSECTION = 1e-10  # normalized 2x2 determinant cutoff

LM_MAX_ITER = 100
LM_GRAD_TOL = 1e-10
LM_STEP_TOL = 1e-12


class NearZeroZError(ValueError):
    """Bearing z-component too small for the epipolar residual."""


class DegenerateIntersectionError(ValueError):
    """Projected ray and line are parallel in the query XZ plane."""


class InsufficientInliersError(ValueError):
    """Refinement needs at least four inlier correspondences."""


@dataclass(frozen=True)
class Correspondence:
    """One 2D-3D match: query keypoint, its ToF depth, and a sphere bearing."""

    u: np.ndarray  # (2,) pixel
    z_tof: float  # meters, > 0
    bearing: np.ndarray  # (3,) unit vector in the sphere frame
    p: np.ndarray  # (3,) depth-lifted keypoint, cached z_tof * K^-1 [u, 1]

    def __post_init__(self):
        if not (self.z_tof > 0):
            raise ValueError(f"depth must be positive, got {self.z_tof}")


def make_correspondence(
    u: np.ndarray, z_tof: float, bearing: np.ndarray, k: Intrinsics
) -> Correspondence:
    """Build a correspondence with the lifted keypoint cached."""
    u = np.asarray(u, dtype=np.float64)
    bearing = np.asarray(bearing, dtype=np.float64)
    return Correspondence(u, float(z_tof), bearing, z_tof * k.backproject(u))


@dataclass
class RansacConfig:
    """LO-RANSAC thresholds and budget.

    tau_epipolar_px is converted to normalized image units by dividing by
    the focal length (geometric mean of fx and fy).  lam weights the depth
    regularizer in the total cost.
    """

    tau_epipolar_px: float = 1.5
    tau_depth: float = 0.1
    lam: float = 1e-4
    max_iter: int = 10000
    confidence: float = 0.9999
    seed: int = 0

    def __post_init__(self):
        if self.tau_epipolar_px <= 0 or self.tau_depth <= 0:
            raise ValueError("inlier thresholds must be positive")
        if self.lam < 0 or self.max_iter < 1 or not (0 < self.confidence < 1):
            raise ValueError("invalid RANSAC configuration")


@dataclass
class PoseEstimate:
    """Successful localization result in the sphere-centred world frame."""

    pose: Pose  # world -> query
    inlier_mask: np.ndarray  # (N,) bool over the input correspondences
    msac_score: float
    num_lo_refinements: int
    runtime_ms: float


@dataclass
class LocalizationFailure:
    """No pose with enough inlier support was found (not an exception)."""

    reason: str
    num_correspondences: int
    runtime_ms: float


# ---------------------------------------------------------------------------
# packed correspondence arrays and vectorized residuals


class _Packed:
    """Struct-of-arrays view of a correspondence list."""

    def __init__(self, corrs: list[Correspondence], k: Intrinsics):
        self.n = len(corrs)
        self.u = np.array([c.u for c in corrs], dtype=np.float64).reshape(self.n, 2)
        self.z = np.array([c.z_tof for c in corrs], dtype=np.float64)
        self.x = np.array([c.bearing for c in corrs], dtype=np.float64).reshape(
            self.n, 3
        )
        self.p = np.array([c.p for c in corrs], dtype=np.float64).reshape(self.n, 3)
        self.b = k.backproject(self.u)  # K^-1 [u, 1]
        self.valid_z = np.abs(self.x[:, 2]) > EPS_BEARING_Z
        zsafe = np.where(self.valid_z, np.abs(self.x[:, 2]), 1.0)
        self.xt = self.x / zsafe[:, None]  # z-normalized bearing (junk if invalid)


def _epipolar_terms(packed: _Packed, R: np.ndarray, t: np.ndarray):
    """Squared epipolar distances in normalized units, plus intermediates."""
    E = R.T @ skew(t)
    W = packed.xt @ E.T  # rows: E @ xt_i
    num = np.einsum("ij,ij->i", packed.b, W)
    den = W[:, 0] ** 2 + W[:, 1] ** 2
    usable = packed.valid_z & (den > 0)
    L_e = np.where(usable, num**2 / np.where(den > 0, den, 1.0), np.inf)
    return L_e, usable, W, num, den


def _depth_terms(packed: _Packed, R: np.ndarray, t: np.ndarray):
    """Depth ratios beta (and alpha) from the XZ-plane ray/line intersection."""
    D = packed.x @ R  # rows: R^T @ x_i
    q = R.T @ t
    px, pz = packed.p[:, 0], packed.p[:, 2]
    dx, dz = D[:, 0], D[:, 2]
    det = px * dz - pz * dx
    norm = np.sqrt(px**2 + pz**2) * np.sqrt(dx**2 + dz**2)
    usable = norm > 0
    rel = np.where(usable, np.abs(det) / np.where(usable, norm, 1.0), 0.0)
    usable &= rel > EPS_INTERSECTION
    safe_det = np.where(usable, det, 1.0)
    alpha = (px * q[2] - pz * q[0]) / safe_det
    beta = (dx * q[2] - dz * q[0]) / safe_det
    L_d = np.where(usable, (beta - 1.0) ** 2, np.inf)
    return L_d, usable, alpha, beta, D, q, det


def _cost_terms(packed: _Packed, R, t, lam):
    L_e, ok_e, *_ = _epipolar_terms(packed, R, t)
    L_d, ok_d, alpha, beta, *_ = _depth_terms(packed, R, t)
    usable = ok_e & ok_d
    return L_e, L_d, usable, alpha, beta


def _msac(packed: _Packed, R, t, cfg: RansacConfig, tau_e2: float):
    """Truncated MSAC score and the conjunctive inlier mask."""
    tau_d2 = cfg.tau_depth**2
    tau_total2 = tau_e2 + cfg.lam * tau_d2
    L_e, L_d, usable, alpha, beta = _cost_terms(packed, R, t, cfg.lam)
    cost = np.where(usable, L_e + cfg.lam * L_d, tau_total2)
    score = float(np.minimum(cost, tau_total2).sum())
    inliers = (
        usable & (L_e <= tau_e2) & (L_d <= tau_d2) & (alpha > 0.0) & (beta > 0.0)
    )
    return score, inliers


# ---------------------------------------------------------------------------
# public residual operations (scalar wrappers over the vectorized core)


def epipolar_residual(corr: Correspondence, pose: Pose, k: Intrinsics) -> float:
    """Squared epipolar distance of Eq.-style form for a query->world pose.

    The bearing is z-normalized (x / |x_z|) and the residual is the squared
    distance from the normalized keypoint to the epipolar line it induces.
    """
    if abs(corr.bearing[2]) <= EPS_BEARING_Z:
        raise NearZeroZError(
            f"|bearing z| = {abs(corr.bearing[2]):.2e} <= {EPS_BEARING_Z}"
        )
    if np.linalg.norm(pose.t) <= 0:
        raise ValueError("epipolar residual undefined for zero translation")
    packed = _Packed([corr], k)
    L_e, usable, *_ = _epipolar_terms(packed, pose.R, pose.t)
    if not usable[0]:
        raise NearZeroZError("bearing maps to a degenerate epipolar line")
    return float(L_e[0])


def predicted_depth(corr: Correspondence, pose: Pose) -> float:
    """Depth implied by the pose: beta * z_tof from the XZ-plane intersection."""
    packed = _Packed_from_single(corr)
    L_d, usable, alpha, beta, *_ = _depth_terms(packed, pose.R, pose.t)
    if not usable[0]:
        raise DegenerateIntersectionError(
            "projected ray and sphere line are parallel in the query XZ plane"
        )
    return float(beta[0] * corr.z_tof)


def depth_residual(corr: Correspondence, pose: Pose) -> float:
    """(beta - 1)^2 where beta = predicted depth / measured depth."""
    return (predicted_depth(corr, pose) / corr.z_tof - 1.0) ** 2


def _Packed_from_single(corr: Correspondence) -> _Packed:
    # depth terms never touch u/b, so a dummy camera suffices
    dummy = Intrinsics(1.0, 1.0, 0.0, 0.0, 2, 2)
    return _Packed([corr], dummy)


def total_cost(
    corrs: list[Correspondence], pose: Pose, k: Intrinsics, lam: float
) -> float:
    """Sum of epipolar plus lam-weighted depth residuals over usable matches."""
    packed = _Packed(corrs, k)
    L_e, L_d, usable, _, _ = _cost_terms(packed, pose.R, pose.t, lam)
    if not np.any(usable):
        raise ValueError("no usable correspondences for the total cost")
    return float((L_e[usable] + lam * L_d[usable]).sum())


def msac_score(
    corrs: list[Correspondence], pose: Pose, cfg: RansacConfig, k: Intrinsics
) -> tuple[float, np.ndarray]:
    """Truncated robust score of a pose and its inlier mask."""
    packed = _Packed(corrs, k)
    tau_e2 = (cfg.tau_epipolar_px / k.focal) ** 2
    return _msac(packed, pose.R, pose.t, cfg, tau_e2)


def p3p_solve(triple: list[Correspondence]) -> list[Pose]:
    """Minimal-solver wrapper returning query->world pose candidates."""
    if len(triple) != 3:
        raise ValueError("p3p needs exactly three correspondences")
    pts = np.array([c.p for c in triple])
    brs = np.array([c.bearing for c in triple])
    return [
        Pose.query_to_world(orthonormalize(R), t) for R, t in solve_p3p(pts, brs)
    ]


def cheirality_filter(poses: list[Pose], corrs: list[Correspondence]) -> list[Pose]:
    """Keep poses placing every correspondence along its positive bearing."""
    if not corrs:
        return list(poses)
    x = np.array([c.bearing for c in corrs])
    p = np.array([c.p for c in corrs])
    kept = []
    for pose in poses:
        mapped = p @ pose.R.T + pose.t
        if np.all(np.einsum("ij,ij->i", x, mapped) > 0.0):
            kept.append(pose)
    return kept


# ---------------------------------------------------------------------------
# analytic Jacobians and Levenberg-Marquardt refinement

_BASIS = np.eye(3)


def _residuals_and_jacobian(packed: _Packed, R, t, lam, subset):
    """Stacked [epipolar; sqrt(lam)*depth] residuals and their Jacobian.

    Local parameterization: R(w) = R @ exp([w]_x), t(tau) = t + tau; the
    Jacobian is evaluated at w = 0, tau = 0.  Returns None if any selected
    correspondence is degenerate at this pose.
    """
    idx = np.nonzero(subset)[0]
    m = idx.size
    L_e, ok_e, W, num, den = _epipolar_terms(packed, R, t)
    L_d, ok_d, alpha, beta, D, q, det = _depth_terms(packed, R, t)
    if not np.all(ok_e[idx] & ok_d[idx]):
        return None

    W = W[idx]
    num = num[idx]
    den = den[idx]
    b = packed.b[idx]
    xt = packed.xt[idx]
    x = packed.x[idx]
    p = packed.p[idx]
    Dm = D[idx]
    alpha = alpha[idx]
    beta = beta[idx]
    det_m = det[idx]

    # d(E xt) per parameter: rotation -> W x e_k, translation -> R^T (e_j x xt)
    dW = np.empty((m, 3, 6))
    for kk in range(3):
        dW[:, :, kk] = np.cross(W, _BASIS[kk])
        dW[:, :, 3 + kk] = np.cross(_BASIS[kk], xt) @ R
    dnum = np.einsum("ij,ijm->im", b, dW)
    dden = 2.0 * (W[:, 0, None] * dW[:, 0, :] + W[:, 1, None] * dW[:, 1, :])
    sqrt_den = np.sqrt(den)
    r_e = num / sqrt_den
    J_e = dnum / sqrt_den[:, None] - (num / (2.0 * den * sqrt_den))[:, None] * dden

    # depth ratio beta from M [alpha; beta] = rhs, M = [[d_x, -p_x], [d_z, -p_z]]
    dd = np.zeros((m, 3, 6))
    dq = np.zeros((3, 6))
    for kk in range(3):
        dd[:, :, kk] = np.cross(Dm, _BASIS[kk])
        dq[:, kk] = np.cross(q, _BASIS[kk])
        dq[:, 3 + kk] = R[kk, :]  # R^T e_k
    # effective rhs derivative: d(rhs) - alpha * d(d)
    gx = dq[0, :][None, :] - alpha[:, None] * dd[:, 0, :]
    gz = dq[2, :][None, :] - alpha[:, None] * dd[:, 2, :]
    dbeta = (-Dm[:, 2, None] * gx + Dm[:, 0, None] * gz) / det_m[:, None]
    r_d = math.sqrt(lam) * (beta - 1.0)
    J_d = math.sqrt(lam) * dbeta

    r = np.concatenate([r_e, r_d])
    J = np.concatenate([J_e, J_d], axis=0)
    return r, J


def total_cost_gradient(
    corrs: list[Correspondence], pose: Pose, k: Intrinsics, lam: float
) -> np.ndarray:
    """Gradient of the total cost wrt the 6 local pose parameters.

    Parameters are ordered [w_x, w_y, w_z, t_x, t_y, t_z] with the rotation
    perturbation applied as R @ exp([w]_x).
    """
    packed = _Packed(corrs, k)
    _, _, usable, _, _ = _cost_terms(packed, pose.R, pose.t, lam)
    if not np.any(usable):
        raise ValueError("no usable correspondences")
    out = _residuals_and_jacobian(packed, pose.R, pose.t, lam, usable)
    if out is None:
        raise ValueError("correspondence became degenerate at this pose")
    r, J = out
    return 2.0 * (J.T @ r)


def _lm_minimize(packed: _Packed, R0, t0, lam, subset):
    """Damped LM on the fixed correspondence subset; monotone in cost."""
    R, t = R0.copy(), t0.copy()
    out = _residuals_and_jacobian(packed, R, t, lam, subset)
    if out is None:
        return R, t  # degenerate at the start: nothing we can do
    r, J = out
    cost = float(r @ r)
    damping = 1e-3
    for _ in range(LM_MAX_ITER):
        g = 2.0 * (J.T @ r)
        if np.linalg.norm(g) <= LM_GRAD_TOL:
            break
        H = J.T @ J
        step = None
        while damping <= 1e12:
            try:
                delta = np.linalg.solve(H + damping * np.eye(6), -(J.T @ r))
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            R_new = orthonormalize(R @ exp_so3(delta[:3]))
            t_new = t + delta[3:]
            out_new = _residuals_and_jacobian(packed, R_new, t_new, lam, subset)
            if out_new is not None:
                r_new, J_new = out_new
                cost_new = float(r_new @ r_new)
                if cost_new < cost:
                    R, t, r, J, cost = R_new, t_new, r_new, J_new, cost_new
                    damping = max(damping * 0.1, 1e-12)
                    step = delta
                    break
            damping *= 10.0
        if step is None:  # no acceptable step at any damping
            break
        if np.linalg.norm(step) <= LM_STEP_TOL:
            break
    return R, t


def refine_pose(
    corrs: list[Correspondence], init: Pose, k: Intrinsics, lam: float
) -> Pose:
    """LM refinement of the total cost over the given (inlier) matches.

    The initial pose may be given in either direction; the result uses the
    same frame orientation as the input.  Final cost never exceeds the
    initial cost.
    """
    if len(corrs) < 4:
        raise InsufficientInliersError(
            f"refinement needs >= 4 inliers, got {len(corrs)}"
        )
    flipped = init.src == WORLD
    qw = init.inverse() if flipped else init
    packed = _Packed(corrs, k)
    _, _, usable, _, _ = _cost_terms(packed, qw.R, qw.t, lam)
    if not np.any(usable):
        return init
    R, t = _lm_minimize(packed, qw.R, qw.t, lam, usable)
    refined = Pose(R, t, src=qw.src, dst=qw.dst)
    return refined.inverse() if flipped else refined


# ---------------------------------------------------------------------------
# LO-RANSAC driver


def estimate_pose(
    corrs: list[Correspondence], k: Intrinsics, cfg: RansacConfig
) -> PoseEstimate | LocalizationFailure:
    """LO-RANSAC absolute pose estimation against a sphere cloud.

    Samples minimal triples, solves p3p, screens hypotheses by cheirality,
    scores with the truncated MSAC cost, locally refines promising models on
    their inlier sets, and finishes with one more refinement of the best
    model.  Deterministic for a fixed config seed.

    Returns a PoseEstimate whose pose maps the sphere-centred world frame to
    the query frame, or a LocalizationFailure if no hypothesis reaches four
    inliers.
    """
    start = time.perf_counter()
    n = len(corrs)
    if n < 3:
        raise ValueError(f"pose estimation needs >= 3 correspondences, got {n}")
    packed = _Packed(corrs, k)
    tau_e2 = (cfg.tau_epipolar_px / k.focal) ** 2
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))

    best_pose = None  # (R, t) query->world
    best_score = np.inf
    best_inliers = None
    best_count = 0
    lo_score = np.inf
    lo_count = 0
    n_refine = 0
    iter_cap = cfg.max_iter

    it = 0
    while it < iter_cap:
        it += 1
        sample = rng.choice(n, size=3, replace=False)
        triple = [corrs[i] for i in sample]
        candidates = p3p_solve(triple)
        candidates = cheirality_filter(candidates, triple)

        local = None
        for pose in candidates:
            score, mask = _msac(packed, pose.R, pose.t, cfg, tau_e2)
            count = int(mask.sum())
            if lo_count <= count or score <= lo_score:
                local = (pose, score, mask, count)
                lo_count, lo_score = count, score
                if score < best_score:
                    best_pose, best_score = (pose.R, pose.t), score
                    best_inliers, best_count = mask, count
        if local is None:
            continue

        pose_l, _, mask_l, count_l = local
        if count_l >= 4:
            subset = mask_l.copy()
            R_r, t_r = _lm_minimize(packed, pose_l.R, pose_l.t, cfg.lam, subset)
            n_refine += 1
            score_r, mask_r = _msac(packed, R_r, t_r, cfg, tau_e2)
            if score_r < best_score:
                best_pose, best_score = (R_r, t_r), score_r
                best_inliers, best_count = mask_r, int(mask_r.sum())

        if best_count > 0:
            w = best_count / n
            if w >= 1.0:
                iter_cap = it
            else:
                denom = math.log(max(1.0 - w**3, 1e-15))
                needed = math.ceil(math.log(1.0 - cfg.confidence) / denom)
                iter_cap = min(cfg.max_iter, max(needed, 1))

    if best_pose is None or best_count < 4:
        return LocalizationFailure(
            reason="no hypothesis reached 4 inliers",
            num_correspondences=n,
            runtime_ms=(time.perf_counter() - start) * 1e3,
        )

    R_b, t_b = best_pose
    R_f, t_f = _lm_minimize(packed, R_b, t_b, cfg.lam, best_inliers)
    n_refine += 1
    score_f, mask_f = _msac(packed, R_f, t_f, cfg, tau_e2)
    if score_f < best_score:
        best_pose, best_score = (R_f, t_f), score_f
        best_inliers, best_count = mask_f, int(mask_f.sum())

    pose_qw = Pose.query_to_world(orthonormalize(best_pose[0]), best_pose[1])
    return PoseEstimate(
        pose=pose_qw.inverse(),
        inlier_mask=best_inliers,
        msac_score=best_score,
        num_lo_refinements=n_refine,
        runtime_ms=(time.perf_counter() - start) * 1e3,
    )


def shift_map_origin(pose_wq: Pose, centre: np.ndarray) -> Pose:
    """Convert a sphere-frame world->query pose to the original map frame.

    The sphere frame is the map frame translated so the sphere centre is the
    origin: x_q = R (X - c) + t' becomes x_q = R X + (t' - R c).
    """
    centre = np.asarray(centre, dtype=np.float64)
    return Pose(pose_wq.R, pose_wq.t - pose_wq.R @ centre, src=pose_wq.src, dst=pose_wq.dst)
