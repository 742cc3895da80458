import numpy as np
import pytest

from spherecloud.geometry import (
    FrameError,
    Intrinsics,
    Pose,
    essential_from_pose,
    exp_so3,
    invert,
    compose,
    lift_keypoint,
    rotation_error_deg,
    rotation_from_axis_angle,
    translation_error,
)

from util import KINECT, random_pose_qw


def rodrigues_reference(axis, angle):
    """Independent axis-angle rotation for use as an oracle."""
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


class TestPoseAlgebra:
    def test_identity_compose_identity(self):
        e = Pose.identity()
        out = compose(e, e)
        assert np.allclose(out.R, np.eye(3))
        assert np.allclose(out.t, 0.0)

    def test_pose_times_inverse_is_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            p = random_pose_qw(rng)
            out = compose(p, invert(p))
            assert np.max(np.abs(out.R - np.eye(3))) < 1e-12
            assert np.max(np.abs(out.t)) < 1e-12

    def test_compose_matches_double_application(self):
        # oracle: apply the two transforms one after the other
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = random_pose_qw(rng)
            q = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3), src="a", dst="query")
            x = rng.normal(size=3)
            both = compose(p, q)
            assert np.max(np.abs(both.apply(x) - p.apply(q.apply(x)))) < 1e-12

    def test_compose_frame_mismatch(self):
        p = Pose.query_to_world(np.eye(3), np.zeros(3))
        with pytest.raises(FrameError):
            compose(p, p)

    def test_invert_identity(self):
        e = Pose.identity()
        assert np.allclose(invert(e).R, np.eye(3))
        assert np.allclose(invert(e).t, 0.0)

    def test_invert_pure_translation(self):
        p = Pose.query_to_world(np.eye(3), np.array([1.0, 2.0, 3.0]))
        inv = invert(p)
        assert np.allclose(inv.t, [-1.0, -2.0, -3.0])
        assert inv.src == "world" and inv.dst == "query"

    def test_invert_is_involution(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = random_pose_qw(rng)
            back = invert(invert(p))
            assert np.max(np.abs(back.R - p.R)) < 1e-12
            assert np.max(np.abs(back.t - p.t)) < 1e-12

    def test_compose_associative(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3), src="c", dst="d")
            b = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3), src="b", dst="c")
            c = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3), src="a", dst="b")
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.max(np.abs(left.R - right.R)) < 1e-10
            assert np.max(np.abs(left.t - right.t)) < 1e-10

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))


class TestEssentialMatrix:
    def test_identity_rotation_unit_z(self):
        p = Pose.query_to_world(np.eye(3), np.array([0.0, 0.0, 1.0]))
        E = essential_from_pose(p)
        assert np.allclose(E, [[0, -1, 0], [1, 0, 0], [0, 0, 0]])

    def test_translation_homogeneity(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            p = random_pose_qw(rng)
            s = rng.uniform(0.1, 4.0)
            scaled = Pose.query_to_world(p.R, s * p.t)
            assert np.allclose(
                essential_from_pose(scaled), s * essential_from_pose(p), atol=1e-12
            )

    def test_epipolar_constraint_on_forward_projected_point(self):
        # oracle: build the correspondence by projecting a world point
        rng = np.random.default_rng(6)
        k = KINECT
        for _ in range(50):
            pose = random_pose_qw(rng)
            wq = pose.inverse()
            X = rng.normal(size=3) * 2.0
            if np.linalg.norm(X) < 0.3:
                continue
            xhat = X / np.linalg.norm(X)
            pq = wq.apply(X)
            if pq[2] < 0.2:
                continue
            u = k.project(pq)
            b = k.backproject(u)
            E = essential_from_pose(pose)
            assert abs(b @ E @ xhat) <= 1e-10

    def test_zero_translation_rejected(self):
        p = Pose.query_to_world(np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            essential_from_pose(p)

    def test_rank_two(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            E = essential_from_pose(random_pose_qw(rng))
            sv = np.linalg.svd(E, compute_uv=False)
            assert sv[2] <= 1e-8 * sv[0]
            assert abs(sv[0] - sv[1]) <= 1e-6 * sv[0]


class TestLiftKeypoint:
    def test_principal_point(self):
        p = lift_keypoint(np.array([KINECT.cx, KINECT.cy]), 2.0, KINECT)
        assert np.allclose(p, [0.0, 0.0, 2.0])

    def test_unit_tangent(self):
        p = lift_keypoint(np.array([KINECT.cx + KINECT.fx, KINECT.cy]), 1.0, KINECT)
        assert np.allclose(p, [1.0, 0.0, 1.0])

    def test_round_trip_against_manual_projection(self):
        rng = np.random.default_rng(8)
        k = KINECT
        for _ in range(50):
            u = rng.uniform([0, 0], [k.width, k.height])
            z = rng.uniform(0.2, 8.0)
            p = lift_keypoint(u, z, k)
            assert abs(p[2] - z) < 1e-12
            # independent pinhole projection, written out by hand
            u_back = np.array(
                [k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy]
            )
            assert np.max(np.abs(u_back - u)) <= 1e-9

    def test_non_positive_depth(self):
        with pytest.raises(ValueError):
            lift_keypoint(np.array([10.0, 10.0]), 0.0, KINECT)


class TestPoseErrors:
    def test_zero_rotation_error(self):
        rng = np.random.default_rng(9)
        R = exp_so3(rng.normal(size=3))
        assert rotation_error_deg(R, R) == pytest.approx(0.0, abs=1e-12)

    def test_ninety_degrees_about_z(self):
        R = rotation_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2)
        assert rotation_error_deg(R, np.eye(3)) == pytest.approx(90.0, abs=1e-9)

    def test_random_axis_angle_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            axis = rng.normal(size=3)
            angle = rng.uniform(1e-3, np.pi)
            R = rodrigues_reference(axis, angle)
            err = rotation_error_deg(R, np.eye(3))
            assert abs(err - np.degrees(angle)) <= 1e-9

    def test_rotation_error_symmetry(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = exp_so3(rng.normal(size=3))
            b = exp_so3(rng.normal(size=3))
            assert rotation_error_deg(a, b) == pytest.approx(
                rotation_error_deg(b, a), abs=1e-10
            )

    def test_translation_errors(self):
        z = np.zeros(3)
        assert translation_error(np.array([1.0, 0, 0]), z) == pytest.approx(1.0)
        assert translation_error(np.array([1.0, 2.0, 2.0]), z) == pytest.approx(3.0)
        assert translation_error(z, z) == 0.0


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(ValueError):
            Intrinsics(0.0, 1.0, 0.0, 0.0, 10, 10)
        with pytest.raises(ValueError):
            Intrinsics(1.0, 1.0, 0.0, 0.0, 0, 10)

    def test_backproject_unit_depth(self):
        b = KINECT.backproject(np.array([KINECT.cx, KINECT.cy]))
        assert np.allclose(b, [0.0, 0.0, 1.0])
