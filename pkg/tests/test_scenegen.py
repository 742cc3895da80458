import numpy as np
import pytest

from spherecloud.localization import total_cost
from spherecloud.scenegen import NoiseSpec, apply_noise, generate_scene

from util import scene_view_correspondences


class TestGenerateScene:
    def test_seeded_determinism(self):
        a = generate_scene(200, 4, seed=42, descriptor_dim=16)
        b = generate_scene(200, 4, seed=42, descriptor_dim=16)
        assert np.array_equal(a.point_cloud.positions, b.point_cloud.positions)
        assert np.array_equal(a.point_cloud.descriptors, b.point_cloud.descriptors)
        for va, vb in zip(a.correspondences, b.correspondences):
            assert np.array_equal(va.pixels, vb.pixels)
            assert np.array_equal(va.depths, vb.depths)

    def test_correspondences_reproject_exactly(self):
        scene = generate_scene(500, 6, seed=1, descriptor_dim=8)
        for cam, view in zip(scene.cameras, scene.correspondences):
            pts = scene.point_cloud.positions[view.point_index]
            cam_pts = cam.pose.apply(pts)
            pix = cam.intrinsics.project(cam_pts)
            assert np.max(np.abs(pix - view.pixels)) <= 1e-9
            assert np.max(np.abs(cam_pts[:, 2] - view.depths)) == 0.0

    def test_wall_layout_is_planar(self):
        scene = generate_scene(100, 1, seed=2, descriptor_dim=8, layout="wall")
        assert np.all(scene.point_cloud.positions[:, 2] == 0.0)

    def test_unknown_layout(self):
        with pytest.raises(ValueError):
            generate_scene(100, 1, seed=0, layout="cylinder")

    def test_views_have_enough_correspondences(self):
        scene = generate_scene(2000, 20, seed=3, descriptor_dim=8)
        counts = [len(v) for v in scene.correspondences]
        assert min(counts) >= 150

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            generate_scene(5, 1)
        with pytest.raises(ValueError):
            generate_scene(100, 0)

    def test_noiseless_scene_has_zero_cost_at_gt(self):
        scene = generate_scene(400, 3, seed=4, descriptor_dim=8)
        centre = scene.point_cloud.positions.mean(axis=0)
        for vi in range(len(scene.cameras)):
            corrs = scene_view_correspondences(scene, vi, centre)
            gt_centred = scene.cameras[vi].pose
            # shift to the sphere frame: x_q = R(X - c) + (t + R c)
            from spherecloud.geometry import Pose
            pose_sphere = Pose.world_to_query(
                gt_centred.R, gt_centred.t + gt_centred.R @ centre
            )
            cost = total_cost(corrs, pose_sphere.inverse(), scene.cameras[vi].intrinsics, 1e-4)
            assert cost <= 1e-12


class TestApplyNoise:
    def test_zero_spec_is_identity(self):
        scene = generate_scene(300, 4, seed=5, descriptor_dim=8)
        noisy = apply_noise(scene, NoiseSpec(), seed=9)
        for a, b in zip(scene.correspondences, noisy.correspondences):
            assert np.array_equal(a.pixels, b.pixels)
            assert np.array_equal(a.depths, b.depths)
            assert np.array_equal(a.matched_index, b.matched_index)

    def test_depth_noise_statistics(self):
        scene = generate_scene(3000, 14, seed=6, descriptor_dim=8)
        spec = NoiseSpec(depth_noise_rel=0.02)
        noisy = apply_noise(scene, spec, seed=10)
        ratios = np.concatenate(
            [
                n.depths / o.depths - 1.0
                for o, n in zip(scene.correspondences, noisy.correspondences)
            ]
        )
        assert len(ratios) >= 10000
        assert abs(np.std(ratios) - 0.02) <= 0.002  # within 10%

    def test_outlier_rewiring_preserves_labels(self):
        scene = generate_scene(500, 2, seed=7, descriptor_dim=8)
        view_sizes = [len(v) for v in scene.correspondences]
        noisy = apply_noise(scene, NoiseSpec(outlier_rate=0.5), seed=11)
        for orig, view, m in zip(scene.correspondences, noisy.correspondences, view_sizes):
            n_out = int(np.floor(0.5 * m))
            assert int(view.outlier_mask.sum()) == n_out
            # true labels untouched
            assert np.array_equal(view.point_index, orig.point_index)
            # rewired entries point at a different map point
            rew = view.outlier_mask
            assert np.all(view.matched_index[rew] != view.point_index[rew])

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            NoiseSpec(depth_noise_rel=-0.1)
        with pytest.raises(ValueError):
            NoiseSpec(outlier_rate=1.5)

    def test_noise_determinism(self):
        scene = generate_scene(300, 3, seed=8, descriptor_dim=8)
        spec = NoiseSpec(depth_noise_rel=0.05, pixel_noise_px=0.5, outlier_rate=0.2)
        a = apply_noise(scene, spec, seed=12)
        b = apply_noise(scene, spec, seed=12)
        for va, vb in zip(a.correspondences, b.correspondences):
            assert np.array_equal(va.depths, vb.depths)
            assert np.array_equal(va.pixels, vb.pixels)
            assert np.array_equal(va.matched_index, vb.matched_index)
