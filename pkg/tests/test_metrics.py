import numpy as np
import pytest

from spherecloud.geometry import Pose, rotation_from_axis_angle
from spherecloud.localization import LocalizationFailure, PoseEstimate
from spherecloud.metrics import (
    aggregate_metrics,
    read_metrics_report,
    reaggregate,
    write_metrics_report,
)


def estimate_for(pose, score=0.0, n=10):
    return PoseEstimate(
        pose=pose,
        inlier_mask=np.ones(n, bool),
        msac_score=score,
        num_lo_refinements=1,
        runtime_ms=5.0,
    )


def gt_pose(seed=0):
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    return Pose.world_to_query(
        rotation_from_axis_angle(axis, rng.uniform(0.1, 2.0)), rng.normal(size=3)
    )


class TestAggregateMetrics:
    def test_exact_poses(self):
        gts = [gt_pose(i) for i in range(5)]
        results = [estimate_for(g) for g in gts]
        report = aggregate_metrics(results, gts)
        assert report.median_rot_deg == pytest.approx(0.0, abs=1e-9)
        assert report.median_trans_cm == pytest.approx(0.0, abs=1e-9)
        assert report.recall_rot == 1.0
        assert report.recall_trans == 1.0
        assert report.n_failed == 0

    def test_failure_counting(self):
        gts = [gt_pose(i) for i in range(10)]
        results = [estimate_for(g) for g in gts]
        results[3] = LocalizationFailure("no inliers", 5, 1.0)
        report = aggregate_metrics(results, gts)
        assert report.n_queries == 10
        assert report.n_localized == 9
        assert report.n_failed == 1
        # failures count as misses in the recall denominators
        assert report.recall_rot == pytest.approx(0.9)

    def test_hand_built_median(self):
        gts = []
        results = []
        for angle_deg in (0.1, 0.2, 0.3):
            g = gt_pose(1)
            gts.append(g)
            off = rotation_from_axis_angle(np.array([0, 0, 1.0]), np.radians(angle_deg))
            results.append(estimate_for(Pose.world_to_query(off @ g.R, g.t)))
        report = aggregate_metrics(results, gts)
        assert report.median_rot_deg == pytest.approx(0.2, abs=1e-9)

    def test_translation_in_centimeters(self):
        g = gt_pose(2)
        shifted = Pose.world_to_query(g.R, g.t + np.array([0.02, 0.0, 0.0]))
        report = aggregate_metrics([estimate_for(shifted)], [g])
        assert report.median_trans_cm == pytest.approx(2.0, abs=1e-9)
        assert report.per_query[0].within_trans

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            aggregate_metrics([], [gt_pose(0)])


class TestReportIO:
    def make_report(self):
        gts = [gt_pose(i) for i in range(4)]
        results = [estimate_for(g) for g in gts]
        results[2] = LocalizationFailure("too few matches", 2, 0.5)
        return aggregate_metrics(results, gts)

    def test_json_round_trip_bytes(self, tmp_path):
        report = self.make_report()
        p1 = tmp_path / "r1.json"
        p2 = tmp_path / "r2.json"
        write_metrics_report(report, p1)
        back = read_metrics_report(p1)
        write_metrics_report(back, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_timing_excluded_by_default(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "r.json"
        write_metrics_report(report, path)
        back = read_metrics_report(path)
        assert back.mean_runtime_ms is None
        assert all(r.runtime_ms is None for r in back.per_query)

    def test_timing_included_on_request(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "r.json"
        write_metrics_report(report, path, include_timing=True)
        back = read_metrics_report(path)
        # three successes at 5 ms, one failure at 0.5 ms
        assert back.mean_runtime_ms == pytest.approx(np.mean([5.0, 5.0, 0.5, 5.0]))

    def test_csv_written(self, tmp_path):
        report = self.make_report()
        write_metrics_report(report, tmp_path / "r.json", csv_path=tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 1 + 4
        assert lines[0].startswith("query,localized,rot_err_deg")

    def test_reaggregate_changes_thresholds(self):
        gts = [gt_pose(i) for i in range(3)]
        results = []
        for i, g in enumerate(gts):
            off = rotation_from_axis_angle(np.array([0, 0, 1.0]), np.radians(1.0 + i))
            results.append(estimate_for(Pose.world_to_query(off @ g.R, g.t)))
        report = aggregate_metrics(results, gts)  # errors: 1, 2, 3 deg
        assert report.recall_rot == pytest.approx(2 / 3)
        tight = reaggregate(report, rot_threshold_deg=1.5, trans_threshold_cm=3.0)
        assert tight.recall_rot == pytest.approx(1 / 3)
        assert tight.median_rot_deg == report.median_rot_deg
