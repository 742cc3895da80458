"""Localization metrics: per-query errors, aggregates, and report files.

A MetricsReport is the single report format of the pipeline: the localize
command writes one (aggregated at the default thresholds) and the eval
command re-aggregates its per-query rows at different thresholds.  Report
files are deterministic JSON/CSV; wall-clock runtimes are kept out of them
unless explicitly requested, so fixed-seed pipeline runs stay byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, rotation_error_deg, translation_error
from .localization import LocalizationFailure, PoseEstimate

DEFAULT_ROT_THRESHOLD_DEG = 3.0
DEFAULT_TRANS_THRESHOLD_CM = 3.0


@dataclass
class QueryMetrics:
    """One row of the report; error fields are None for failed queries."""

    query: str
    localized: bool
    rot_err_deg: float | None
    trans_err_cm: float | None
    within_rot: bool
    within_trans: bool
    msac_score: float | None
    num_inliers: int
    num_lo_refinements: int
    runtime_ms: float | None


@dataclass
class MetricsReport:
    rot_threshold_deg: float
    trans_threshold_cm: float
    per_query: list[QueryMetrics]
    median_rot_deg: float | None
    median_trans_cm: float | None
    recall_rot: float
    recall_trans: float
    mean_runtime_ms: float | None
    n_queries: int
    n_localized: int
    n_failed: int


def _aggregate(rows: list[QueryMetrics], rot_thresh: float, trans_thresh: float) -> MetricsReport:
    n = len(rows)
    rot_errs = [r.rot_err_deg for r in rows if r.localized and r.rot_err_deg is not None]
    trans_errs = [r.trans_err_cm for r in rows if r.localized and r.trans_err_cm is not None]
    runtimes = [r.runtime_ms for r in rows if r.runtime_ms is not None]
    n_localized = sum(r.localized for r in rows)
    return MetricsReport(
        rot_threshold_deg=rot_thresh,
        trans_threshold_cm=trans_thresh,
        per_query=rows,
        median_rot_deg=float(np.median(rot_errs)) if rot_errs else None,
        median_trans_cm=float(np.median(trans_errs)) if trans_errs else None,
        recall_rot=(sum(r.within_rot for r in rows) / n) if n else 0.0,
        recall_trans=(sum(r.within_trans for r in rows) / n) if n else 0.0,
        mean_runtime_ms=float(np.mean(runtimes)) if runtimes else None,
        n_queries=n,
        n_localized=n_localized,
        n_failed=n - n_localized,
    )


def aggregate_metrics(
    results: list[PoseEstimate | LocalizationFailure],
    gt_poses: list[Pose],
    rot_threshold_deg: float = DEFAULT_ROT_THRESHOLD_DEG,
    trans_threshold_cm: float = DEFAULT_TRANS_THRESHOLD_CM,
    names: list[str] | None = None,
) -> MetricsReport:
    """Score localization results against ground-truth world->query poses.

    Estimated poses must already be expressed in the same world frame as the
    ground truth.  Medians run over localized queries; recall denominators
    count every query, so failures are misses.
    """
    if len(results) != len(gt_poses):
        raise ValueError("results and ground-truth pose counts differ")
    if names is None:
        names = [f"query_{i:04d}" for i in range(len(results))]
    rows = []
    for name, result, gt in zip(names, results, gt_poses):
        if isinstance(result, LocalizationFailure):
            rows.append(
                QueryMetrics(name, False, None, None, False, False, None, 0, 0,
                             result.runtime_ms)
            )
            continue
        rot = rotation_error_deg(result.pose.R, gt.R)
        trans = 100.0 * translation_error(result.pose.t, gt.t)
        rows.append(
            QueryMetrics(
                query=name,
                localized=True,
                rot_err_deg=rot,
                trans_err_cm=trans,
                within_rot=rot < rot_threshold_deg,
                within_trans=trans < trans_threshold_cm,
                msac_score=result.msac_score,
                num_inliers=int(result.inlier_mask.sum()),
                num_lo_refinements=result.num_lo_refinements,
                runtime_ms=result.runtime_ms,
            )
        )
    return _aggregate(rows, rot_threshold_deg, trans_threshold_cm)


def reaggregate(report: MetricsReport, rot_threshold_deg: float, trans_threshold_cm: float) -> MetricsReport:
    """Re-score an existing report's rows at different thresholds."""
    rows = []
    for r in report.per_query:
        within_rot = r.localized and r.rot_err_deg is not None and r.rot_err_deg < rot_threshold_deg
        within_trans = (
            r.localized and r.trans_err_cm is not None and r.trans_err_cm < trans_threshold_cm
        )
        rows.append(
            QueryMetrics(
                r.query, r.localized, r.rot_err_deg, r.trans_err_cm,
                within_rot, within_trans, r.msac_score, r.num_inliers,
                r.num_lo_refinements, r.runtime_ms,
            )
        )
    return _aggregate(rows, rot_threshold_deg, trans_threshold_cm)


def _row_dict(r: QueryMetrics, include_timing: bool) -> dict:
    d = {
        "query": r.query,
        "localized": r.localized,
        "rot_err_deg": r.rot_err_deg,
        "trans_err_cm": r.trans_err_cm,
        "within_rot": r.within_rot,
        "within_trans": r.within_trans,
        "msac_score": r.msac_score,
        "num_inliers": r.num_inliers,
        "num_lo_refinements": r.num_lo_refinements,
        "runtime_ms": r.runtime_ms if include_timing else None,
    }
    return d


def write_metrics_report(report: MetricsReport, json_path, csv_path=None, include_timing: bool = False):
    """Serialize a report as canonical JSON (and optionally a per-query CSV).

    Timing is excluded by default so that fixed-seed pipeline runs emit
    byte-identical artifacts; pass include_timing=True for profiling output.
    """
    payload = {
        "format": "metrics-report-v1",
        "thresholds": {
            "rot_deg": report.rot_threshold_deg,
            "trans_cm": report.trans_threshold_cm,
        },
        "aggregates": {
            "median_rot_deg": report.median_rot_deg,
            "median_trans_cm": report.median_trans_cm,
            "recall_rot": report.recall_rot,
            "recall_trans": report.recall_trans,
            "mean_runtime_ms": report.mean_runtime_ms if include_timing else None,
            "n_queries": report.n_queries,
            "n_localized": report.n_localized,
            "n_failed": report.n_failed,
        },
        "per_query": [_row_dict(r, include_timing) for r in report.per_query],
    }
    with open(json_path, "w") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(
                ["query", "localized", "rot_err_deg", "trans_err_cm", "within_rot",
                 "within_trans", "msac_score", "num_inliers", "num_lo_refinements",
                 "runtime_ms"]
            )
            for r in report.per_query:
                d = _row_dict(r, include_timing)
                writer.writerow(
                    [d["query"], int(d["localized"]),
                     "" if d["rot_err_deg"] is None else repr(d["rot_err_deg"]),
                     "" if d["trans_err_cm"] is None else repr(d["trans_err_cm"]),
                     int(d["within_rot"]), int(d["within_trans"]),
                     "" if d["msac_score"] is None else repr(d["msac_score"]),
                     d["num_inliers"], d["num_lo_refinements"],
                     "" if d["runtime_ms"] is None else repr(d["runtime_ms"])]
                )


def read_metrics_report(json_path) -> MetricsReport:
    with open(json_path) as f:
        payload = json.load(f)
    if payload.get("format") != "metrics-report-v1":
        raise ValueError("unknown report format")
    rows = [
        QueryMetrics(
            d["query"], d["localized"], d["rot_err_deg"], d["trans_err_cm"],
            d["within_rot"], d["within_trans"], d["msac_score"], d["num_inliers"],
            d["num_lo_refinements"], d["runtime_ms"],
        )
        for d in payload["per_query"]
    ]
    agg = payload["aggregates"]
    thr = payload["thresholds"]
    return MetricsReport(
        rot_threshold_deg=thr["rot_deg"],
        trans_threshold_cm=thr["trans_cm"],
        per_query=rows,
        median_rot_deg=agg["median_rot_deg"],
        median_trans_cm=agg["median_trans_cm"],
        recall_rot=agg["recall_rot"],
        recall_trans=agg["recall_trans"],
        mean_runtime_ms=agg["mean_runtime_ms"],
        n_queries=agg["n_queries"],
        n_localized=agg["n_localized"],
        n_failed=agg["n_failed"],
    )
