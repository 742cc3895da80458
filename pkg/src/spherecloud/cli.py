"""Command-line interface for the sphere-cloud pipeline.

Subcommands: synth, construct, ulc, localize, attack, eval.  Exit codes:
0 success, 1 usage error, 2 data error, 3 no query could be localized.
Every randomized stage takes a --seed; fixed seeds give byte-identical
output artifacts (timing never enters report files).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import formats, metrics
from .attack import AttackConfig, run_attack
from .construction import (
    SphereCloud,
    build_sphere_cloud,
    build_uniform_line_cloud,
    match_descriptors,
    ProvenanceSidecar,
)
from .localization import (
    LocalizationFailure,
    RansacConfig,
    estimate_pose,
    make_correspondence,
    shift_map_origin,
)
from .scenegen import NoiseSpec, apply_noise, generate_scene

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NO_LOCALIZATION = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _query_seed(seed: int, index: int) -> int:
    """Stable per-query RANSAC seed derived from the run seed."""
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


def _parse_centre(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"expected 'x,y,z', got {text!r}")
    return np.array([float(p) for p in parts])


def _load_ransac_config(args) -> tuple[RansacConfig, float]:
    """Merge defaults, an optional config file, and explicit flags."""
    values = {
        "tau_epipolar_px": 1.5,
        "tau_depth": 0.1,
        "lambda": 1e-4,
        "max_iter": 10000,
        "confidence": 0.9999,
        "seed": 0,
        "ratio": 0.9,
    }
    if args.config:
        values.update(_read_flat_config(args.config, set(values)))
    overrides = {
        "tau_epipolar_px": args.tau_epipolar_px,
        "tau_depth": args.tau_depth,
        "lambda": args.lambda_,
        "max_iter": args.max_iter,
        "confidence": args.confidence,
        "seed": args.seed,
        "ratio": args.ratio,
    }
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    cfg = RansacConfig(
        tau_epipolar_px=float(values["tau_epipolar_px"]),
        tau_depth=float(values["tau_depth"]),
        lam=float(values["lambda"]),
        max_iter=int(values["max_iter"]),
        confidence=float(values["confidence"]),
        seed=int(values["seed"]),
    )
    return cfg, float(values["ratio"])


def _read_flat_config(path, known_keys) -> dict:
    """Parse `key = value` lines (a flat TOML subset, comments allowed)."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip().strip("\"'")
            if key not in known_keys:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = raw
    return out


def _load_point_cloud(path):
    """Read a PNTC1 file, or ingest COLMAP points3D text by extension."""
    if Path(path).suffix == ".txt":
        return formats.ingest_colmap_points(path)
    cloud = formats.read_cloud(path)
    if not hasattr(cloud, "positions"):
        raise ValueError(f"{path} is not a point cloud")
    return cloud


def _query_paths(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_dir():
        paths = sorted(p.glob("*.qry"))
        if not paths:
            raise FileNotFoundError(f"no .qry files under {p}")
        return paths
    if p.is_file():
        return [p]
    raise FileNotFoundError(f"query path {p} does not exist")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    scene = generate_scene(
        n_points=args.points,
        n_cameras=args.cameras,
        extent=args.extent,
        descriptor_dim=args.descriptor_dim,
        seed=args.seed,
        layout=args.layout,
    )
    spec = NoiseSpec(
        depth_noise_rel=args.depth_noise,
        pixel_noise_px=args.pixel_noise,
        outlier_rate=args.outlier_rate,
    )
    scene = apply_noise(scene, spec, seed=args.seed + 1)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_point_cloud(out / "points.pntc", scene.point_cloud)
    qdir = out / "queries"
    qdir.mkdir(exist_ok=True)
    for i, (cam, view) in enumerate(zip(scene.cameras, scene.correspondences)):
        q = formats.QueryData(
            intrinsics=cam.intrinsics,
            keypoints=view.pixels,
            depths=view.depths,
            descriptors=scene.point_cloud.descriptors[view.matched_index],
            gt_pose=cam.pose,
        )
        formats.write_query(qdir / f"query_{i:04d}.qry", q)
    print(f"wrote {len(scene.point_cloud)} points and {len(scene.cameras)} queries to {out}")
    return EXIT_OK


def _cmd_construct(args) -> int:
    pc = _load_point_cloud(args.input)
    centre = _parse_centre(args.centre) if args.centre else None
    cloud, sidecar = build_sphere_cloud(
        pc, eta=args.eta, sigma2=args.sigma2, seed=args.seed, centre_override=centre
    )
    formats.write_sphere_cloud(args.output, cloud)
    if args.sidecar:
        formats.write_sidecar(args.sidecar, sidecar)
    print(f"sphere cloud: {len(cloud)} points (eta={args.eta}, sigma2={args.sigma2})")
    return EXIT_OK


def _cmd_ulc(args) -> int:
    pc = _load_point_cloud(args.input)
    lc = build_uniform_line_cloud(pc, seed=args.seed)
    formats.write_line_cloud(args.output, lc)
    if args.sidecar:
        sidecar = ProvenanceSidecar(
            is_true=np.ones(len(pc), bool),
            original_positions=pc.positions.copy(),
            fake_source=np.full(len(pc), -1, np.int64),
        )
        formats.write_sidecar(args.sidecar, sidecar)
    print(f"uniform line cloud: {len(lc)} lines")
    return EXIT_OK


def _cmd_localize(args) -> int:
    cloud = formats.read_cloud(args.map)
    if not isinstance(cloud, SphereCloud):
        raise ValueError("localization requires a sphere-cloud map (SPHC1)")
    cfg, ratio = _load_ransac_config(args)
    paths = _query_paths(args.queries)

    results = []
    gt_poses = []
    names = []
    for i, path in enumerate(paths):
        q = formats.read_query(path)
        names.append(path.stem)
        gt_poses.append(q.gt_pose)
        pairs = match_descriptors(q.descriptors, cloud, ratio=ratio)
        if len(pairs) < 3:
            results.append(
                LocalizationFailure(
                    reason=f"only {len(pairs)} descriptor matches",
                    num_correspondences=len(pairs),
                    runtime_ms=0.0,
                )
            )
            continue
        corrs = [
            make_correspondence(
                q.keypoints[qi], q.depths[qi], cloud.bearings[si], q.intrinsics
            )
            for qi, si in pairs
        ]
        query_cfg = RansacConfig(
            tau_epipolar_px=cfg.tau_epipolar_px,
            tau_depth=cfg.tau_depth,
            lam=cfg.lam,
            max_iter=cfg.max_iter,
            confidence=cfg.confidence,
            seed=_query_seed(cfg.seed, i),
        )
        result = estimate_pose(corrs, q.intrinsics, query_cfg)
        if not isinstance(result, LocalizationFailure):
            result.pose = shift_map_origin(result.pose, cloud.centre)
        results.append(result)

    report = metrics.aggregate_metrics(results, gt_poses, names=names)
    metrics.write_metrics_report(report, args.report)
    if args.timing_out:
        with open(args.timing_out, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["query", "runtime_ms"])
            for name, result in zip(names, results):
                writer.writerow([name, repr(float(result.runtime_ms))])
    localized = report.n_localized
    mean_rt = np.mean([r.runtime_ms for r in results]) if results else 0.0
    print(
        f"localized {localized}/{report.n_queries} queries "
        f"(mean runtime {mean_rt:.1f} ms)",
        file=sys.stderr,
    )
    if localized == 0:
        return EXIT_NO_LOCALIZATION
    return EXIT_OK


def _cmd_attack(args) -> int:
    cloud = formats.read_cloud(args.cloud)
    if hasattr(cloud, "positions"):
        raise ValueError("attack expects a sphere or line cloud, not a point cloud")
    gt = None
    if args.gt_sidecar:
        gt = formats.read_sidecar(args.gt_sidecar).original_positions
    cfg = AttackConfig(k_neighbors=args.k, histogram_bandwidth=args.bandwidth)
    result = run_attack(cloud, cfg, gt_positions=gt)
    with open(args.out_csv, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["line", "x", "y", "z", "e_g"])
        for i in range(len(result.recovered)):
            e = float(result.errors[i])
            writer.writerow(
                [i, repr(float(result.recovered[i][0])), repr(float(result.recovered[i][1])),
                 repr(float(result.recovered[i][2])), "" if np.isnan(e) else repr(e)]
            )
    known = result.errors[~np.isnan(result.errors)]
    if known.size:
        pct = np.percentile(known, [25, 50, 75, 90])
        print(
            "e_g percentiles [m]: "
            f"p25={pct[0]:.4f} p50={pct[1]:.4f} p75={pct[2]:.4f} p90={pct[3]:.4f}"
        )
    else:
        print("no ground truth provided; wrote recovered points only")
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = metrics.read_metrics_report(args.report)
    rot_thr, trans_thr = (float(v) for v in args.thresholds.split(","))
    rescored = metrics.reaggregate(report, rot_thr, trans_thr)
    metrics.write_metrics_report(rescored, args.out_json, csv_path=args.out_csv)
    med_r = "n/a" if rescored.median_rot_deg is None else f"{rescored.median_rot_deg:.4f}"
    med_t = "n/a" if rescored.median_trans_cm is None else f"{rescored.median_trans_cm:.4f}"
    print(
        f"median dR = {med_r} deg, median dt = {med_t} cm, "
        f"recall(dR<{rot_thr}) = {rescored.recall_rot:.2%}, "
        f"recall(dt<{trans_thr}cm) = {rescored.recall_trans:.2%}, "
        f"failures = {rescored.n_failed}/{rescored.n_queries}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spherecloud", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with queries")
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--cameras", type=int, default=10)
    p.add_argument("--extent", type=float, default=4.0)
    p.add_argument("--layout", choices=["box", "wall"], default="box")
    p.add_argument("--descriptor-dim", type=int, default=128)
    p.add_argument("--depth-noise", type=float, default=0.0, help="relative depth noise")
    p.add_argument("--pixel-noise", type=float, default=0.0, help="pixel noise [px]")
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("construct", help="build a sphere cloud from a point cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--eta", type=float, default=0.25)
    p.add_argument("--sigma2", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--centre", help="override centre as 'x,y,z'")
    p.add_argument("--output", required=True)
    p.add_argument("--sidecar", help="write provenance ground truth here")
    p.set_defaults(func=_cmd_construct)

    p = sub.add_parser("ulc", help="build the uniform line-cloud baseline")
    p.add_argument("--input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--sidecar", help="write provenance ground truth here")
    p.set_defaults(func=_cmd_ulc)

    p = sub.add_parser("localize", help="localize RGB-D queries against a sphere cloud")
    p.add_argument("--map", required=True)
    p.add_argument("--queries", required=True, help="a .qry file or a directory of them")
    p.add_argument("--config", help="flat key=value config mirroring the RANSAC fields")
    p.add_argument("--lambda", dest="lambda_", type=float, default=None)
    p.add_argument("--tau-epipolar-px", type=float, default=None)
    p.add_argument("--tau-depth", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--confidence", type=float, default=None)
    p.add_argument("--ratio", type=float, default=None, help="descriptor ratio test")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report", required=True)
    p.add_argument("--timing-out", help="optional per-query runtime CSV (not deterministic)")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("attack", help="run the density attack against a map")
    p.add_argument("--cloud", required=True)
    p.add_argument("--gt-sidecar", help="provenance sidecar for e_g evaluation")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("eval", help="re-aggregate a localization report")
    p.add_argument("--report", required=True)
    p.add_argument("--thresholds", default="3.0,3.0", help="'rot_deg,trans_cm'")
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-csv")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
