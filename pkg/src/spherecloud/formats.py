"""Binary map/query file formats, sidecars, and COLMAP ingestion.

All multi-byte values are little-endian.  Cloud files share an 8-byte magic
(ASCII, NUL-padded) that doubles as a format version:

  PNTC1: point cloud     header: magic | dim u32 | count u64
  SPHC1: sphere cloud    header: magic | dim u32 | count u64 | centre 3xf64
  ULC1:  line cloud      header: magic | dim u32 | count u64

followed by `count` fixed-size records:

  PNTC1: position 3xf64 | descriptor dim x f32 | color 3xu8
  SPHC1: bearing  3xf64 | descriptor dim x f32 | color 3xu8
  ULC1:  point 3xf64 | direction 3xf64 | descriptor dim x f32 | color 3xu8

Query files (QRYF1) store one camera: magic | dim u32 | count u64 |
fx,fy,cx,cy f64 | width,height u32 | has_gt u8 | [R 9xf64 row-major, t 3xf64]
| records (u 2xf64 | z f64 | descriptor dim x f32).  The GT pose, when
present, maps world to query.

The sphere-cloud file intentionally carries no eta, seed, or provenance:
those live in the JSON sidecar, which must never ship with the map.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .construction import LineCloud, PointCloud, ProvenanceSidecar, SphereCloud
from .geometry import Intrinsics, Pose
from .rng import generator

MAGIC_POINT = b"PNTC1\x00\x00\x00"
MAGIC_SPHERE = b"SPHC1\x00\x00\x00"
MAGIC_LINE = b"ULC1\x00\x00\x00\x00"
MAGIC_QUERY = b"QRYF1\x00\x00\x00"


class FileFormatError(ValueError):
    """Malformed or truncated file; carries the offending byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _read_exact(f, n: int, what: str) -> bytes:
    offset = f.tell()
    data = f.read(n)
    if len(data) != n:
        raise FileFormatError(f"truncated {what}: wanted {n} bytes, got {len(data)}", offset)
    return data


def _check_finite(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        raise FileFormatError(f"non-finite value in {what}")


def _write_records(f, geometry: np.ndarray, descriptors: np.ndarray, colors: np.ndarray):
    n = len(geometry)
    geo = np.ascontiguousarray(geometry, dtype="<f8").reshape(n, -1)
    desc = np.ascontiguousarray(descriptors, dtype="<f4")
    col = np.ascontiguousarray(colors, dtype=np.uint8)
    for i in range(n):
        f.write(geo[i].tobytes())
        f.write(desc[i].tobytes())
        f.write(col[i].tobytes())


def _read_records(f, count: int, dim: int, geo_cols: int):
    rec_size = geo_cols * 8 + dim * 4 + 3
    data = _read_exact(f, rec_size * count, "records")
    extra = f.read(1)
    if extra:
        raise FileFormatError("trailing bytes after final record", f.tell() - 1)
    raw = np.frombuffer(data, dtype=np.uint8).reshape(count, rec_size)
    geometry = raw[:, : geo_cols * 8].copy().view("<f8").reshape(count, geo_cols)
    desc = (
        raw[:, geo_cols * 8 : geo_cols * 8 + dim * 4].copy().view("<f4").reshape(count, dim)
    )
    colors = raw[:, geo_cols * 8 + dim * 4 :].copy()
    return geometry.astype(np.float64), desc.astype(np.float32), colors


def write_point_cloud(path, pc: PointCloud):
    with open(path, "wb") as f:
        f.write(MAGIC_POINT)
        f.write(struct.pack("<IQ", pc.descriptor_dim, len(pc)))
        _write_records(f, pc.positions, pc.descriptors, pc.colors)


def write_sphere_cloud(path, sc: SphereCloud):
    with open(path, "wb") as f:
        f.write(MAGIC_SPHERE)
        f.write(struct.pack("<IQ", sc.descriptor_dim, len(sc)))
        f.write(np.asarray(sc.centre, "<f8").tobytes())
        _write_records(f, sc.bearings, sc.descriptors, sc.colors)


def write_line_cloud(path, lc: LineCloud):
    with open(path, "wb") as f:
        f.write(MAGIC_LINE)
        f.write(struct.pack("<IQ", lc.descriptors.shape[1], len(lc)))
        geom = np.concatenate([lc.origins, lc.directions], axis=1)
        _write_records(f, geom, lc.descriptors, lc.colors)


def read_cloud(path) -> PointCloud | SphereCloud | LineCloud:
    """Load any cloud file, validating invariants declared by its magic."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, "magic")
        if magic not in (MAGIC_POINT, MAGIC_SPHERE, MAGIC_LINE):
            raise FileFormatError(f"unknown magic {magic!r}", 0)
        dim, count = struct.unpack("<IQ", _read_exact(f, 12, "header"))
        if magic == MAGIC_SPHERE:
            centre = np.frombuffer(_read_exact(f, 24, "centre"), dtype="<f8").copy()
            _check_finite(centre, "sphere centre")
            geom, desc, col = _read_records(f, count, dim, 3)
            _check_finite(geom, "bearings")
            _check_finite(desc, "descriptors")
            norms = np.linalg.norm(geom, axis=1)
            if count and np.max(np.abs(norms - 1.0)) > 1e-9:
                raise FileFormatError("sphere bearing is not unit-norm")
            return SphereCloud(centre, geom, desc, col)
        if magic == MAGIC_POINT:
            geom, desc, col = _read_records(f, count, dim, 3)
            _check_finite(geom, "positions")
            _check_finite(desc, "descriptors")
            return PointCloud(geom, desc, col)
        geom, desc, col = _read_records(f, count, dim, 6)
        _check_finite(geom, "lines")
        _check_finite(desc, "descriptors")
        norms = np.linalg.norm(geom[:, 3:], axis=1)
        if count and np.max(np.abs(norms - 1.0)) > 1e-9:
            raise FileFormatError("line direction is not unit-norm")
        return LineCloud(geom[:, :3], geom[:, 3:], desc, col)


@dataclass
class QueryData:
    """One query camera: keypoints, depths, descriptors, optional GT pose."""

    intrinsics: Intrinsics
    keypoints: np.ndarray  # (M, 2) float64
    depths: np.ndarray  # (M,) float64
    descriptors: np.ndarray  # (M, D) float32
    gt_pose: Pose | None = None  # world -> query


def write_query(path, q: QueryData):
    if np.any(q.depths <= 0):
        raise ValueError("query depths must be positive")
    with open(path, "wb") as f:
        f.write(MAGIC_QUERY)
        f.write(struct.pack("<IQ", q.descriptors.shape[1], len(q.keypoints)))
        intr = q.intrinsics
        f.write(struct.pack("<4d2I", intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height))
        if q.gt_pose is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            f.write(np.ascontiguousarray(q.gt_pose.R, "<f8").tobytes())
            f.write(np.ascontiguousarray(q.gt_pose.t, "<f8").tobytes())
        for i in range(len(q.keypoints)):
            f.write(np.ascontiguousarray(q.keypoints[i], "<f8").tobytes())
            f.write(struct.pack("<d", float(q.depths[i])))
            f.write(np.ascontiguousarray(q.descriptors[i], "<f4").tobytes())


def read_query(path) -> QueryData:
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, "magic")
        if magic != MAGIC_QUERY:
            raise FileFormatError(f"unknown magic {magic!r}", 0)
        dim, count = struct.unpack("<IQ", _read_exact(f, 12, "header"))
        fx, fy, cx, cy, w, h = struct.unpack("<4d2I", _read_exact(f, 40, "intrinsics"))
        intr = Intrinsics(fx, fy, cx, cy, w, h)
        (has_gt,) = struct.unpack("<B", _read_exact(f, 1, "gt flag"))
        gt = None
        if has_gt:
            R = np.frombuffer(_read_exact(f, 72, "gt rotation"), "<f8").reshape(3, 3).copy()
            t = np.frombuffer(_read_exact(f, 24, "gt translation"), "<f8").copy()
            gt = Pose.world_to_query(R, t)
        rec = 16 + 8 + dim * 4
        data = _read_exact(f, rec * count, "records")
        if f.read(1):
            raise FileFormatError("trailing bytes after final record", f.tell() - 1)
        raw = np.frombuffer(data, np.uint8).reshape(count, rec)
        kp = raw[:, :16].copy().view("<f8").reshape(count, 2)
        z = raw[:, 16:24].copy().view("<f8").reshape(count)
        desc = raw[:, 24:].copy().view("<f4").reshape(count, dim)
        _check_finite(kp, "keypoints")
        _check_finite(z, "depths")
        _check_finite(desc, "descriptors")
        if np.any(z <= 0):
            raise FileFormatError("non-positive depth record")
        return QueryData(intr, kp, z, desc.astype(np.float32), gt)


def write_sidecar(path, sidecar: ProvenanceSidecar):
    """Provenance as JSON; keep this file away from the published map."""
    entries = []
    for i in range(len(sidecar)):
        if sidecar.is_true[i]:
            entries.append(
                {"kind": "true", "original": [float(v) for v in sidecar.original_positions[i]]}
            )
        else:
            entries.append({"kind": "fake", "source": int(sidecar.fake_source[i])})
    payload = {"format": "sphere-provenance-v1", "entries": entries}
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def read_sidecar(path) -> ProvenanceSidecar:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != "sphere-provenance-v1":
        raise FileFormatError("unknown sidecar format")
    entries = payload["entries"]
    n = len(entries)
    is_true = np.zeros(n, bool)
    originals = np.full((n, 3), np.nan)
    source = np.full(n, -1, np.int64)
    for i, e in enumerate(entries):
        if e["kind"] == "true":
            is_true[i] = True
            originals[i] = e["original"]
        elif e["kind"] == "fake":
            source[i] = e["source"]
        else:
            raise FileFormatError(f"unknown provenance kind {e['kind']!r} at entry {i}")
    return ProvenanceSidecar(is_true, originals, source)


def ingest_colmap_points(path, descriptor_path=None, placeholder_dim: int = 128, seed: int = 0) -> PointCloud:
    """Parse a COLMAP points3D.txt file into a PointCloud.

    The text format carries no descriptors; they are read from a companion
    binary file (defaults to `<path>.desc` when it exists) or synthesized as
    random unit vectors and flagged via `descriptor_source="placeholder"`.

    Companion format: magic DESC1 (8 bytes, NUL-padded) | dim u32 | count u64
    | count*dim little-endian f32, rows in file order of points3D.txt.
    """
    path = Path(path)
    positions = []
    colors = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 7:
                raise FileFormatError(f"{path.name}:{lineno}: expected at least 7 fields")
            try:
                xyz = [float(parts[1]), float(parts[2]), float(parts[3])]
                rgb = [int(parts[4]), int(parts[5]), int(parts[6])]
            except ValueError as exc:
                raise FileFormatError(f"{path.name}:{lineno}: {exc}") from None
            if not all(np.isfinite(xyz)):
                raise FileFormatError(f"{path.name}:{lineno}: non-finite coordinate")
            if not all(0 <= c <= 255 for c in rgb):
                raise FileFormatError(f"{path.name}:{lineno}: RGB out of range")
            positions.append(xyz)
            colors.append(rgb)
    if not positions:
        raise FileFormatError(f"{path.name}: no points found")
    positions = np.array(positions, dtype=np.float64)
    colors = np.array(colors, dtype=np.uint8)

    if descriptor_path is None:
        candidate = path.with_suffix(path.suffix + ".desc")
        descriptor_path = candidate if candidate.exists() else None
    if descriptor_path is not None:
        desc = _read_descriptor_file(descriptor_path, len(positions))
        return PointCloud(positions, desc, colors, descriptor_source="data")
    rng = generator(seed)
    desc = rng.normal(size=(len(positions), placeholder_dim))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    return PointCloud(
        positions, desc.astype(np.float32), colors, descriptor_source="placeholder"
    )


def _read_descriptor_file(path, expected_count: int) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, "descriptor magic")
        if magic != b"DESC1\x00\x00\x00":
            raise FileFormatError(f"unknown descriptor magic {magic!r}", 0)
        dim, count = struct.unpack("<IQ", _read_exact(f, 12, "descriptor header"))
        if count != expected_count:
            raise FileFormatError(
                f"descriptor count {count} does not match point count {expected_count}"
            )
        data = _read_exact(f, 4 * dim * count, "descriptor data")
    return np.frombuffer(data, "<f4").reshape(count, dim).astype(np.float32)


def write_descriptor_file(path, descriptors: np.ndarray):
    desc = np.ascontiguousarray(descriptors, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"DESC1\x00\x00\x00")
        f.write(struct.pack("<IQ", desc.shape[1], desc.shape[0]))
        f.write(desc.tobytes())
