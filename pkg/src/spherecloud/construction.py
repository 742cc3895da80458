"""Sphere-cloud and line-cloud construction from sparse 3D point maps.

A point cloud is stored struct-of-arrays: positions (N, 3) float64,
descriptors (N, D) float32, colors (N, 3) uint8.  Sphere clouds replace each
position by the unit bearing from the map centroid toward the point; the
enhanced construction then discards a fraction of the points and backfills
with fake points so the total count is preserved and discarded descriptors
are recycled onto the fakes.

Provenance (which entries are real, and where the real ones came from) is
kept strictly out-of-band in a sidecar: shipping it with the cloud would
defeat the privacy mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import generator, substreams

DEFAULT_ETA = 0.25
DEFAULT_SIGMA2 = 0.1
CENTRE_EPS = 1e-9  # points closer than this to the centre cannot be projected

# guard against 1/3 * 9 = 2.999... when taking floor(eta * N)
_FLOOR_EPS = 1e-9


class DegeneratePointError(ValueError):
    """A map point coincides with the projection centre."""


@dataclass
class PointCloud:
    """Sparse 3D map: positions, descriptors, RGB colors."""

    positions: np.ndarray  # (N, 3) float64
    descriptors: np.ndarray  # (N, D) float32
    colors: np.ndarray  # (N, 3) uint8
    descriptor_source: str = "data"  # "data" or "placeholder" (see evalio ingest)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32)
        self.colors = np.asarray(self.colors, dtype=np.uint8)
        n = len(self.positions)
        if self.positions.shape != (n, 3):
            raise ValueError("positions must have shape (N, 3)")
        if self.descriptors.shape[0] != n or self.colors.shape != (n, 3):
            raise ValueError("descriptor/color counts must match positions")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite map point position")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]


@dataclass
class SphereCloud:
    """Privacy-preserving map: centre plus unit bearings with descriptors."""

    centre: np.ndarray  # (3,) float64, world frame
    bearings: np.ndarray  # (N, 3) float64, unit rows
    descriptors: np.ndarray  # (N, D) float32
    colors: np.ndarray  # (N, 3) uint8

    def __post_init__(self):
        self.centre = np.asarray(self.centre, dtype=np.float64)
        self.bearings = np.asarray(self.bearings, dtype=np.float64)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32)
        self.colors = np.asarray(self.colors, dtype=np.uint8)
        norms = np.linalg.norm(self.bearings, axis=1)
        if len(self.bearings) and np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("sphere bearings must be unit vectors")

    def __len__(self) -> int:
        return len(self.bearings)

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]


@dataclass
class LineCloud:
    """Baseline representation: one 3D line through each original point."""

    origins: np.ndarray  # (N, 3) float64, a point on each line
    directions: np.ndarray  # (N, 3) float64, unit rows
    descriptors: np.ndarray  # (N, D) float32
    colors: np.ndarray  # (N, 3) uint8

    def __post_init__(self):
        self.origins = np.asarray(self.origins, dtype=np.float64)
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32)
        self.colors = np.asarray(self.colors, dtype=np.uint8)
        norms = np.linalg.norm(self.directions, axis=1)
        if len(self.directions) and np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("line directions must be unit vectors")

    def __len__(self) -> int:
        return len(self.origins)


@dataclass
class ProvenanceSidecar:
    """Out-of-band ground truth for evaluating a constructed cloud.

    Per output index: is_true flag; the original world position for true
    points (NaN rows for fakes); the output index of the kept point whose
    location seeded each fake (-1 for true points).  Only produced on
    explicit request and never serialized together with the cloud.
    """

    is_true: np.ndarray  # (N,) bool
    original_positions: np.ndarray  # (N, 3) float64, NaN where fake
    fake_source: np.ndarray  # (N,) int64, -1 where true

    def __post_init__(self):
        self.is_true = np.asarray(self.is_true, dtype=bool)
        self.original_positions = np.asarray(self.original_positions, dtype=np.float64)
        self.fake_source = np.asarray(self.fake_source, dtype=np.int64)
        n = len(self.is_true)
        if self.original_positions.shape != (n, 3) or self.fake_source.shape != (n,):
            raise ValueError("sidecar arrays must share one length")

    def __len__(self) -> int:
        return len(self.is_true)


def compute_centroid(pc: PointCloud) -> np.ndarray:
    """Arithmetic mean of the map positions."""
    if len(pc) == 0:
        raise ValueError("cannot take the centroid of an empty cloud")
    return pc.positions.mean(axis=0)


def project_to_sphere(
    pc: PointCloud, centre: np.ndarray
) -> tuple[SphereCloud, ProvenanceSidecar]:
    """Project every map point onto the unit sphere centred at `centre`.

    Bearings point from the centre toward the original point, so the original
    always lies along the positive bearing direction (cheirality).
    """
    centre = np.asarray(centre, dtype=np.float64)
    offsets = pc.positions - centre
    norms = np.linalg.norm(offsets, axis=1)
    bad = np.nonzero(norms <= CENTRE_EPS)[0]
    if bad.size:
        raise DegeneratePointError(
            f"point {bad[0]} lies within {CENTRE_EPS} m of the centre"
        )
    bearings = offsets / norms[:, None]
    cloud = SphereCloud(centre, bearings, pc.descriptors.copy(), pc.colors.copy())
    sidecar = ProvenanceSidecar(
        is_true=np.ones(len(pc), dtype=bool),
        original_positions=pc.positions.copy(),
        fake_source=np.full(len(pc), -1, dtype=np.int64),
    )
    return cloud, sidecar


def sparsify_and_augment(
    sc: SphereCloud,
    provenance: ProvenanceSidecar,
    eta: float,
    sigma2: float,
    seed: int,
) -> tuple[SphereCloud, ProvenanceSidecar]:
    """Keep a random eta fraction of sphere points, backfill with fakes.

    After a seeded shuffle the first floor(eta * N) points are kept; the rest
    are discarded.  Fake k (k = 0 .. N_discard-1) takes its location from
    kept point i = k mod N_keep (unit-renormalized Gaussian perturbation with
    variance sigma2 per axis) and recycles descriptor and color from
    discarded point k.  Output is the concatenation, shuffled again, so the
    count is exactly N.

    Substream 0 of the seed drives both shuffles, substream 1 the noise.
    """
    n = len(sc)
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    n_keep = int(np.floor(eta * n + _FLOOR_EPS))
    if n_keep < 1:
        raise ValueError(f"eta * N = {eta * n:.3f} keeps no points")
    rng_shuffle, rng_noise = substreams(seed, 2)

    perm = rng_shuffle.permutation(n)
    kept, discarded = perm[:n_keep], perm[n_keep:]
    n_fake = n - n_keep

    src_local = np.arange(n_fake) % n_keep  # fake k <- kept point k mod n_keep
    noise = rng_noise.normal(0.0, np.sqrt(sigma2), size=(n_fake, 3))
    fake_bearings = sc.bearings[kept[src_local]] + noise
    norms = np.linalg.norm(fake_bearings, axis=1)
    # measure-zero guard: redraw noise for any fake that lands on the centre
    while np.any(norms <= 1e-9):
        bad = np.nonzero(norms <= 1e-9)[0]
        redraw = rng_noise.normal(0.0, np.sqrt(sigma2), size=(bad.size, 3))
        noise[bad] = redraw
        fake_bearings[bad] = sc.bearings[kept[src_local[bad]]] + redraw
        norms[bad] = np.linalg.norm(fake_bearings[bad], axis=1)
    fake_bearings /= norms[:, None]
    # zero noise must reproduce the source bearing bit-for-bit
    untouched = ~noise.any(axis=1)
    if np.any(untouched):
        fake_bearings[untouched] = sc.bearings[kept[src_local[untouched]]]

    bearings = np.concatenate([sc.bearings[kept], fake_bearings])
    descriptors = np.concatenate([sc.descriptors[kept], sc.descriptors[discarded]])
    colors = np.concatenate([sc.colors[kept], sc.colors[discarded]])
    is_true = np.concatenate([np.ones(n_keep, bool), np.zeros(n_fake, bool)])
    originals = np.concatenate(
        [provenance.original_positions[kept], np.full((n_fake, 3), np.nan)]
    )
    # pre-shuffle slot of the kept point that seeded each fake
    source_slot = np.concatenate([np.full(n_keep, -1, np.int64), src_local])

    out_perm = rng_shuffle.permutation(n)
    inverse = np.empty(n, dtype=np.int64)
    inverse[out_perm] = np.arange(n)
    fake_source = np.where(source_slot < 0, -1, inverse[np.maximum(source_slot, 0)])

    cloud = SphereCloud(
        sc.centre.copy(), bearings[out_perm], descriptors[out_perm], colors[out_perm]
    )
    sidecar = ProvenanceSidecar(
        is_true[out_perm], originals[out_perm], fake_source[out_perm]
    )
    return cloud, sidecar


def build_sphere_cloud(
    pc: PointCloud,
    eta: float = DEFAULT_ETA,
    sigma2: float = DEFAULT_SIGMA2,
    seed: int = 0,
    centre_override: np.ndarray | None = None,
) -> tuple[SphereCloud, ProvenanceSidecar]:
    """Full construction: centroid -> sphere projection -> sparsify/augment."""
    centre = compute_centroid(pc) if centre_override is None else centre_override
    basic, sidecar = project_to_sphere(pc, centre)
    return sparsify_and_augment(basic, sidecar, eta, sigma2, seed)


def build_uniform_line_cloud(pc: PointCloud, seed: int = 0) -> LineCloud:
    """Baseline line cloud: one uniformly-oriented line through each point.

    The stored point of each line is the foot of the perpendicular from the
    world origin, not the original map point; publishing the original point
    as the line anchor would leak exactly the geometry the lifting hides.
    """
    if len(pc) == 0:
        raise ValueError("cannot build a line cloud from an empty cloud")
    rng = generator(seed)
    directions = rng.normal(size=(len(pc), 3))
    norms = np.linalg.norm(directions, axis=1)
    while np.any(norms <= 1e-12):
        bad = np.nonzero(norms <= 1e-12)[0]
        directions[bad] = rng.normal(size=(bad.size, 3))
        norms[bad] = np.linalg.norm(directions[bad], axis=1)
    directions /= norms[:, None]
    along = np.einsum("ij,ij->i", pc.positions, directions)
    origins = pc.positions - along[:, None] * directions
    return LineCloud(origins, directions, pc.descriptors.copy(), pc.colors.copy())


def match_descriptors(
    query_descs: np.ndarray, sc: SphereCloud, ratio: float = 0.9
) -> list[tuple[int, int]]:
    """Mutual nearest-neighbor matching with Lowe's ratio test.

    Args:
        query_descs: (Q, D) query descriptors.
        sc: sphere cloud to match against.
        ratio: a query match survives only if d1 < ratio * d2 where d1, d2
            are its two smallest L2 distances into the cloud.

    Returns:
        (query_index, sphere_index) pairs, sorted by query index, at most one
        per query keypoint.
    """
    q = np.asarray(query_descs, dtype=np.float64)
    if q.size == 0:
        return []
    if q.ndim != 2 or q.shape[1] != sc.descriptor_dim:
        raise ValueError(
            f"descriptor dimension mismatch: query {q.shape} vs cloud D={sc.descriptor_dim}"
        )
    s = sc.descriptors.astype(np.float64)
    # squared L2 distance matrix via the expansion trick
    d2 = (
        np.sum(q**2, axis=1)[:, None]
        + np.sum(s**2, axis=1)[None, :]
        - 2.0 * (q @ s.T)
    )
    np.maximum(d2, 0.0, out=d2)
    nn = np.argmin(d2, axis=1)
    nn_back = np.argmin(d2, axis=0)
    matches = []
    for qi in range(len(q)):
        si = nn[qi]
        if nn_back[si] != qi:
            continue
        d1 = np.sqrt(d2[qi, si])
        if len(s) >= 2:
            row = d2[qi]
            second = np.sqrt(np.partition(row, 1)[1])
            if not (d1 < ratio * second):
                continue
        matches.append((qi, int(si)))
    return matches
