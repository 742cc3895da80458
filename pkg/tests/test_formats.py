import numpy as np
import pytest

from spherecloud.construction import (
    PointCloud,
    build_sphere_cloud,
    build_uniform_line_cloud,
)
from spherecloud.formats import (
    FileFormatError,
    QueryData,
    ingest_colmap_points,
    read_cloud,
    read_query,
    read_sidecar,
    write_descriptor_file,
    write_line_cloud,
    write_point_cloud,
    write_query,
    write_sidecar,
    write_sphere_cloud,
)
from spherecloud.geometry import Intrinsics, Pose, exp_so3


def make_cloud(n=30, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(
        rng.uniform(-2, 2, size=(n, 3)),
        rng.normal(size=(n, dim)).astype(np.float32),
        rng.integers(0, 256, size=(n, 3), dtype=np.uint8),
    )


class TestCloudRoundTrip:
    def test_point_cloud_bit_exact(self, tmp_path):
        pc = make_cloud()
        path = tmp_path / "map.pntc"
        write_point_cloud(path, pc)
        back = read_cloud(path)
        assert np.array_equal(back.positions, pc.positions)
        assert np.array_equal(back.descriptors, pc.descriptors)
        assert np.array_equal(back.colors, pc.colors)
        # writing again gives identical bytes
        path2 = tmp_path / "map2.pntc"
        write_point_cloud(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_sphere_cloud_bit_exact(self, tmp_path):
        sc, _ = build_sphere_cloud(make_cloud(64), eta=0.5, sigma2=0.1, seed=1)
        path = tmp_path / "map.sphc"
        write_sphere_cloud(path, sc)
        back = read_cloud(path)
        assert np.array_equal(back.centre, sc.centre)
        assert np.array_equal(back.bearings, sc.bearings)
        assert np.array_equal(back.descriptors, sc.descriptors)

    def test_line_cloud_bit_exact(self, tmp_path):
        lc = build_uniform_line_cloud(make_cloud(40), seed=2)
        path = tmp_path / "map.ulc"
        write_line_cloud(path, lc)
        back = read_cloud(path)
        assert np.array_equal(back.origins, lc.origins)
        assert np.array_equal(back.directions, lc.directions)

    def test_unknown_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE9\x00\x00\x00" + b"\x00" * 64)
        with pytest.raises(FileFormatError):
            read_cloud(path)

    def test_truncated_records_report_offset(self, tmp_path):
        pc = make_cloud(10)
        path = tmp_path / "map.pntc"
        write_point_cloud(path, pc)
        data = path.read_bytes()
        path.write_bytes(data[:-7])
        with pytest.raises(FileFormatError) as err:
            read_cloud(path)
        assert "truncated" in str(err.value)
        assert "offset" in str(err.value)

    def test_trailing_garbage_rejected(self, tmp_path):
        pc = make_cloud(10)
        path = tmp_path / "map.pntc"
        write_point_cloud(path, pc)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(FileFormatError):
            read_cloud(path)

    def test_non_unit_bearing_rejected(self, tmp_path):
        sc, _ = build_sphere_cloud(make_cloud(16), eta=1.0, sigma2=0.0, seed=0)
        path = tmp_path / "map.sphc"
        write_sphere_cloud(path, sc)
        raw = bytearray(path.read_bytes())
        # scale the first bearing to norm 0.9: header is 8+12+24 bytes
        off = 44
        b = np.frombuffer(raw[off : off + 24], "<f8") * 0.9
        raw[off : off + 24] = b.tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError):
            read_cloud(path)

    def test_non_finite_rejected(self, tmp_path):
        pc = make_cloud(4)
        path = tmp_path / "map.pntc"
        write_point_cloud(path, pc)
        raw = bytearray(path.read_bytes())
        raw[20 : 20 + 8] = np.array([np.nan]).tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError):
            read_cloud(path)


class TestQueryRoundTrip:
    def make_query(self, with_gt=True, n=25, dim=8, seed=3):
        rng = np.random.default_rng(seed)
        gt = None
        if with_gt:
            gt = Pose.world_to_query(exp_so3(rng.normal(size=3)), rng.normal(size=3))
        return QueryData(
            intrinsics=Intrinsics(525.0, 520.0, 320.0, 240.0, 640, 480),
            keypoints=rng.uniform([0, 0], [640, 480], size=(n, 2)),
            depths=rng.uniform(0.3, 5.0, size=n),
            descriptors=rng.normal(size=(n, dim)).astype(np.float32),
            gt_pose=gt,
        )

    def test_round_trip_with_gt(self, tmp_path):
        q = self.make_query(True)
        path = tmp_path / "q.qry"
        write_query(path, q)
        back = read_query(path)
        assert np.array_equal(back.keypoints, q.keypoints)
        assert np.array_equal(back.depths, q.depths)
        assert np.array_equal(back.descriptors, q.descriptors)
        assert np.array_equal(back.gt_pose.R, q.gt_pose.R)
        assert np.array_equal(back.gt_pose.t, q.gt_pose.t)
        assert back.intrinsics == q.intrinsics

    def test_round_trip_without_gt(self, tmp_path):
        q = self.make_query(False)
        path = tmp_path / "q.qry"
        write_query(path, q)
        assert read_query(path).gt_pose is None

    def test_non_positive_depth_rejected_on_write(self, tmp_path):
        q = self.make_query(False)
        q.depths[0] = 0.0
        with pytest.raises(ValueError):
            write_query(tmp_path / "q.qry", q)

    def test_non_positive_depth_rejected_on_read(self, tmp_path):
        q = self.make_query(False)
        path = tmp_path / "q.qry"
        write_query(path, q)
        raw = bytearray(path.read_bytes())
        # first record: u 2xf64 then z f64; header is 8+12+40+1
        off = 61 + 16
        raw[off : off + 8] = np.array([-1.0]).tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError):
            read_query(path)


class TestSidecar:
    def test_round_trip(self, tmp_path):
        _, sidecar = build_sphere_cloud(make_cloud(50), eta=0.4, sigma2=0.1, seed=4)
        path = tmp_path / "prov.json"
        write_sidecar(path, sidecar)
        back = read_sidecar(path)
        assert np.array_equal(back.is_true, sidecar.is_true)
        assert np.array_equal(back.fake_source, sidecar.fake_source)
        true_idx = np.nonzero(sidecar.is_true)[0]
        assert np.array_equal(
            back.original_positions[true_idx], sidecar.original_positions[true_idx]
        )
        path2 = tmp_path / "prov2.json"
        write_sidecar(path2, back)
        assert path.read_bytes() == path2.read_bytes()


class TestColmapIngest:
    HEADER = "# 3D point list with one line of data per point:\n"

    def test_two_point_file(self, tmp_path):
        path = tmp_path / "points3D.txt"
        path.write_text(
            self.HEADER
            + "1 0.5 -1.25 3.0 255 0 10 0.5 1 2\n"
            + "7 -2.0 0.0 1.5 0 128 255 1.2 3 4 5 6\n"
        )
        pc = ingest_colmap_points(path, seed=0)
        assert len(pc) == 2
        assert np.allclose(pc.positions[0], [0.5, -1.25, 3.0])
        assert np.array_equal(pc.colors[1], [0, 128, 255])
        assert pc.descriptor_source == "placeholder"

    def test_comment_lines_skipped(self, tmp_path):
        path = tmp_path / "points3D.txt"
        path.write_text("# comment\n\n# another\n1 1 2 3 10 20 30 0.1\n")
        assert len(ingest_colmap_points(path)) == 1

    def test_malformed_coordinate_names_line(self, tmp_path):
        path = tmp_path / "points3D.txt"
        path.write_text("1 0.0 bad 3.0 255 0 0 0.5\n")
        with pytest.raises(FileFormatError) as err:
            ingest_colmap_points(path)
        assert ":1:" in str(err.value)

    def test_companion_descriptors(self, tmp_path):
        path = tmp_path / "points3D.txt"
        path.write_text("1 0 0 1 0 0 0 0.1\n2 1 0 0 0 0 0 0.1\n")
        desc = np.arange(16, dtype=np.float32).reshape(2, 8)
        write_descriptor_file(tmp_path / "points3D.txt.desc", desc)
        pc = ingest_colmap_points(path)
        assert pc.descriptor_source == "data"
        assert np.array_equal(pc.descriptors, desc)

    def test_companion_count_mismatch(self, tmp_path):
        path = tmp_path / "points3D.txt"
        path.write_text("1 0 0 1 0 0 0 0.1\n")
        write_descriptor_file(
            tmp_path / "points3D.txt.desc", np.zeros((3, 4), np.float32)
        )
        with pytest.raises(FileFormatError):
            ingest_colmap_points(path)
