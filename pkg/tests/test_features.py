"""Color conversion, Darboux angles and histogram descriptor tests.

The vectorized descriptor path is checked against a naive per-pair oracle
that reuses only the scalar angle function plus its own binning, weighting
and normalization loops.
"""

import numpy as np
import pytest
from oracles import naive_fpfh, naive_spfh

from peduncle import cloud as pc
from peduncle import features as ft
from peduncle.errors import DegeneratePair, EmptyHistogram, InvalidDescriptor


class TestHsv:
    def test_pure_red(self):
        h = ft.rgb_to_hsv(255, 0, 0)
        assert (h.h, h.s, h.v) == (0.0, 1.0, 1.0)

    def test_pure_green(self):
        h = ft.rgb_to_hsv(0, 255, 0)
        assert (h.h, h.s, h.v) == (120.0, 1.0, 1.0)

    def test_achromatic_forces_zero_hue(self):
        h = ft.rgb_to_hsv(128, 128, 128)
        assert h.h == 0.0 and h.s == 0.0 and h.v == 128 / 255

    def test_roundtrip_within_one_unit(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            r, g, b = (int(v) for v in rng.integers(0, 256, 3))
            h = ft.rgb_to_hsv(r, g, b)
            rr, gg, bb = ft.hsv_to_rgb(h.h, h.s, h.v)
            assert abs(rr - r) <= 1 and abs(gg - g) <= 1 and abs(bb - b) <= 1

    def test_array_matches_scalar(self):
        rng = np.random.default_rng(1)
        rgb = rng.integers(0, 256, (100, 3)).astype(np.uint8)
        arr = ft.rgb_to_hsv_array(rgb)
        for row, (r, g, b) in zip(arr, rgb):
            h = ft.rgb_to_hsv(int(r), int(g), int(b))
            np.testing.assert_allclose(row, [h.h, h.s, h.v], atol=1e-12)


class TestDarboux:
    def test_coplanar_equal_normals(self):
        a = ft.darboux_angles([0, 0, 0], [0, 0, 1], [1, 0, 0], [0, 0, 1])
        assert abs(a.alpha) < 1e-12 and abs(a.phi) < 1e-12 and abs(a.theta) < 1e-12

    def test_quarter_turn_theta(self):
        a = ft.darboux_angles([0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 0, 0])
        assert abs(a.alpha) < 1e-12 and abs(a.phi) < 1e-12
        assert abs(a.theta - np.pi / 2) < 1e-12

    def test_degenerate_pair_raises(self):
        with pytest.raises(DegeneratePair):
            ft.darboux_angles([0, 0, 0], [0, 0, 1], [0, 0, 0.01], [0, 1, 0])
        with pytest.raises(DegeneratePair):
            ft.darboux_angles([0, 0, 0], [0, 0, 1], [0, 0, 0], [0, 0, 1])

    def test_ranges_and_rigid_invariance(self):
        rng = np.random.default_rng(7)
        from scipy.spatial.transform import Rotation

        for _ in range(100):
            p_s = rng.normal(size=3)
            p_t = p_s + rng.normal(size=3)
            n_s = rng.normal(size=3)
            n_s /= np.linalg.norm(n_s)
            n_t = rng.normal(size=3)
            n_t /= np.linalg.norm(n_t)
            try:
                base = ft.darboux_angles(p_s, n_s, p_t, n_t)
            except DegeneratePair:
                continue
            assert -1 <= base.alpha <= 1 and -1 <= base.phi <= 1
            assert -np.pi < base.theta <= np.pi
            rot = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
            shift = rng.normal(size=3)
            moved = ft.darboux_angles(rot @ p_s + shift, rot @ n_s, rot @ p_t + shift, rot @ n_t)
            np.testing.assert_allclose(
                [moved.alpha, moved.phi, moved.theta],
                [base.alpha, base.phi, base.theta],
                atol=1e-9,
            )


class TestSpfh:
    def test_plane_grid_single_bins(self):
        g = np.stack(np.meshgrid(np.arange(5) * 0.01, np.arange(5) * 0.01), -1).reshape(-1, 2)
        points = np.column_stack([g, np.zeros(len(g))])
        normals = np.tile([0.0, 0.0, 1.0], (len(g), 1))
        center = 12
        nbrs = [j for j in range(len(g)) if j != center]
        hist = ft.spfh(points, normals, center, nbrs)
        # all angles zero: one bin per block carries the full 100
        for off in (0, 11, 22):
            block = hist[off : off + 11]
            assert block.sum() == pytest.approx(100.0)
            nz = np.flatnonzero(block)
            assert len(nz) == 1 and block[nz[0]] == pytest.approx(100.0)
        # alpha = phi = 0 falls in bin 5 of [-1, 1]; theta = 0 in bin 5 of (-pi, pi]
        assert hist[5] == pytest.approx(100.0)
        assert hist[11 + 5] == pytest.approx(100.0)
        assert hist[22 + 5] == pytest.approx(100.0)

    def test_two_theta_bins_split_50_50(self):
        # neighbor 1 lands at theta = pi/2, neighbor 2 at theta = 0
        points = np.array([[0.0, 0, 0], [0.01, 0, 0], [-0.01, 0, 0]])
        normals = np.array([[0.0, 0, 1], [1.0, 0, 0], [0.0, -1, 0]])
        hist = ft.spfh(points, normals, 0, [1, 2])
        theta = hist[22:]
        nz = np.flatnonzero(theta)
        assert len(nz) == 2
        np.testing.assert_allclose(theta[nz], [50.0, 50.0])

    def test_block_sums_100(self):
        rng = np.random.default_rng(3)
        points = rng.normal(size=(30, 3))
        normals = rng.normal(size=(30, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        hist = ft.spfh(points, normals, 0, list(range(1, 30)))
        for off in (0, 11, 22):
            assert hist[off : off + 11].sum() == pytest.approx(100.0, abs=1e-9)

    def test_matches_naive(self):
        rng = np.random.default_rng(4)
        points = rng.normal(size=(40, 3)) * 0.02
        normals = rng.normal(size=(40, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        for i in (0, 7, 39):
            nbrs = [j for j in range(40) if j != i]
            np.testing.assert_allclose(
                ft.spfh(points, normals, i, nbrs), naive_spfh(points, normals, i, nbrs), atol=1e-9
            )

    def test_empty_histogram(self):
        points = np.array([[0.0, 0, 0], [0.0, 0, 0.01]])
        normals = np.array([[0.0, 0, 1], [0.0, 0, 1]])
        with pytest.raises(EmptyHistogram):
            ft.spfh(points, normals, 0, [1])


class TestFpfh:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 0.05, (120, 3))
        cloud = pc.PointCloud(pts)
        normals, valid = pc.estimate_normals(cloud, 8, [0, 0, 1.0])
        got, got_ok = ft.fpfh(cloud, normals, 8, valid)
        want, want_ok = naive_fpfh(pts, normals, 8)
        np.testing.assert_array_equal(got_ok, want_ok & valid)
        np.testing.assert_allclose(got[got_ok], want[got_ok], atol=1e-6)

    def test_hand_expanded_three_points(self):
        points = np.array([[0.0, 0.0, 0.0], [0.02, 0.0, 0.0], [0.0, 0.03, 0.0]])
        normals = np.array([[0.0, 0, 1], [0.0, 1, 0], [1.0, 0, 0]]) / 1.0
        got, ok = ft.fpfh(points, normals, 2)
        assert ok.all()
        own = [naive_spfh(points, normals, i, [j for j in range(3) if j != i]) for i in range(3)]
        w01 = np.linalg.norm(points[0] - points[1])
        w02 = np.linalg.norm(points[0] - points[2])
        expected0 = own[0] + 0.5 * (own[1] / w01 + own[2] / w02)
        np.testing.assert_allclose(got[0], expected0, atol=1e-9)

    def test_plane_grid_same_nonzero_bins(self):
        g = np.stack(np.meshgrid(np.arange(8) * 0.01, np.arange(8) * 0.01), -1).reshape(-1, 2)
        pts = np.column_stack([g, np.zeros(len(g))])
        normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
        out, ok = ft.fpfh(pts, normals, 6)
        assert ok.all()
        # constant angles: the weighted sum keeps exactly the single-bin pattern
        for row in out:
            for off in (0, 11, 22):
                nz = np.flatnonzero(row[off : off + 11])
                assert len(nz) == 1

    def test_rigid_motion_invariance(self):
        from scipy.spatial.transform import Rotation

        rng = np.random.default_rng(6)
        pts = rng.uniform(0, 0.08, (250, 3))
        cloud = pc.PointCloud(pts)
        vp = np.array([0.0, 0.0, -0.5])
        normals, valid = pc.estimate_normals(cloud, 10, vp)
        base, base_ok = ft.fpfh(cloud, normals, 10, valid)
        for trial in range(20):
            rot = Rotation.random(random_state=trial).as_matrix()
            shift = rng.normal(scale=0.5, size=3)
            moved = pc.PointCloud(pts @ rot.T + shift)
            m_normals, m_valid = pc.estimate_normals(moved, 10, rot @ vp + shift)
            got, got_ok = ft.fpfh(moved, m_normals, 10, m_valid)
            assert np.array_equal(base_ok, got_ok)
            assert np.abs(got[got_ok] - base[base_ok]).max() <= 1e-6

    def test_duplicate_neighbors_skipped(self):
        pts = np.array([[0.0, 0, 0], [0.0, 0, 0], [0.01, 0, 0], [0.0, 0.01, 0]])
        normals = np.tile([0.0, 0.0, 1.0], (4, 1))
        out, ok = ft.fpfh(pts, normals, 3)
        assert np.isfinite(out).all()


class TestAssemble:
    def test_layout(self):
        hsv = ft.HsvColor(0.0, 1.0, 1.0)
        out = ft.assemble_feature(hsv, np.zeros(33))
        assert out.shape == (36,)
        np.testing.assert_array_equal(out[:3], [0.0, 1.0, 1.0])
        np.testing.assert_array_equal(out[3:], np.zeros(33))

    def test_length_always_36(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            hsv = ft.HsvColor(float(rng.uniform(0, 360)), float(rng.uniform()), float(rng.uniform()))
            out = ft.assemble_feature(hsv, rng.uniform(0, 100, 33))
            assert out.shape == (36,)

    def test_roundtrip_slices(self):
        hsv = ft.HsvColor(90.0, 0.25, 0.75)
        bins = np.random.default_rng(9).uniform(0, 100, 33)
        out = ft.assemble_feature(hsv, bins)
        assert out[0] == 90.0 / 360.0 and out[1] == 0.25 and out[2] == 0.75
        np.testing.assert_array_equal(out[3:], bins)

    def test_invalid_descriptor(self):
        hsv = ft.HsvColor(0.0, 0.0, 0.0)
        with pytest.raises(InvalidDescriptor):
            ft.assemble_feature(hsv, np.zeros(33), fpfh_valid=False)
        with pytest.raises(InvalidDescriptor):
            ft.assemble_feature(hsv, np.zeros(32))
        with pytest.raises(InvalidDescriptor):
            ft.assemble_feature(hsv, np.full(33, np.nan))


class TestFeatureFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(10)
        feats = rng.normal(size=(12, 36))
        labels = rng.integers(0, 4, 12)
        path = tmp_path / "f.txt"
        ft.save_features(path, feats, labels)
        got_f, got_l = ft.load_features(path)
        np.testing.assert_array_equal(got_f, feats)
        np.testing.assert_array_equal(got_l, labels)
