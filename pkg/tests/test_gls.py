import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tissuetrack.gls import (
    DegenerateGeometryError,
    RetestStats,
    length_curve,
    peak_gls,
    ventricular_length,
)
from tissuetrack.gls import test_retest as retest_stats
from tissuetrack.synthdata import CyclicWarp, SceneConfig


def length_oracle(points):
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        total += math.dist(a, b)
    return total


class TestVentricularLength:
    def test_collinear_points(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
        assert ventricular_length(pts) == pytest.approx(10.0)

    def test_coincident_pair_is_zero(self):
        assert ventricular_length(np.array([[2.0, 2.0], [2.0, 2.0]])) == 0.0

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            pts = rng.uniform(0, 100, (rng.integers(2, 12), 2))
            assert ventricular_length(pts) == pytest.approx(length_oracle(pts), rel=1e-12)

    def test_single_point_rejected(self):
        with pytest.raises(ValueError):
            ventricular_length(np.array([[1.0, 1.0]]))


class TestPeakGls:
    def test_constant_lengths_zero_strain(self):
        tracks = np.repeat(
            np.array([[0.0, 0.0], [0.0, 5.0], [0.0, 10.0]])[:, None, :], 6, axis=1
        )
        report = peak_gls(tracks)
        assert report.peak_gls == 0.0
        np.testing.assert_allclose(report.length_curve, 10.0)

    def test_ten_to_eight_is_minus_twenty_percent(self):
        tracks = np.zeros((2, 3, 2))
        tracks[1, :, 1] = [10.0, 8.0, 9.0]
        report = peak_gls(tracks)
        assert report.peak_gls == pytest.approx(-20.0)
        assert report.ed_frame == 0

    def test_synthetic_contraction_recovers_amplitude(self):
        cfg = SceneConfig(resolution=(64, 64), frames=16, amplitude=0.15, rotation=0.03)
        warp = CyclicWarp(cfg)
        ys = np.linspace(14, 50, 7)
        poly = np.stack([np.full_like(ys, 31.5), ys], axis=-1)
        report = peak_gls(warp.apply_all(poly))
        assert report.peak_gls == pytest.approx(-15.0, abs=0.1)

    def test_degenerate_frame_reported(self):
        tracks = np.zeros((2, 4, 2))
        tracks[1, :, 1] = [5.0, 5.0, 0.0, 5.0]  # frame 2 collapses
        with pytest.raises(DegenerateGeometryError) as info:
            peak_gls(tracks)
        assert info.value.frame == 2

    def test_ordering_subsets_points(self):
        tracks = np.zeros((3, 2, 2))
        tracks[0, :, 1] = 0.0
        tracks[1, :, 1] = 100.0  # stray point excluded by the ordering
        tracks[2, :, 1] = 10.0
        curve = length_curve(tracks, ordering=[0, 2])
        np.testing.assert_allclose(curve, 10.0)

    def test_invalid_ordering_rejected(self):
        tracks = np.zeros((3, 2, 2))
        with pytest.raises(ValueError):
            peak_gls(tracks, ordering=[0, 5])
        with pytest.raises(ValueError):
            peak_gls(tracks, ordering=[1, 1])
        with pytest.raises(ValueError):
            peak_gls(tracks, ordering=[1])

    def test_ed_frame_bounds(self):
        tracks = np.zeros((2, 3, 2))
        tracks[1, :, 1] = 5.0
        with pytest.raises(ValueError):
            peak_gls(tracks, ed_frame=3)

    def test_nonzero_ed_frame(self):
        tracks = np.zeros((2, 4, 2))
        tracks[1, :, 1] = [8.0, 10.0, 6.0, 10.0]
        report = peak_gls(tracks, ed_frame=1)
        assert report.peak_gls == pytest.approx(-40.0)

    def test_uniform_scaling_invariance(self):
        rng = np.random.default_rng(1)
        tracks = rng.uniform(0, 50, (5, 8, 2))
        a = peak_gls(tracks).peak_gls
        b = peak_gls(tracks * 7.3).peak_gls
        assert b == pytest.approx(a, rel=1e-9)

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(2)
        tracks = rng.uniform(0, 50, (5, 8, 2))
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = tracks @ rot.T + np.array([13.0, -4.5])
        a = peak_gls(tracks).peak_gls
        b = peak_gls(moved).peak_gls
        assert b == pytest.approx(a, rel=1e-9)


class TestTestRetest:
    def test_identical_pairs(self):
        stats = retest_stats([(-18.0, -18.0), (-20.5, -20.5), (-17.0, -17.0)])
        assert stats == RetestStats(mu=0.0, sigma=0.0, mad=0.0)

    def test_hand_arithmetic(self):
        stats = retest_stats([(1.0, 0.0), (0.0, 1.0)])  # differences +1, -1
        assert stats.mu == 0.0
        assert stats.sigma == pytest.approx(math.sqrt(2.0))
        assert stats.mad == 1.0

    def test_too_few_pairs_rejected(self):
        with pytest.raises(ValueError):
            retest_stats([(1.0, 1.0)])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 12))
    def test_swap_symmetry(self, seed, n):
        rng = np.random.default_rng(seed)
        pairs = rng.normal(-18, 3, (n, 2))
        fwd = retest_stats(pairs)
        rev = retest_stats(pairs[:, ::-1])
        assert rev.mu == pytest.approx(-fwd.mu, abs=1e-12)
        assert rev.sigma == pytest.approx(fwd.sigma, abs=1e-12)
        assert rev.mad == pytest.approx(fwd.mad, abs=1e-12)
        assert fwd.mad <= np.abs(pairs[:, 0] - pairs[:, 1]).max() + 1e-12
        assert fwd.sigma >= 0.0

    def test_matches_numpy_reference(self):
        rng = np.random.default_rng(3)
        pairs = rng.normal(-18, 2, (9, 2))
        stats = retest_stats(pairs)
        d = pairs[:, 0] - pairs[:, 1]
        assert stats.mu == pytest.approx(d.mean())
        assert stats.sigma == pytest.approx(d.std(ddof=1))
        assert stats.mad == pytest.approx(np.abs(d).mean())
