import numpy as np
import pytest
from hypothesis import given, strategies as st

from pushbroom_calib import DegeneracyError, FilterFailureError
from pushbroom_calib.features import TiePointSet
from pushbroom_calib.filter import (
    Homography,
    HomographyRANSAC,
    dlt_homography,
    ransac_filter,
    ransac_homography,
    symmetric_transfer_distance,
)

H_TRUE = np.array([[1.1, 0.05, 30.0], [-0.04, 0.9, -20.0], [1e-4, -5e-5, 1.0]])


def _planted(n, fraction, rng, noise=0.0, extent=2000.0):
    k = int(round(fraction * n))
    p2 = rng.uniform(0, extent, (n, 2))
    p1 = Homography(H_TRUE).apply(p2) + rng.normal(scale=noise, size=(n, 2)) * (noise > 0)
    p1[k:] = rng.uniform(0, extent, (n - k, 2))
    truth = np.zeros(n, dtype=bool)
    truth[:k] = True
    return TiePointSet(p1, p2, np.zeros(n)), truth


SQUARE = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 80.0], [0.0, 80.0]])


def test_identity_from_four_points():
    h = dlt_homography(SQUARE, SQUARE)
    np.testing.assert_allclose(h.matrix, np.eye(3), atol=1e-12)


def test_recovers_known_projective_map():
    pts = np.array([[10.0, 20.0], [400.0, 35.0], [380.0, 300.0], [25.0, 290.0]])
    h = dlt_homography(Homography(H_TRUE).apply(pts), pts)
    np.testing.assert_allclose(h.matrix, H_TRUE, rtol=1e-8, atol=1e-12 * np.abs(H_TRUE).max())


def test_least_squares_with_many_points():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1000, (50, 2))
    h = dlt_homography(Homography(H_TRUE).apply(pts), pts)
    np.testing.assert_allclose(h.matrix, H_TRUE, rtol=1e-8, atol=1e-12)


def test_collinear_points_are_degenerate():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 1.0]])
    with pytest.raises(DegeneracyError):
        dlt_homography(pts, pts)


def test_fewer_than_four_points_rejected():
    with pytest.raises(DegeneracyError):
        dlt_homography(SQUARE[:3], SQUARE[:3])


def test_homography_is_scale_normalized():
    h = Homography(3.0 * H_TRUE)
    assert h.matrix[2, 2] == 1.0
    with pytest.raises(DegeneracyError):
        Homography(np.diag([1.0, 1.0, 0.0]))


def test_inverse_round_trip():
    h = Homography(H_TRUE)
    pts = np.array([[5.0, 7.0], [700.0, 20.0]])
    np.testing.assert_allclose(h.inverse().apply(h.apply(pts)), pts, atol=1e-9)


def test_symmetric_distance_zero_on_exact_matches():
    pts = np.random.default_rng(1).uniform(0, 500, (10, 2))
    d = symmetric_transfer_distance(H_TRUE, Homography(H_TRUE).apply(pts), pts)
    np.testing.assert_allclose(d, 0.0, atol=1e-9)


# ---------------------------------------------------------------- RANSAC


def test_consistent_matches_all_inliers():
    ties, _ = _planted(100, 1.0, np.random.default_rng(2))
    assert ransac_filter(ties).inlier_flags.all()


def test_planted_inliers_recovered():
    ties, truth = _planted(500, 0.7, np.random.default_rng(3))
    flags = ransac_filter(ties, seed=1).inlier_flags
    tp = np.sum(flags & truth)
    assert tp / flags.sum() >= 0.99
    assert tp / truth.sum() >= 0.99


def test_three_matches_fail():
    ties = TiePointSet(SQUARE[:3], SQUARE[:3], np.zeros(3))
    with pytest.raises(FilterFailureError):
        ransac_filter(ties)


def test_no_consensus_fails():
    # every 4-point sample is collinear, so no model can be formed
    x = np.arange(10.0)
    pts = np.column_stack([x, 2 * x])
    with pytest.raises(FilterFailureError):
        ransac_filter(TiePointSet(pts, pts[::-1], np.zeros(10)), threshold=1.0, max_iters=50)


@given(seed=st.integers(0, 10_000), fraction=st.sampled_from([0.3, 0.5, 0.8]))
def test_filter_is_idempotent(seed, fraction):
    ties, _ = _planted(200, fraction, np.random.default_rng(seed), noise=2.0)
    flagged = ransac_filter(ties, max_iters=5000, seed=seed)
    again = ransac_filter(flagged.inliers(), max_iters=5000, seed=seed)
    assert again.inlier_flags.all()


@given(seed=st.integers(0, 10_000), fraction=st.sampled_from([0.3, 0.5, 0.8]))
def test_swap_invariance(seed, fraction):
    ties, _ = _planted(200, fraction, np.random.default_rng(seed), noise=2.0)
    a = ransac_filter(ties, max_iters=5000, seed=seed).inlier_flags
    b = ransac_filter(ties.swapped(), max_iters=5000, seed=seed).inlier_flags
    np.testing.assert_array_equal(a, b)


def test_seeded_runs_are_deterministic():
    ties, _ = _planted(300, 0.4, np.random.default_rng(4), noise=3.0)
    a = ransac_filter(ties, seed=9).inlier_flags
    b = ransac_filter(ties, seed=9).inlier_flags
    np.testing.assert_array_equal(a, b)


def test_ransac_homography_returns_model():
    ties, _ = _planted(200, 0.6, np.random.default_rng(5))
    flags, h = ransac_homography(ties, seed=0)
    pts = np.array([[100.0, 100.0], [1500.0, 900.0]])
    np.testing.assert_allclose(h.apply(pts), Homography(H_TRUE).apply(pts), atol=1e-6)
    assert flags.sum() >= 120


def test_estimator_api():
    ties, truth = _planted(200, 0.6, np.random.default_rng(6))
    est = HomographyRANSAC(seed=3)
    out = est.fit_transform(ties)
    np.testing.assert_array_equal(out.inlier_flags, est.inlier_mask_)
    assert np.sum(est.inlier_mask_ & truth) == truth.sum()
    assert est.get_params()["threshold"] == 60.0
