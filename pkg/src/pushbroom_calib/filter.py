"""Outlier rejection for tie points with a homography model and RANSAC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DegeneracyError, FilterFailureError
from .features import TiePointSet
from .validation import check_int, check_points

DEFAULT_THRESHOLD = 60.0


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map ``pt1 ~ H pt2``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise ValueError("homography must be finite")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        if np.linalg.matrix_rank(m) < 3:
            raise DegeneracyError("homography is rank deficient")
        object.__setattr__(self, "matrix", m)

    def apply(self, pts):
        return _transfer(self.matrix, np.asarray(pts, dtype=float))

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))


def _transfer(h, pts):
    hom = pts @ h[:, :2].T + h[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hom[:, :2] / hom[:, 2:3]
    return np.where(np.isfinite(out), out, np.inf)


def _normalizer(pts):
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _has_collinear_triple(pts, tol=1e-9):
    n = len(pts)
    scale = max(np.ptp(pts, axis=0).max(), 1e-12)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a = pts[j] - pts[i]
                b = pts[k] - pts[i]
                if abs(a[0] * b[1] - a[1] * b[0]) <= tol * scale * scale:
                    return True
    return False


def _dlt_matrix(src, dst):
    n = src.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    a[0::2, 0:3] = np.column_stack([-x, -y, -np.ones(n)])
    a[0::2, 6:9] = np.column_stack([u * x, u * y, u])
    a[1::2, 3:6] = np.column_stack([-x, -y, -np.ones(n)])
    a[1::2, 6:9] = np.column_stack([v * x, v * y, v])
    return a


def dlt_homography(pt1, pt2):
    """Homography with ``pt1 ~ H pt2`` from >= 4 correspondences.

    Hartley-normalized direct linear transform: the smallest right singular
    vector of the stacked ``2n x 9`` system, denormalized.
    """
    p1 = check_points(pt1, "pt1")
    p2 = check_points(pt2, "pt2")
    if p1.shape != p2.shape or p1.shape[0] < 4:
        raise DegeneracyError("at least 4 matching correspondences are required")
    if p1.shape[0] == 4 and (_has_collinear_triple(p2) or _has_collinear_triple(p1)):
        raise DegeneracyError("three of the four points are collinear")
    t1 = _normalizer(p1)
    t2 = _normalizer(p2)
    n1 = p1 @ t1[:2, :2].T + t1[:2, 2]
    n2 = p2 @ t2[:2, :2].T + t2[:2, 2]
    _, s, vt = np.linalg.svd(_dlt_matrix(n2, n1))
    if s[7] <= 1e-10 * s[0]:
        raise DegeneracyError("correspondences do not determine a homography")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t1) @ hn @ t2
    return Homography(h)


def symmetric_transfer_distance(h, pt1, pt2):
    """``max(|pt1 - H pt2|, |pt2 - H^-1 pt1|)`` per match."""
    fwd = np.linalg.norm(pt1 - _transfer(h, pt2), axis=1)
    try:
        hinv = np.linalg.inv(h)
    except np.linalg.LinAlgError:
        return np.full(pt1.shape[0], np.inf)
    bwd = np.linalg.norm(pt2 - _transfer(hinv, pt1), axis=1)
    return np.maximum(fwd, bwd)


def _required_iterations(inlier_ratio, confidence, sample=4):
    if inlier_ratio <= 0:
        return np.inf
    good = inlier_ratio**sample
    if good >= 1:
        return 0
    return np.log(1 - confidence) / np.log(1 - good)


def ransac_filter(ties, threshold=DEFAULT_THRESHOLD, confidence=0.999, max_iters=2000, seed=0):
    """Flag tie points consistent with one homography.

    Four-point minimal samples are drawn from ``numpy.random.default_rng(seed)``;
    the iteration count adapts to the best inlier ratio seen. The consensus
    set of the best model is then refined by re-fitting until it is
    self-consistent.
    Only the flags are meant for downstream use; :func:`ransac_homography`
    also returns the model re-fit on all inliers.
    """
    flags, _ = ransac_homography(ties, threshold, confidence, max_iters, seed)
    return ties.with_flags(flags)


def ransac_homography(ties, threshold=DEFAULT_THRESHOLD, confidence=0.999, max_iters=2000, seed=0):
    """As :func:`ransac_filter`, returning ``(flags, homography)``."""
    n = len(ties)
    if n < 4:
        raise FilterFailureError(f"need at least 4 matches, got {n}")
    max_iters = check_int(max_iters, "max_iters", minimum=1)
    p1, p2 = ties.pt1, ties.pt2
    everything = np.ones(n, dtype=bool)
    dist = _refit_distance(p1, p2, everything)
    if dist is not None and np.all(dist <= threshold):
        return everything, dlt_homography(p1, p2)
    rng = np.random.default_rng(seed)
    best_count, best_flags = 0, None
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = dlt_homography(p1[idx], p2[idx]).matrix
        except DegeneracyError:
            continue
        flags = symmetric_transfer_distance(h, p1, p2) <= threshold
        count = int(flags.sum())
        if count > best_count:
            best_count, best_flags = count, flags
            needed = _required_iterations(count / n, confidence)
    if best_flags is None or best_count < 4:
        raise FilterFailureError("no homography supported by at least 4 matches")
    flags = _consensus_fixpoint(p1, p2, best_flags, threshold)
    try:
        h = dlt_homography(p1[flags], p2[flags])
    except DegeneracyError:
        h = None
    return flags, h


def _consensus_fixpoint(p1, p2, flags, threshold, max_rounds=50):
    """Iterate ``flags <- {distance under the refit on flags <= threshold}``.

    At a fixed point, re-running the filter on the flagged subset reproduces
    the same refit and therefore flags everything.
    """
    for _ in range(max_rounds):
        dist = _refit_distance(p1, p2, flags)
        if dist is None:
            break
        new = dist <= threshold
        if new.sum() < 4 or np.array_equal(new, flags):
            break
        flags = new
    return flags


def _refit_distance(p1, p2, flags):
    """Transfer distance under refits in both directions (whichever is closer).

    Fitting ``pt1 ~ H pt2`` and ``pt2 ~ G pt1`` and keeping the smaller
    distance makes the decision identical when the chunk roles are swapped.
    """
    try:
        h12 = dlt_homography(p1[flags], p2[flags]).matrix
        h21 = dlt_homography(p2[flags], p1[flags]).matrix
    except DegeneracyError:
        return None
    return np.minimum(
        symmetric_transfer_distance(h12, p1, p2),
        symmetric_transfer_distance(np.linalg.inv(h21), p1, p2),
    )


class HomographyRANSAC(BaseEstimator):
    """Estimator wrapper: ``fit(ties)`` sets ``inlier_mask_`` and ``homography_``."""

    def __init__(self, threshold=DEFAULT_THRESHOLD, confidence=0.999, max_iters=2000, seed=0):
        self.threshold = threshold
        self.confidence = confidence
        self.max_iters = max_iters
        self.seed = seed

    def fit(self, ties, y=None):
        self.inlier_mask_, self.homography_ = ransac_homography(
            ties, self.threshold, self.confidence, self.max_iters, self.seed
        )
        return self

    def transform(self, ties):
        return ties.with_flags(self.inlier_mask_)

    def fit_transform(self, ties, y=None):
        return self.fit(ties).transform(ties)
