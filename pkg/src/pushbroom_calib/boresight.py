"""Camera-to-IMU boresight calibration from epipolar constraints.

For a tie point seen from two platform poses, the two viewing rays and the
baseline are coplanar. With the boresight ``r`` (axis-angle, camera to IMU)
applied to both camera-frame rays, the constraint reads

    < e^[r]x v1  x  R_rel e^[r]x v2 ,  t_rel / |t_rel| > = 0

where ``R_rel`` maps pose-2 body coordinates into pose 1 and ``t_rel`` is
the baseline expressed in pose 1. ``r`` is found by Gauss-Newton on the
square roots of Huber-penalized residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .core.rotation import AxisAngle, angle_deviation, chordal_mean, exp_map, log_map, right_jacobian, skew
from .exceptions import NumericalError
from .validation import check_int, check_positive

HUBER_DELTA = 0.25
KERNELS = ("l2", "huber")
_DEGENERACY_RATIO = 1e-6
# crossing lines sit near 0.1-0.3, noisy parallel lines near 0.003-0.012
WEAK_CONSTRAINT_RATIO = 0.03


@dataclass(frozen=True, eq=False)
class EpipolarPair:
    v1: np.ndarray
    v2: np.ndarray
    R_rel: np.ndarray
    t_rel: np.ndarray


@dataclass(frozen=True, eq=False)
class EpipolarPairs:
    """Stacked epipolar constraints.

    ``t_rel`` is stored as given; residuals use its unit direction.
    ``residual_scale`` converts residuals to the units the robust kernel's
    ``delta`` is expressed in (the focal length in pixels when built from
    tie points, making ``delta`` a pixel distance).
    """

    v1: np.ndarray
    v2: np.ndarray
    R_rel: np.ndarray
    t_rel: np.ndarray
    n_skipped: int = 0
    residual_scale: float = 1.0

    def __post_init__(self):
        v1 = np.asarray(self.v1, dtype=float).reshape(-1, 3)
        v2 = np.asarray(self.v2, dtype=float).reshape(-1, 3)
        rr = np.asarray(self.R_rel, dtype=float).reshape(-1, 3, 3)
        tt = np.asarray(self.t_rel, dtype=float).reshape(-1, 3)
        if not (v1.shape[0] == v2.shape[0] == rr.shape[0] == tt.shape[0]):
            raise ValueError("pair arrays differ in length")
        norms = np.linalg.norm(tt, axis=1)
        if np.any(norms <= 0):
            raise ValueError("baselines must be non-zero")
        object.__setattr__(self, "v1", v1 / np.linalg.norm(v1, axis=1, keepdims=True))
        object.__setattr__(self, "v2", v2 / np.linalg.norm(v2, axis=1, keepdims=True))
        object.__setattr__(self, "R_rel", rr)
        object.__setattr__(self, "t_rel", tt)
        object.__setattr__(self, "_t_unit", tt / norms[:, None])
        object.__setattr__(self, "residual_scale", check_positive(self.residual_scale, "residual_scale"))

    def __len__(self):
        return self.v1.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return EpipolarPair(self.v1[i], self.v2[i], self.R_rel[i], self.t_rel[i])
        return EpipolarPairs(self.v1[i], self.v2[i], self.R_rel[i], self.t_rel[i], 0, self.residual_scale)

    @property
    def t_unit(self):
        return self._t_unit

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        return cls(
            [p.v1 for p in pairs], [p.v2 for p in pairs], [p.R_rel for p in pairs], [p.t_rel for p in pairs]
        )

    def concat(self, other):
        if other.residual_scale != self.residual_scale:
            raise ValueError("cannot concatenate pairs with different residual scales")
        return EpipolarPairs(
            np.vstack([self.v1, other.v1]),
            np.vstack([self.v2, other.v2]),
            np.concatenate([self.R_rel, other.R_rel]),
            np.vstack([self.t_rel, other.t_rel]),
            self.n_skipped + other.n_skipped,
            self.residual_scale,
        )


def _as_pairs(pairs):
    if isinstance(pairs, EpipolarPairs):
        return pairs
    if isinstance(pairs, EpipolarPair):
        return EpipolarPairs.from_pairs([pairs])
    return EpipolarPairs.from_pairs(pairs)


def build_epipolar_pairs(ties, line_times_1, line_times_2, traj, cam, x_offsets_1=None, x_offsets_2=None):
    """Constraints from tie points between two chunks.

    Tie point coordinates are ``(sample, line)`` inside each chunk, possibly
    fractional. ``x_offsets_*`` hold the per-line rectification offsets of a
    chunk; rectified samples are mapped back to raw sensor samples with
    ``x_raw = x - offset(line)``. Pairs whose times fall outside the
    trajectory or whose baseline vanishes are skipped and counted.
    """
    pt1 = np.asarray(ties.pt1, dtype=float)
    pt2 = np.asarray(ties.pt2, dtype=float)
    lt1 = np.asarray(line_times_1, dtype=float)
    lt2 = np.asarray(line_times_2, dtype=float)

    def raw(pt, lt, off):
        lines = np.arange(lt.size, dtype=float)
        t = np.interp(pt[:, 1], lines, lt)
        x = pt[:, 0] if off is None else pt[:, 0] - np.interp(pt[:, 1], lines, off)
        inside = (pt[:, 1] >= 0) & (pt[:, 1] <= lt.size - 1)
        return x, t, inside

    x1, t1, in1 = raw(pt1, lt1, x_offsets_1)
    x2, t2, in2 = raw(pt2, lt2, x_offsets_2)
    ok = in1 & in2 & traj.covers(t1) & traj.covers(t2)
    c1, r1 = traj.pose_arrays(t1[ok])
    c2, r2 = traj.pose_arrays(t2[ok])
    r1t = np.swapaxes(r1, -1, -2)
    rel = r1t @ r2
    base = np.einsum("nij,nj->ni", r1t, c2 - c1)
    nonzero = np.linalg.norm(base, axis=1) > 1e-9
    skipped = int(np.sum(~ok) + np.sum(~nonzero))
    return EpipolarPairs(
        cam.rays(x1[ok][nonzero]),
        cam.rays(x2[ok][nonzero]),
        rel[nonzero],
        base[nonzero],
        skipped,
        cam.focal_length_px,
    )


def _residuals_and_jacobian(pairs, r, jacobian=True):
    rot = exp_map(r)
    a = pairs.v1 @ rot.T
    w2 = pairs.v2 @ rot.T
    b = np.einsum("nij,nj->ni", pairs.R_rel, w2)
    t = pairs.t_unit
    e = np.einsum("ni,ni->n", np.cross(a, b), t)
    if not jacobian:
        return e, None
    jr = right_jacobian(r)
    # d(R v)/dr = -R [v]x Jr
    da = -rot @ skew(pairs.v1) @ jr
    dw2 = -rot @ skew(pairs.v2) @ jr
    ga = np.cross(b, t)
    gb = np.cross(t, a)
    jac = np.einsum("ni,nij->nj", ga, da) + np.einsum("ni,nij,njk->nk", gb, pairs.R_rel, dw2)
    return e, jac


def epipolar_residual(pair, r):
    """Triple-product residual(s) for axis-angle ``r``."""
    r = r.vector if isinstance(r, AxisAngle) else np.asarray(r, dtype=float)
    pairs = _as_pairs(pair)
    e, _ = _residuals_and_jacobian(pairs, r, jacobian=False)
    return float(e[0]) if isinstance(pair, EpipolarPair) else e


def epipolar_jacobian(pairs, r):
    r = r.vector if isinstance(r, AxisAngle) else np.asarray(r, dtype=float)
    return _residuals_and_jacobian(_as_pairs(pairs), r)[1]


def huber(x, delta=HUBER_DELTA):
    """``x^2/2`` inside ``|x| <= delta``, ``delta (|x| - delta/2)`` outside."""
    delta = check_positive(delta, "delta")
    ax = np.abs(np.asarray(x, dtype=float))
    out = np.where(ax <= delta, 0.5 * ax * ax, delta * (ax - 0.5 * delta))
    return float(out) if np.ndim(out) == 0 else out


def huber_derivative(x, delta=HUBER_DELTA):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= delta, x, delta * np.sign(x))


def robust_residuals(e, jac, kernel, delta=HUBER_DELTA):
    """Gauss-Newton residuals ``sqrt(H(e))`` (or ``e``) and their Jacobian."""
    if kernel == "l2":
        return e, jac
    h = huber(e, delta)
    rho = np.sqrt(np.atleast_1d(h))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(rho > 0, huber_derivative(e, delta) / (2.0 * rho), 0.0)
    return rho, None if jac is None else jac * scale[:, None]


@dataclass(frozen=True, eq=False)
class BoresightSolution:
    boresight: AxisAngle
    iterations: int
    final_cost: float
    per_pair_residuals: np.ndarray
    converged: bool = True
    kernel: str = "huber"
    degenerate: bool = False
    singular_values: np.ndarray = field(default=None, repr=False)
    bootstrap_mean: AxisAngle | None = None
    bootstrap_std_deg: float = float("nan")
    bootstrap_solutions: np.ndarray | None = field(default=None, repr=False)
    bootstrap_failures: int = 0

    @property
    def condition_ratio(self):
        s = self.singular_values
        return float(s[-1] / s[0]) if s is not None and s[0] > 0 else 0.0

    @property
    def weakly_constrained(self):
        """Conditioning too poor to trust every axis, short of exact degeneracy."""
        return self.degenerate or self.condition_ratio < WEAK_CONSTRAINT_RATIO


def solve_boresight(pairs, kernel="huber", init=None, delta=HUBER_DELTA, max_iters=50, tol=1e-8):
    """Gauss-Newton estimate of the boresight.

    The kernel is applied to residuals multiplied by ``pairs.residual_scale``.
    Steps are halved while they increase the cost. Convergence is declared
    when the step norm drops below ``tol`` radians. The stacked Jacobian's
    singular value ratio at the solution is checked against ``1e-6`` to flag
    directions the data leave unconstrained.
    """
    if kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {KERNELS}")
    pairs = _as_pairs(pairs)
    if len(pairs) < 3:
        raise ValueError("at least 3 epipolar pairs are required")
    max_iters = check_int(max_iters, "max_iters", minimum=1)
    r = np.zeros(3) if init is None else np.array(init.vector if isinstance(init, AxisAngle) else init, float)

    def evaluate(x, jacobian=True):
        e, j = _residuals_and_jacobian(pairs, x, jacobian)
        s = pairs.residual_scale
        rho, jr = robust_residuals(s * e, None if j is None else s * j, kernel, delta)
        return e, rho, jr

    e, rho, jac = evaluate(r)
    cost = float(rho @ rho)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        step, *_ = np.linalg.lstsq(jac, -rho, rcond=None)
        if not np.all(np.isfinite(step)):
            raise NumericalError("Gauss-Newton step is not finite")
        accepted = False
        for _ in range(30):
            cand = r + step
            e_c, rho_c, _ = evaluate(cand, jacobian=False)
            cost_c = float(rho_c @ rho_c)
            if cost_c <= cost:
                accepted = True
                break
            step = 0.5 * step
        if accepted:
            r = cand
        if np.linalg.norm(step) < tol or not accepted:
            converged = accepted or np.linalg.norm(step) < tol
            e, rho, jac = evaluate(r)
            cost = float(rho @ rho)
            break
        e, rho, jac = evaluate(r)
        cost = float(rho @ rho)
    _, j_raw = _residuals_and_jacobian(pairs, r)
    sv = np.linalg.svd(j_raw, compute_uv=False)
    degenerate = bool(sv[0] == 0 or sv[-1] < _DEGENERACY_RATIO * sv[0])
    return BoresightSolution(
        AxisAngle(r), it, cost, e, converged, kernel, degenerate, sv
    )


def _bootstrap_worker(args):
    pairs, kernel, sample_size, seed_seq, init, delta = args
    rng = np.random.default_rng(seed_seq)
    idx = np.sort(rng.choice(len(pairs), size=sample_size, replace=False))
    try:
        sol = solve_boresight(pairs[idx], kernel, init, delta)
    except (NumericalError, np.linalg.LinAlgError):
        return None
    # a solve stopped by the iteration cap is still a valid estimate
    return sol.boresight.vector if np.all(np.isfinite(sol.boresight.vector)) else None


def bootstrap_boresight(pairs, kernel="huber", sample_size=500, repetitions=100, seed=0, init=None,
                        delta=HUBER_DELTA, n_jobs=1):
    """Re-solve on random subsets drawn without replacement.

    Each repetition draws from its own child of ``SeedSequence(seed)``, so
    results do not depend on scheduling. Returns ``(solutions, mean, std_deg,
    failures)`` where ``mean`` is the chordal mean rotation and ``std_deg``
    the mean angle deviation of the solutions from it, in degrees.
    """
    pairs = _as_pairs(pairs)
    sample_size = check_int(sample_size, "sample_size", minimum=3)
    repetitions = check_int(repetitions, "repetitions", minimum=1)
    if len(pairs) < sample_size:
        raise ValueError(f"{len(pairs)} pairs available, sample size {sample_size}")
    children = np.random.SeedSequence(seed).spawn(repetitions)
    jobs = [(pairs, kernel, sample_size, child, init, delta) for child in children]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_bootstrap_worker, jobs))
    else:
        results = [_bootstrap_worker(job) for job in jobs]
    sols = np.array([r for r in results if r is not None]).reshape(-1, 3)
    failures = sum(r is None for r in results)
    if sols.shape[0] == 0:
        return sols, None, float("nan"), failures
    mean_rot = chordal_mean(exp_map(sols))
    mean = AxisAngle(log_map(mean_rot))
    dev = angle_deviation(np.broadcast_to(mean.vector, sols.shape), sols)
    return sols, mean, float(np.degrees(np.mean(dev))), failures


def calibrate(pairs, kernel="huber", init=None, delta=HUBER_DELTA, sample_size=500, repetitions=100,
              seed=0, n_jobs=1):
    """Full solve plus bootstrap statistics in one solution object."""
    sol = solve_boresight(pairs, kernel, init, delta)
    pairs = _as_pairs(pairs)
    if repetitions > 0 and len(pairs) >= sample_size:
        sols, mean, std, fails = bootstrap_boresight(
            pairs, kernel, sample_size, repetitions, seed, init, delta, n_jobs
        )
        sol = BoresightSolution(
            sol.boresight, sol.iterations, sol.final_cost, sol.per_pair_residuals, sol.converged,
            sol.kernel, sol.degenerate, sol.singular_values, mean, std, sols, fails,
        )
    return sol


class BoresightCalibrator(BaseEstimator):
    """Estimator wrapper; ``fit(pairs)`` sets ``solution_`` and ``boresight_``."""

    def __init__(self, kernel="huber", delta=HUBER_DELTA, sample_size=500, repetitions=100, seed=0, n_jobs=1):
        self.kernel = kernel
        self.delta = delta
        self.sample_size = sample_size
        self.repetitions = repetitions
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, pairs, y=None):
        self.solution_ = calibrate(
            pairs, self.kernel, None, self.delta, self.sample_size, self.repetitions, self.seed, self.n_jobs
        )
        self.boresight_ = self.solution_.boresight.vector
        return self

    def predict(self, pairs):
        """Per-pair residuals at the fitted boresight."""
        if not hasattr(self, "boresight_"):
            raise AttributeError("calibrator is not fitted; call fit first")
        return epipolar_residual(_as_pairs(pairs), self.boresight_)


def format_report(solution, truth=None):
    """Structured text report for one solution."""
    r = solution.boresight
    lines = [
        "# boresight calibration report",
        "# convention: boresight rotates camera-frame vectors into the IMU/body frame",
        f"kernel = {solution.kernel}",
        f"boresight_rad = {r.vector[0]:.9f} {r.vector[1]:.9f} {r.vector[2]:.9f}",
        f"boresight_deg = {np.degrees(r.vector[0]):.6f} {np.degrees(r.vector[1]):.6f} {np.degrees(r.vector[2]):.6f}",
        f"angle_deg = {np.degrees(r.angle):.6f}",
        f"final_cost = {solution.final_cost:.9g}",
        f"iterations = {solution.iterations}",
        f"converged = {str(solution.converged).lower()}",
        f"pairs = {solution.per_pair_residuals.size}",
        f"singular_value_ratio = {solution.condition_ratio:.3e}",
        f"degenerate = {str(solution.degenerate).lower()}",
        f"weakly_constrained = {str(solution.weakly_constrained).lower()}",
    ]
    if solution.weakly_constrained:
        lines.append("warning = under-constrained: the tie points do not constrain every rotation axis")
    if not solution.converged:
        lines.append("warning = stopped at the iteration cap before the step fell below tolerance")
    if solution.bootstrap_mean is not None:
        m = solution.bootstrap_mean.vector
        lines += [
            f"bootstrap_mean_rad = {m[0]:.9f} {m[1]:.9f} {m[2]:.9f}",
            f"bootstrap_std_deg = {solution.bootstrap_std_deg:.6g}",
            f"bootstrap_repetitions = {solution.bootstrap_solutions.shape[0]}",
            f"bootstrap_failures = {solution.bootstrap_failures}",
        ]
    if truth is not None:
        err = np.degrees(angle_deviation(r.vector, truth.vector if isinstance(truth, AxisAngle) else truth))
        lines.append(f"error_vs_truth_deg = {float(err):.6f}")
    return "\n".join(lines) + "\n"
