"""Per-line-pair horizontal/vertical shift estimation.

Two consecutive push-broom lines are modelled as jointly Gaussian samples of
one stationary random field. Line B is line A displaced by ``(dx, dy)``
pixels, so their joint covariance depends on the shift and the shift is
recovered as the maximum a posteriori point under weak priors.

Convention: ``B[j] ~ A[j + dx]``. A positive ``dx`` means image content moved
toward lower sample indices from line A to line B.

A normalized cross-correlation estimator is provided as the baseline.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.linalg import lapack
from sklearn.base import BaseEstimator

from .core.types import HyperCube
from .exceptions import DegenerateInputError, NumericalError
from .validation import as_image, check_int, check_line_pair, check_positive

MATERN_3_2 = "matern_3_2"
EXPONENTIATED_QUADRATIC = "exponentiated_quadratic"
KERNEL_KINDS = (MATERN_3_2, EXPONENTIATED_QUADRATIC)

_SQRT3 = np.sqrt(3.0)
_JITTER = 1e-8
_MAX_JITTER = 1e-4
_FLAT_PATCH_VARIANCE = 1e-3
_DEFAULT_STARTS = (-2.0, -1.0, 0.0, 1.0, 2.0)


@dataclass(frozen=True)
class KernelParams:
    """Stationary covariance kernel.

    Parameters
    ----------
    variance : float
        Total pixel variance ``sigma^2``.
    length_scale : float
        Correlation length ``l`` in pixels.
    kernel_kind : str
        ``"matern_3_2"`` or ``"exponentiated_quadratic"``.
    noise_variance : float
        Optional white-noise share of ``variance`` (sensor noise). It enters
        only the same-pixel diagonal; the correlated amplitude is
        ``variance - noise_variance``. Zero by default.
    """

    variance: float = 1.0
    length_scale: float = 4.0
    kernel_kind: str = MATERN_3_2
    noise_variance: float = 0.0

    def __post_init__(self):
        check_positive(self.variance, "variance")
        check_positive(self.length_scale, "length_scale")
        check_positive(self.noise_variance, "noise_variance", strict=False)
        if self.kernel_kind not in KERNEL_KINDS:
            raise ValueError(f"kernel_kind must be one of {KERNEL_KINDS}")
        if self.noise_variance >= self.variance:
            raise ValueError("noise_variance must be smaller than variance")

    @property
    def signal_variance(self):
        return self.variance - self.noise_variance


@dataclass(frozen=True)
class ShiftPrior:
    """Priors ``dx ~ N(0, dx_std^2)`` and ``dy ~ Exp(dy_rate)``."""

    dx_std: float = 0.5
    dy_rate: float = 1.0

    def __post_init__(self):
        check_positive(self.dx_std, "dx_std")
        check_positive(self.dy_rate, "dy_rate")

    @property
    def dy_mean(self):
        return 1.0 / self.dy_rate

    def neg_log(self, dx, dy):
        """Negative log prior (constants dropped) and its gradient."""
        inv_var = 1.0 / self.dx_std**2
        value = 0.5 * dx * dx * inv_var + self.dy_rate * dy
        return value, np.array([dx * inv_var, self.dy_rate])


@dataclass(frozen=True)
class ShiftEstimate:
    dx: float
    dy: float
    neg_log_posterior: float
    converged: bool
    n_patches: int

    def __post_init__(self):
        if self.dy < 0:
            raise ValueError("dy must be non-negative")


@dataclass(frozen=True)
class ShiftSeries:
    """One estimate per consecutive line pair of a cube."""

    estimates: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "estimates", tuple(self.estimates))

    def __len__(self):
        return len(self.estimates)

    def __iter__(self):
        return iter(self.estimates)

    def __getitem__(self, i):
        return self.estimates[i]

    @property
    def dx(self):
        return np.array([e.dx for e in self.estimates], dtype=float)

    @property
    def dy(self):
        return np.array([e.dy for e in self.estimates], dtype=float)

    @property
    def converged(self):
        return np.array([e.converged for e in self.estimates], dtype=bool)

    @classmethod
    def from_arrays(cls, dx, dy=None):
        """Series of exact (ground-truth style) estimates."""
        dx = np.asarray(dx, dtype=float)
        dy = np.zeros_like(dx) if dy is None else np.asarray(dy, dtype=float)
        return cls(
            ShiftEstimate(float(a), float(max(b, 0.0)), 0.0, True, 0) for a, b in zip(dx, dy)
        )

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["line_index", "dx_px", "dy_px", "neg_log_posterior", "converged", "n_patches"])
            for i, e in enumerate(self.estimates):
                values = (repr(float(v)) for v in (e.dx, e.dy, e.neg_log_posterior))
                w.writerow([i, *values, int(e.converged), e.n_patches])

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        rows.sort(key=lambda r: int(r["line_index"]))
        return cls(
            ShiftEstimate(
                float(r["dx_px"]),
                float(r["dy_px"]),
                float(r["neg_log_posterior"]),
                bool(int(r["converged"])),
                int(r["n_patches"]),
            )
            for r in rows
        )


# ---------------------------------------------------------------- kernels


def _kernel(params, u, dy):
    """Correlated kernel value and partials w.r.t. ``u`` (= d + dx) and ``dy``."""
    a = params.signal_variance
    l = params.length_scale
    rho = np.sqrt(u * u + dy * dy)
    if params.kernel_kind == MATERN_3_2:
        e = np.exp(-_SQRT3 * rho / l)
        k = a * (1.0 + _SQRT3 * rho / l) * e
        c = -3.0 * a / (l * l) * e
    else:
        k = a * np.exp(-0.5 * (rho / l) ** 2)
        c = -k / (l * l)
    return k, c * u, c * dy


def kernel_correlation(params, d):
    """Same-row correlation at lag ``d`` (includes the nugget at ``d = 0``)."""
    k, _, _ = _kernel(params, np.asarray(d, dtype=float), 0.0)
    return (k + params.noise_variance * (np.asarray(d) == 0)) / params.variance


def covariance_entry(params, d, dx=0.0, dy=0.0):
    """Covariance of two pixels ``d`` samples apart on lines shifted by ``(dx, dy)``.

    The white-noise nugget applies only when the two pixels coincide
    (``d + dx == 0`` and ``dy == 0``).
    """
    u = np.asarray(d, dtype=float) + dx
    k, _, _ = _kernel(params, u, float(dy))
    same = (u == 0) & (float(dy) == 0.0)
    out = k + params.noise_variance * same
    return float(out) if np.ndim(out) == 0 else out


def _lag_matrix(p):
    idx = np.arange(p, dtype=float)
    return idx[None, :] - idx[:, None]


def build_joint_covariance(params, patch_len, dx, dy, jitter=_JITTER):
    """Covariance of the stacked vector ``[A patch; B patch]`` (``2p x 2p``).

    Within-row blocks use the unshifted kernel, the cross block uses the
    shifted one. ``jitter * variance`` plus the nugget is added to the
    diagonal.
    """
    p = check_int(patch_len, "patch_len", minimum=2)
    lags = _lag_matrix(p)
    kaa, _, _ = _kernel(params, lags, 0.0)
    kab, _, _ = _kernel(params, lags + dx, dy)
    return _assemble(kaa, kab, params, jitter)


def _assemble(kaa, kab, params, jitter):
    p = kaa.shape[0]
    sigma = np.empty((2 * p, 2 * p))
    sigma[:p, :p] = kaa
    sigma[p:, p:] = kaa
    sigma[:p, p:] = kab
    sigma[p:, :p] = kab.T
    sigma.flat[:: 2 * p + 1] += params.noise_variance + jitter * params.variance
    return sigma


def _cholesky(sigma, variance, jitter):
    """Lower Cholesky factor, escalating the diagonal jitter on failure."""
    extra = 0.0
    while True:
        c, info = lapack.dpotrf(sigma if extra == 0.0 else sigma + extra * np.eye(len(sigma)), lower=1)
        if info == 0:
            return c
        jitter *= 10.0
        if jitter > _MAX_JITTER * (1 + 1e-9):
            raise NumericalError("joint covariance is not positive definite")
        extra = (jitter - _JITTER) * variance


class _PatchObjective:
    """Negative log posterior over ``n`` independent patches of length ``p``."""

    def __init__(self, patches, params, prior):
        patches = np.atleast_2d(np.asarray(patches, dtype=float))
        self.n = patches.shape[0]
        self.p = patches.shape[1] // 2
        self.scatter = patches.T @ patches
        self.params = params
        self.prior = prior
        self.lags = _lag_matrix(self.p)
        self.kaa, _, _ = _kernel(params, self.lags, 0.0)

    def __call__(self, theta):
        dx, dy = float(theta[0]), float(theta[1])
        p, n = self.p, self.n
        kab, gx, gy = _kernel(self.params, self.lags + dx, dy)
        sigma = _assemble(self.kaa, kab, self.params, _JITTER)
        c = _cholesky(sigma, self.params.variance, _JITTER)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        inv, info = lapack.dpotri(c, lower=1)
        if info != 0:
            raise NumericalError("covariance inversion failed")
        inv = np.tril(inv)
        inv = inv + np.tril(inv, -1).T
        inv_s = inv @ self.scatter
        value = 0.5 * n * logdet + 0.5 * np.trace(inv_s)
        # dF/dSigma = (n inv - inv S inv) / 2; the cross block appears twice.
        w = n * inv - inv_s @ inv
        grad = np.array([np.sum(w[:p, p:] * gx), np.sum(w[:p, p:] * gy)])
        pv, pg = self.prior.neg_log(dx, dy)
        return value + pv, grad + pg


def neg_log_posterior(patches, params, prior, dx, dy):
    """Objective and gradient ``(d/d dx, d/d dy)`` up to an additive constant.

    Parameters
    ----------
    patches : ndarray, shape (2p,) or (n, 2p)
        Standardized stacked patch vectors ``[A; B]``; rows are treated as
        independent draws.
    """
    if dy < 0:
        raise ValueError("dy must be non-negative")
    return _PatchObjective(patches, params, prior)([dx, dy])


# ---------------------------------------------------------- MAP estimator


def _standardize_pair(a, b):
    joint = np.concatenate([a, b])
    finite = joint[np.isfinite(joint)]
    if finite.size == 0:
        return None
    sd = finite.std()
    if sd == 0:
        return None
    mu = finite.mean()
    return (a - mu) / sd, (b - mu) / sd


def split_patches(line_a, line_b, patch_len):
    """Non-overlapping stacked patches; flat or non-finite patches are dropped."""
    std = _standardize_pair(line_a, line_b)
    if std is None:
        return np.empty((0, 2 * patch_len))
    a, b = std
    n = a.size // patch_len
    pa = a[: n * patch_len].reshape(n, patch_len)
    pb = b[: n * patch_len].reshape(n, patch_len)
    stacked = np.concatenate([pa, pb], axis=1)
    keep = np.all(np.isfinite(stacked), axis=1)
    keep[keep] = stacked[keep].var(axis=1) >= _FLAT_PATCH_VARIANCE
    return stacked[keep]


def estimate_shift_pair(
    line_a,
    line_b,
    params=None,
    prior=None,
    patch_len=16,
    starts=_DEFAULT_STARTS,
    dy_start=0.5,
    gtol=1e-6,
    maxiter=100,
):
    """MAP estimate of ``(dx, dy)`` between two lines.

    Both lines are standardized jointly, cut into non-overlapping patches,
    and the summed per-patch objective is minimized with L-BFGS-B from each
    start in ``starts`` (dy bounded below by zero). The best optimum wins.
    """
    params = KernelParams() if params is None else params
    prior = ShiftPrior() if prior is None else prior
    patch_len = check_int(patch_len, "patch_len", minimum=2)
    a, b = check_line_pair(line_a, line_b, min_length=patch_len)
    if np.array_equal(a, b):
        return ShiftEstimate(0.0, 0.0, 0.0, True, a.size // patch_len)
    patches = split_patches(a, b, patch_len)
    if patches.shape[0] == 0:
        return ShiftEstimate(0.0, prior.dy_mean, float("nan"), False, 0)
    return _minimize(_PatchObjective(patches, params, prior), starts, dy_start, gtol, maxiter)


def _minimize(objective, starts, dy_start, gtol, maxiter):
    best = None
    for x0 in starts:
        res = optimize.minimize(
            objective,
            np.array([x0, dy_start], dtype=float),
            jac=True,
            method="L-BFGS-B",
            bounds=[(None, None), (0.0, None)],
            options={"gtol": gtol, "maxiter": maxiter, "ftol": 1e-14},
        )
        if best is None or res.fun < best.fun:
            best = res
    converged = bool(best.success) or bool(np.max(np.abs(best.jac)) < gtol * 10)
    return ShiftEstimate(
        float(best.x[0]), float(max(best.x[1], 0.0)), float(best.fun), converged, objective.n
    )


def _series_worker(args):
    image, rows, params, prior, patch_len = args
    return [estimate_shift_pair(image[i], image[i + 1], params, prior, patch_len) for i in rows]


def _chunks(n, k):
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(k) if bounds[i] < bounds[i + 1]]


def estimate_shift_series(cube, params=None, prior=None, patch_len=16, n_jobs=1):
    """Estimate every consecutive line pair of ``cube`` (band mean channel).

    With ``n_jobs > 1`` pairs are split across worker processes; the output
    is identical to the sequential result.
    """
    image = as_image(cube)
    if image.shape[0] < 2:
        raise ValueError("cube must hold at least two lines")
    if isinstance(cube, HyperCube) and cube.valid_mask is not None:
        image = np.where(cube.valid_mask, image, np.nan)
    params = KernelParams() if params is None else params
    prior = ShiftPrior() if prior is None else prior
    n_pairs = image.shape[0] - 1
    n_jobs = max(1, min(int(n_jobs), n_pairs))
    if n_jobs == 1:
        out = _series_worker((image, range(n_pairs), params, prior, patch_len))
    else:
        jobs = [(image, rows, params, prior, patch_len) for rows in _chunks(n_pairs, n_jobs)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            out = [e for part in pool.map(_series_worker, jobs) for e in part]
    return ShiftSeries(out)


# ------------------------------------------------------- correlation baseline


def _parabolic_offset(y0, y1, y2):
    den = y0 - 2.0 * y1 + y2
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (y0 - y2) / den, -0.5, 0.5))


def _window_shift(a, b, i0, i1, max_shift, refine):
    """NCC peak shift of ``b[i0:i1]`` against ``a``; ``None`` for flat windows."""
    n = a.size
    wb = b[i0:i1]
    if not np.all(np.isfinite(wb)) or wb.std() < 1e-12:
        return None
    scores = np.full(2 * max_shift + 1, -np.inf)
    for k, s in enumerate(range(-max_shift, max_shift + 1)):
        j0, j1 = max(i0, -s), min(i1, n - s)
        if j1 - j0 < 3:
            continue
        wa = a[j0 + s : j1 + s]
        seg = b[j0:j1]
        if not np.all(np.isfinite(wa)):
            continue
        wa = wa - wa.mean()
        seg = seg - seg.mean()
        den = np.sqrt(np.dot(wa, wa) * np.dot(seg, seg))
        if den > 1e-12:
            scores[k] = np.dot(wa, seg) / den
    if not np.any(np.isfinite(scores)):
        return None
    k = int(np.argmax(scores))
    off = 0.0
    if refine and 0 < k < scores.size - 1 and np.all(np.isfinite(scores[k - 1 : k + 2])):
        off = _parabolic_offset(*scores[k - 1 : k + 2])
    return k - max_shift + off


def window_correlation_shift(a, b, max_shift=3, refine=True):
    """Shift of a single window pair (the whole of ``a`` and ``b``)."""
    a, b = check_line_pair(a, b, min_length=3)
    return _window_shift(a, b, 0, a.size, max_shift, refine)


def estimate_shift_correlation(line_a, line_b, window=20, max_shift=3, refine=True):
    """Baseline: median of per-window normalized cross-correlation shifts.

    Each non-overlapping window of ``line_b`` is correlated against ``line_a``
    over integer shifts in ``[-max_shift, max_shift]``; the peak is refined by
    a three-point parabola. ``dy`` is fixed to zero.
    """
    window = check_int(window, "window", minimum=5)
    max_shift = check_int(max_shift, "max_shift", minimum=1)
    a, b = check_line_pair(line_a, line_b, min_length=window)
    if np.array_equal(a, b):
        return ShiftEstimate(0.0, 0.0, 0.0, True, a.size // window)
    values = [
        v
        for i0 in range(0, a.size - window + 1, window)
        if (v := _window_shift(a, b, i0, i0 + window, max_shift, refine)) is not None
    ]
    if not values:
        return ShiftEstimate(0.0, 0.0, float("nan"), False, 0)
    return ShiftEstimate(float(np.median(values)), 0.0, float("nan"), True, len(values))


def estimate_correlation_series(cube, window=20, max_shift=3):
    image = as_image(cube)
    return ShiftSeries(
        estimate_shift_correlation(image[i], image[i + 1], window, max_shift)
        for i in range(image.shape[0] - 1)
    )


# ----------------------------------------------------- kernel calibration


def empirical_row_covariance(image, max_lag=8):
    """Mean same-row covariance at lags ``0..max_lag`` of per-line z-scores."""
    img = np.asarray(image, dtype=float)
    sd = img.std(axis=1, keepdims=True)
    usable = sd[:, 0] > 0
    if not np.any(usable):
        raise DegenerateInputError("image has zero variance")
    z = (img[usable] - img[usable].mean(axis=1, keepdims=True)) / sd[usable]
    return np.array([1.0] + [np.mean(z[:, d:] * z[:, :-d]) for d in range(1, max_lag + 1)])


def calibrate_kernel(cube, kind=MATERN_3_2, max_lag=8, fit_noise=False, bounds=(0.5, 200.0)):
    """Fit kernel hyperparameters on same-row pixel covariances.

    Intensities are standardized per line, so ``variance`` is 1. The length
    scale minimizes the squared mismatch between the kernel and the
    empirical covariance at lags ``1..max_lag``. With ``fit_noise`` the
    correlated amplitude is profiled as well and the remainder of the unit
    variance becomes ``noise_variance``.
    """
    image = as_image(cube)
    if image.shape[0] < 100:
        raise ValueError("kernel calibration needs at least 100 lines")
    emp = empirical_row_covariance(image, max_lag)[1:]
    lags = np.arange(1, max_lag + 1, dtype=float)

    def shape(l):
        k, _, _ = _kernel(KernelParams(1.0, l, kind), lags, 0.0)
        return k

    def amplitude(k):
        if not fit_noise:
            return 1.0
        return float(np.clip(np.dot(emp, k) / np.dot(k, k), 1e-3, 1.0 - 1e-6))

    def loss(log_l):
        k = shape(np.exp(log_l))
        return float(np.sum((amplitude(k) * k - emp) ** 2))

    res = optimize.minimize_scalar(loss, bounds=np.log(bounds), method="bounded", options={"xatol": 1e-6})
    l = float(np.exp(res.x))
    amp = amplitude(shape(l))
    return KernelParams(1.0, l, kind, noise_variance=max(0.0, 1.0 - amp) if fit_noise else 0.0)


# ------------------------------------------------------------- estimator


class BayesianShiftEstimator(BaseEstimator):
    """Estimator wrapper around the MAP shift model.

    ``fit`` optionally calibrates the kernel on the supplied cube;
    ``predict`` returns an ``(lines - 1, 2)`` array of ``(dx, dy)``.
    """

    def __init__(
        self,
        kernel_kind=MATERN_3_2,
        variance=1.0,
        length_scale=4.0,
        noise_variance=0.0,
        dx_std=0.5,
        dy_rate=1.0,
        patch_len=16,
        calibrate=True,
        fit_noise=False,
        n_jobs=1,
    ):
        self.kernel_kind = kernel_kind
        self.variance = variance
        self.length_scale = length_scale
        self.noise_variance = noise_variance
        self.dx_std = dx_std
        self.dy_rate = dy_rate
        self.patch_len = patch_len
        self.calibrate = calibrate
        self.fit_noise = fit_noise
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        if self.calibrate:
            self.kernel_params_ = calibrate_kernel(X, self.kernel_kind, fit_noise=self.fit_noise)
        else:
            self.kernel_params_ = KernelParams(
                self.variance, self.length_scale, self.kernel_kind, self.noise_variance
            )
        self.prior_ = ShiftPrior(self.dx_std, self.dy_rate)
        return self

    def _check_fitted(self):
        if not hasattr(self, "kernel_params_"):
            raise AttributeError("estimator is not fitted; call fit first")

    def estimate(self, X):
        self._check_fitted()
        return estimate_shift_series(X, self.kernel_params_, self.prior_, self.patch_len, self.n_jobs)

    def predict(self, X):
        series = self.estimate(X)
        return np.column_stack([series.dx, series.dy])
