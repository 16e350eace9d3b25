"""Simulated-line benchmarks for the shift estimators.

Line pairs are cut from a Matern 3/2 texture: line A is a row, line B the
next row resampled with cubic interpolation at a known sub-pixel shift,
and both get additive sensor noise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg, ndimage

from .shift_model import (
    EXPONENTIATED_QUADRATIC,
    MATERN_3_2,
    build_joint_covariance,
    _JITTER,
    ShiftPrior,
    _cholesky,
    _minimize,
    _PatchObjective,
    _standardize_pair,
    calibrate_kernel,
    estimate_shift_correlation,
    estimate_shift_pair,
    window_correlation_shift,
)
from .synth import generate_texture, gp_sample

SWEEP_WIDTHS = (5, 10, 15, 20, 25, 30, 35)
SWEEP_METHODS = (MATERN_3_2, EXPONENTIATED_QUADRATIC, "correlation")
PLATEAU_TOLERANCE = 0.25


@dataclass(frozen=True, eq=False)
class LineSampler:
    """Draws shifted line pairs from a unit-variance texture."""

    texture: np.ndarray
    noise: float = 0.03
    margin: int = 8

    def __post_init__(self):
        tex = np.asarray(self.texture, dtype=float)
        tex = (tex - tex.mean()) / tex.std()
        object.__setattr__(self, "texture", tex)
        object.__setattr__(self, "_spline", ndimage.spline_filter(tex, order=3))

    @classmethod
    def gp(cls, size=1024, length_scale=4.0, seed=0, noise=0.03):
        return cls(gp_sample(size, length_scale, np.random.default_rng(seed)), noise)

    @classmethod
    def from_texture(cls, kind="gp_sample", size=1024, length_scale=4.0, seed=0, noise=0.03):
        if kind == "gp_sample":
            return cls.gp(size, length_scale, seed, noise)
        raster = generate_texture(kind, size, seed, length_scale).raster
        return cls(raster if raster.ndim == 2 else raster.mean(axis=2), noise)

    def pairs(self, shift, n, length, rng):
        """``n`` pairs of ``length`` samples; ``B[j] = A[j + shift]`` plus noise."""
        h, w = self.texture.shape
        rows = rng.integers(0, h - 1, n)
        hi = w - length - self.margin - 3
        c0 = rng.uniform(self.margin + 3, hi, n)
        xs = c0[:, None] + np.arange(length)[None, :]
        rr = np.repeat(rows[:, None], length, axis=1).astype(float)
        a = ndimage.map_coordinates(self._spline, [rr, xs], order=3, prefilter=False)
        b = ndimage.map_coordinates(self._spline, [rr + 1.0, xs + shift], order=3, prefilter=False)
        if self.noise > 0:
            a = a + rng.normal(scale=self.noise, size=a.shape)
            b = b + rng.normal(scale=self.noise, size=b.shape)
        return a, b

    def calibration_image(self, rng, lines=200):
        img = self.texture[:lines]
        return img + rng.normal(scale=self.noise, size=img.shape) if self.noise > 0 else img


@dataclass(frozen=True)
class RecoveryResult:
    bayes_errors: np.ndarray
    correlation_errors: np.ndarray
    runtime_s: float

    @property
    def bayes_median(self):
        return float(np.median(self.bayes_errors))

    @property
    def correlation_median(self):
        return float(np.median(self.correlation_errors))


def shift_recovery_benchmark(n_shifts=10, n_pairs=100, line_length=256, patch_len=16, noise=0.03,
                             length_scale=4.0, seed=0, kind=MATERN_3_2):
    """Bayesian vs correlation absolute ``dx`` errors on simulated line pairs.

    Shifts are uniform in ``[-2, 2]``; the kernel is calibrated on noisy
    texture rows; the correlation window equals ``patch_len``.
    """
    rng = np.random.default_rng(seed)
    sampler = LineSampler.gp(length_scale=length_scale, seed=seed, noise=noise)
    start = time.perf_counter()
    params = calibrate_kernel(sampler.calibration_image(rng), kind, fit_noise=True)
    prior = ShiftPrior()
    eb, ec = [], []
    for _ in range(n_shifts):
        s = rng.uniform(-2.0, 2.0)
        a, b = sampler.pairs(s, n_pairs, line_length, rng)
        for la, lb in zip(a, b):
            eb.append(abs(estimate_shift_pair(la, lb, params, prior, patch_len).dx - s))
            ec.append(abs(estimate_shift_correlation(la, lb, window=patch_len).dx - s))
    return RecoveryResult(np.array(eb), np.array(ec), time.perf_counter() - start)


def _bayes_patches(a, b, params, prior):
    """MAP ``dx`` treating each row of ``a``/``b`` as one independent patch."""
    std = _standardize_pair(a.ravel(), b.ravel())
    sa, sb = (x.reshape(a.shape) for x in std)
    objective = _PatchObjective(np.concatenate([sa, sb], axis=1), params, prior)
    return _minimize(objective, (-2.0, -1.0, 0.0, 1.0, 2.0), 0.5, 1e-6, 100).dx


_GRID_DX = np.linspace(-3.0, 3.0, 31)
_GRID_DY = np.linspace(0.0, 2.0, 5)


def _bayes_per_patch(a, b, params, prior):
    """MAP ``dx`` of every patch pair (row of ``a``/``b``) on its own.

    All patches share the covariance at a given ``(dx, dy)``, so the
    posterior is first scored on a grid for all patches at once; each
    patch is then polished with L-BFGS-B from its best grid node.
    """
    p = a.shape[1]
    z = []
    for x, y in zip(a, b):
        std = _standardize_pair(x, y)
        z.append(np.concatenate(std) if std is not None else np.zeros(2 * p))
    z = np.asarray(z)
    best = np.full(len(z), np.inf)
    arg = np.zeros((len(z), 2))
    for dy in _GRID_DY:
        for dx in _GRID_DX:
            sigma = build_joint_covariance(params, p, dx, dy)
            c = _cholesky(sigma, params.variance, _JITTER)
            w = linalg.solve_triangular(c, z.T, lower=True, check_finite=False)
            val = np.sum(np.log(np.diag(c))) + 0.5 * np.sum(w * w, axis=0) + prior.neg_log(dx, dy)[0]
            better = val < best
            best[better] = val[better]
            arg[better] = dx, dy
    out = np.empty(len(z))
    for i, (row, (dx0, dy0)) in enumerate(zip(z, arg)):
        out[i] = _minimize(_PatchObjective(row[None, :], params, prior), (dx0,), dy0, 1e-6, 100).dx
    return out


def _correlation_patches(a, b, max_shift=3):
    vals = [window_correlation_shift(x, y, max_shift) for x, y in zip(a, b)]
    vals = [v for v in vals if v is not None]
    return float(np.median(vals)) if vals else 0.0


def _correlation_per_patch(a, b, max_shift=3):
    """Per-patch correlation estimates; a patch without a defined peak reports 0."""
    vals = [window_correlation_shift(x, y, max_shift) for x, y in zip(a, b)]
    return np.array([0.0 if v is None else v for v in vals])


@dataclass(frozen=True)
class SweepRow:
    width: int
    method: str
    median_abs_error: float
    mean_abs_error: float
    n_trials: int


def patch_width_sweep(widths=SWEEP_WIDTHS, methods=SWEEP_METHODS, n_trials=100, n_patches=100, noise=0.03,
                      length_scale=4.0, seed=0, mode="per_patch", texture_kind="gp_sample"):
    """Median absolute ``dx`` error against patch width.

    Each trial draws one shift in ``[-2, 2]`` and ``n_patches`` independent
    patch pairs of the given width. With ``mode="per_patch"`` every patch is
    estimated on its own and contributes one absolute error, so each width
    pools ``n_trials * n_patches`` errors. With ``mode="pooled"`` the
    Bayesian estimators combine all patches of a trial in one posterior and
    correlation takes the median of the per-patch estimates, giving one
    error per trial. Kernels are calibrated once on noisy texture rows.
    """
    if mode not in ("per_patch", "pooled"):
        raise ValueError("mode must be 'per_patch' or 'pooled'")
    rng = np.random.default_rng(seed)
    sampler = LineSampler.from_texture(texture_kind, length_scale=length_scale, seed=seed, noise=noise)
    calib = sampler.calibration_image(rng)
    kernels = {m: calibrate_kernel(calib, m, fit_noise=True) for m in methods if m != "correlation"}
    prior = ShiftPrior()
    rows = []
    for w in widths:
        errs = {m: [] for m in methods}
        for _ in range(n_trials):
            s = rng.uniform(-2.0, 2.0)
            a, b = sampler.pairs(s, n_patches, int(w), rng)
            for m in methods:
                if mode == "pooled":
                    est = _correlation_patches(a, b) if m == "correlation" else _bayes_patches(a, b, kernels[m], prior)
                elif m == "correlation":
                    est = _correlation_per_patch(a, b)
                else:
                    est = _bayes_per_patch(a, b, kernels[m], prior)
                errs[m].append(np.abs(np.asarray(est) - s).ravel())
        for m in methods:
            e = np.concatenate(errs[m])
            rows.append(SweepRow(int(w), m, float(np.median(e)), float(np.mean(e)), n_trials))
    return rows


def curve(rows, method):
    sel = sorted((r for r in rows if r.method == method), key=lambda r: r.width)
    return np.array([r.width for r in sel]), np.array([r.median_abs_error for r in sel])


def plateau_width(widths, errors, tolerance=PLATEAU_TOLERANCE):
    """Smallest width whose error is within ``(1 + tolerance)`` of the curve minimum."""
    widths = np.asarray(widths)
    errors = np.asarray(errors, dtype=float)
    ok = errors <= (1.0 + tolerance) * errors.min()
    return int(widths[np.argmax(ok)])


def non_increasing_until(widths, errors, stop):
    """True if the curve never rises between consecutive widths up to ``stop``."""
    widths = np.asarray(widths)
    e = np.asarray(errors, dtype=float)[widths <= stop]
    return bool(np.all(np.diff(e) <= 0))


def format_sweep(rows):
    methods = list(dict.fromkeys(r.method for r in rows))
    widths = sorted({r.width for r in rows})
    table = {(r.width, r.method): r for r in rows}
    out = ["width," + ",".join(f"{m}_median_px" for m in methods)]
    for w in widths:
        out.append(f"{w}," + ",".join(f"{table[(w, m)].median_abs_error:.5f}" for m in methods))
    return "\n".join(out) + "\n"
