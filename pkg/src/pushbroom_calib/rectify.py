"""Horizontal line rectification from per-pair shift estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from sklearn.base import BaseEstimator, TransformerMixin

from .core.types import HyperCube
from .shift_model import (
    KernelParams,
    ShiftPrior,
    ShiftSeries,
    calibrate_kernel,
    estimate_correlation_series,
    estimate_shift_series,
)
from .validation import as_cube, check_int

DEFAULT_DETREND_WINDOW = 201


@dataclass(frozen=True, eq=False)
class RectificationMap:
    """Cumulative cross-track displacement of every line relative to line 0."""

    per_line_offset: np.ndarray
    detrend_window: int = 0

    def __post_init__(self):
        off = np.asarray(self.per_line_offset, dtype=float).reshape(-1)
        if off.size == 0 or off[0] != 0.0:
            raise ValueError("offset of line 0 must be exactly 0")
        if not np.all(np.isfinite(off)):
            raise ValueError("offsets must be finite")
        object.__setattr__(self, "per_line_offset", off)

    def __len__(self):
        return self.per_line_offset.size

    @classmethod
    def identity(cls, lines):
        return cls(np.zeros(lines))


def accumulate_shifts(series, detrend_window=DEFAULT_DETREND_WINDOW):
    """Integrate pairwise ``dx`` into per-line offsets.

    With ``detrend_window > 0`` a centred moving average of that many lines is
    removed so only high-frequency displacement is corrected; low-frequency
    drift stays in the image.
    """
    dx = series.dx if isinstance(series, ShiftSeries) else np.asarray(series, dtype=float)
    if dx.size == 0:
        raise ValueError("shift series is empty")
    detrend_window = check_int(detrend_window, "detrend_window", minimum=0)
    offset = np.concatenate([[0.0], np.cumsum(dx)])
    if detrend_window > 1:
        offset = offset - uniform_filter1d(offset, size=detrend_window, mode="nearest")
        offset = offset - offset[0]
    return RectificationMap(offset, detrend_window)


def _catmull_rom_weights(t):
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            -0.5 * t3 + t2 - 0.5 * t,
            1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t,
            0.5 * t3 - 0.5 * t2,
        ],
        axis=-1,
    )


def resample_line(values, valid, offset):
    """``out[j] = values(j - offset)`` with Catmull-Rom interpolation.

    Parameters
    ----------
    values : ndarray, shape (samples, bands)
    valid : ndarray of bool, shape (samples,)
    offset : float

    Returns
    -------
    out : ndarray, shape (samples, bands), NaN where invalid
    out_valid : ndarray of bool
    """
    n = values.shape[0]
    pos = np.arange(n) - offset
    inside = (pos >= 0) & (pos <= n - 1)
    base = np.floor(pos).astype(int)
    frac = pos - base
    if np.all(frac[inside] == 0):
        src = np.clip(base, 0, n - 1)
        out = values[src].copy()
        out_valid = inside & valid[src]
        out[~out_valid] = np.nan
        return out, out_valid
    taps = np.clip(base[:, None] + np.arange(-1, 3)[None, :], 0, n - 1)
    w = _catmull_rom_weights(frac)
    used = w != 0
    tap_valid = np.where(used, valid[taps], True).all(axis=1)
    filled = np.where(valid[:, None], values, 0.0)
    out = np.einsum("jk,jkb->jb", w, filled[taps])
    out_valid = inside & tap_valid
    out[~out_valid] = np.nan
    return out, out_valid


def apply_rectification(cube, rmap):
    """Resample each line by ``-offset[k]``; identical treatment for every band.

    Samples shifted in from outside the line are set to NaN and flagged in
    the output ``valid_mask``.
    """
    if len(rmap) != cube.lines:
        raise ValueError(f"map covers {len(rmap)} lines, cube has {cube.lines}")
    valid_in = (
        np.ones((cube.lines, cube.samples_per_line), dtype=bool)
        if cube.valid_mask is None
        else cube.valid_mask
    )
    off = rmap.per_line_offset
    if not np.any(off) and cube.valid_mask is None:
        return HyperCube(cube.data.copy(), cube.line_times, valid_in.copy())
    data = np.empty_like(cube.data)
    mask = np.empty_like(valid_in)
    for k in range(cube.lines):
        data[k], mask[k] = resample_line(cube.data[k], valid_in[k], off[k])
    return HyperCube(data, cube.line_times, mask)


class LineRectifier(BaseEstimator, TransformerMixin):
    """Estimate line shifts on a raw cube and undo them.

    ``fit`` estimates the shift series (``method="bayes"`` or
    ``"correlation"``) and stores ``shifts_`` and ``map_``; ``transform``
    resamples a cube with the fitted map.
    """

    def __init__(
        self,
        method="bayes",
        detrend_window=DEFAULT_DETREND_WINDOW,
        patch_len=16,
        kernel_kind="matern_3_2",
        calibrate=True,
        fit_noise=True,
        dx_std=0.5,
        dy_rate=1.0,
        window=20,
        max_shift=3,
        n_jobs=1,
    ):
        self.method = method
        self.detrend_window = detrend_window
        self.patch_len = patch_len
        self.kernel_kind = kernel_kind
        self.calibrate = calibrate
        self.fit_noise = fit_noise
        self.dx_std = dx_std
        self.dy_rate = dy_rate
        self.window = window
        self.max_shift = max_shift
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        cube = as_cube(X)
        if self.method == "bayes":
            if self.calibrate and cube.lines >= 100:
                self.kernel_params_ = calibrate_kernel(cube, self.kernel_kind, fit_noise=self.fit_noise)
            else:
                self.kernel_params_ = KernelParams(kernel_kind=self.kernel_kind)
            self.shifts_ = estimate_shift_series(
                cube,
                self.kernel_params_,
                ShiftPrior(self.dx_std, self.dy_rate),
                self.patch_len,
                self.n_jobs,
            )
        elif self.method == "correlation":
            self.shifts_ = estimate_correlation_series(cube, self.window, self.max_shift)
        else:
            raise ValueError("method must be 'bayes' or 'correlation'")
        self.map_ = accumulate_shifts(self.shifts_, self.detrend_window)
        return self

    def transform(self, X):
        if not hasattr(self, "map_"):
            raise AttributeError("rectifier is not fitted; call fit first")
        return apply_rectification(as_cube(X), self.map_)
