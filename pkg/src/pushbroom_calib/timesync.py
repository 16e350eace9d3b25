"""Camera/trajectory clock alignment from line shifts and roll motion.

Roll about the along-track axis moves consecutive lines sideways by roughly
``f * d(roll)`` pixels, so the estimated shift series is a delayed, noisy copy
of the projected roll increments. The delay is found by cross-correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.camera import pixels_per_radian
from .core.rotation import log_map
from .core.types import ALONG_TRACK_AXIS
from .shift_model import ShiftSeries
from .validation import check_int

LOW_CONFIDENCE = 0.2


@dataclass(frozen=True)
class TimeOffsetEstimate:
    """Recovered delay.

    ``offset_lines`` is the number of lines to add to the trajectory's
    ``clock_offset`` (after multiplying by the line period) for the roll
    series to line up with the shifts.
    """

    offset_lines: float
    peak_correlation: float
    integer_lag: int
    low_confidence: bool
    line_period: float = float("nan")

    @property
    def offset_seconds(self):
        return self.offset_lines * self.line_period


def roll_rate_series(traj, line_times):
    """Body-frame roll increment between consecutive line times (radians)."""
    t = np.asarray(line_times, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two line times")
    _, rot = traj.pose_arrays(t)
    rel = np.swapaxes(rot[:-1], -1, -2) @ rot[1:]
    return log_map(rel)[:, ALONG_TRACK_AXIS]


def _pearson_by_lag(a, b, search):
    """``c[L] = corr(a[t], b[t + L])`` over the overlap, for ``L`` in ``[-search, search]``."""
    n = a.size
    out = np.full(2 * search + 1, np.nan)
    for i, lag in enumerate(range(-search, search + 1)):
        lo, hi = max(0, -lag), min(n, n - lag)
        if hi - lo < 3:
            continue
        x = a[lo:hi]
        y = b[lo + lag : hi + lag]
        x = x - x.mean()
        y = y - y.mean()
        den = np.sqrt(np.dot(x, x) * np.dot(y, y))
        if den > 0:
            out[i] = np.dot(x, y) / den
    return out


def estimate_time_offset(shifts, roll_increments, cam, search=500, line_period=float("nan")):
    """Lag maximizing the correlation of projected roll and measured ``dx``.

    Both series are z-scored; the integer peak is refined by a three-point
    parabola. A peak below 0.2 sets ``low_confidence``.
    """
    dx = shifts.dx if isinstance(shifts, ShiftSeries) else np.asarray(shifts, dtype=float)
    roll = np.asarray(roll_increments, dtype=float)
    search = check_int(search, "search", minimum=1)
    if dx.size != roll.size:
        raise ValueError("shift and roll series must have equal length")
    if dx.size < 2 * search:
        raise ValueError(f"series of length {dx.size} too short for search {search}")
    expected = roll * float(pixels_per_radian(cam, 0.0))
    a = _zscore(expected)
    b = _zscore(dx)
    corr = _pearson_by_lag(a, b, search)
    if not np.any(np.isfinite(corr)):
        return TimeOffsetEstimate(0.0, 0.0, 0, True, line_period)
    k = int(np.nanargmax(corr))
    frac = 0.0
    if 0 < k < corr.size - 1 and np.all(np.isfinite(corr[k - 1 : k + 2])):
        y0, y1, y2 = corr[k - 1 : k + 2]
        den = y0 - 2.0 * y1 + y2
        if den < 0:
            frac = float(np.clip(0.5 * (y0 - y2) / den, -0.5, 0.5))
    lag = k - search
    peak = float(corr[k])
    # dx[t] ~ roll[t + delta] peaks at lag = -delta.
    return TimeOffsetEstimate(-(lag + frac), peak, lag, peak < LOW_CONFIDENCE, line_period)


def _zscore(x):
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


def synchronize(traj, line_times, shifts, cam, search=500):
    """Estimate the offset and return ``(estimate, corrected trajectory)``."""
    t = np.asarray(line_times, dtype=float)
    period = float(np.mean(np.diff(t)))
    est = estimate_time_offset(shifts, roll_rate_series(traj, t), cam, search, period)
    return est, traj.with_clock_offset(traj.clock_offset + est.offset_seconds)
