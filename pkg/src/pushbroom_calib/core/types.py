"""Raster and trajectory containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ExtrapolationError
from .rotation import canonicalize, exp_map, log_map

#: Body-frame axis about which a roll rotation shifts lines cross-track.
ALONG_TRACK_AXIS = 1


@dataclass(frozen=True, eq=False)
class HyperCube:
    """Line-sequential raster indexed ``(line, sample, band)``.

    ``valid_mask`` (lines x samples, bool) marks samples holding real data;
    when given, masked-out samples may hold NaN sentinels.
    """

    data: np.ndarray
    line_times: np.ndarray
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError("cube data must be (lines, samples, bands)")
        times = np.asarray(self.line_times, dtype=float).reshape(-1)
        if times.shape[0] != data.shape[0]:
            raise ValueError("one line time per line required")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("line_times must be strictly increasing")
        mask = self.valid_mask
        if mask is None:
            if not np.all(np.isfinite(data)):
                raise ValueError("cube intensities must be finite")
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != data.shape[:2]:
                raise ValueError("valid_mask must be (lines, samples)")
            if not np.all(np.isfinite(data[mask])):
                raise ValueError("valid cube samples must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "line_times", times)
        object.__setattr__(self, "valid_mask", mask)

    @property
    def lines(self):
        return self.data.shape[0]

    @property
    def samples_per_line(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]

    @property
    def line_period(self):
        if self.lines < 2:
            return float("nan")
        return float(np.mean(np.diff(self.line_times)))

    def panchromatic(self):
        """Band mean, ``(lines, samples)``."""
        return self.data.mean(axis=2)

    def subset(self, start, stop):
        mask = None if self.valid_mask is None else self.valid_mask[start:stop]
        return HyperCube(self.data[start:stop], self.line_times[start:stop], mask)


@dataclass(frozen=True)
class PoseSample:
    """Platform pose: world position (m) and body-to-world axis-angle attitude."""

    time: float
    position: np.ndarray
    attitude: np.ndarray

    def rotation(self):
        return exp_map(self.attitude)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time series of poses on its own clock.

    ``clock_offset`` maps camera time to trajectory time:
    ``t_traj = t_cam + clock_offset``.
    """

    times: np.ndarray
    positions: np.ndarray
    attitudes: np.ndarray
    clock_offset: float = 0.0
    _rotations: np.ndarray = field(init=False, repr=False)
    _increments: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        att = canonicalize(np.asarray(self.attitudes, dtype=float).reshape(-1, 3))
        if not (times.size == pos.shape[0] == att.shape[0]) or times.size < 2:
            raise ValueError("trajectory needs >= 2 samples with matching arrays")
        if not np.all(np.diff(times) > 0):
            raise ValueError("trajectory times must be strictly increasing")
        rots = exp_map(att)
        inc = log_map(np.swapaxes(rots[:-1], -1, -2) @ rots[1:])
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "attitudes", att)
        object.__setattr__(self, "clock_offset", float(self.clock_offset))
        object.__setattr__(self, "_rotations", rots)
        object.__setattr__(self, "_increments", inc)

    @classmethod
    def from_samples(cls, samples, clock_offset=0.0):
        return cls(
            [s.time for s in samples],
            [s.position for s in samples],
            [s.attitude for s in samples],
            clock_offset,
        )

    @property
    def samples(self):
        return [PoseSample(t, p, a) for t, p, a in zip(self.times, self.positions, self.attitudes)]

    def __len__(self):
        return self.times.size

    def with_clock_offset(self, clock_offset):
        return Trajectory(self.times, self.positions, self.attitudes, clock_offset)

    def _locate(self, t_traj):
        t = np.asarray(t_traj, dtype=float)
        lo, hi = self.times[0], self.times[-1]
        if np.any(t < lo) or np.any(t > hi) or not np.all(np.isfinite(t)):
            bad = t[(t < lo) | (t > hi) | ~np.isfinite(t)]
            raise ExtrapolationError(
                f"time {float(bad.flat[0])!r} outside trajectory span [{float(lo)!r}, {float(hi)!r}]"
            )
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        u = (t - self.times[idx]) / (self.times[idx + 1] - self.times[idx])
        return idx, u

    def pose_arrays(self, t_cam):
        """Interpolated ``(positions, rotations)`` at camera-clock times."""
        idx, u = self._locate(np.asarray(t_cam, dtype=float) + self.clock_offset)
        pos = self.positions[idx] + u[..., None] * (self.positions[idx + 1] - self.positions[idx])
        rot = self._rotations[idx] @ exp_map(self._increments[idx] * u[..., None])
        return pos, rot

    def covers(self, t_cam):
        t = np.asarray(t_cam, dtype=float) + self.clock_offset
        return (t >= self.times[0]) & (t <= self.times[-1])


def interpolate_pose(traj, t):
    """Pose at camera time ``t``: linear in position, geodesic in attitude."""
    pos, rot = traj.pose_arrays(float(t))
    return PoseSample(float(t) + traj.clock_offset, pos, log_map(rot))
