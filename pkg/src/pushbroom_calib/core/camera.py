"""Line-scan pinhole camera model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraModel:
    """Pinhole model of a single sensor line.

    Camera frame: ``x`` along the sensor line (increasing sample index),
    ``y`` along-track pointing backward, ``z`` along the optical axis (nadir).

    Parameters
    ----------
    focal_length_px : float
        Focal length in pixels.
    samples_per_line : int
    principal_sample : float, optional
        Sample coordinate of the optical center. Defaults to the line center.
    """

    focal_length_px: float
    samples_per_line: int
    principal_sample: float | None = None

    def __post_init__(self):
        if not self.focal_length_px > 0:
            raise ValueError("focal_length_px must be positive")
        if int(self.samples_per_line) < 1:
            raise ValueError("samples_per_line must be >= 1")
        object.__setattr__(self, "samples_per_line", int(self.samples_per_line))
        if self.principal_sample is None:
            object.__setattr__(self, "principal_sample", 0.5 * (self.samples_per_line - 1))
        if not 0 <= self.principal_sample < self.samples_per_line:
            raise ValueError("principal_sample must lie inside the line")

    def rays(self, sample):
        """Unit ray directions for (fractional) sample coordinates."""
        x = (np.asarray(sample, dtype=float) - self.principal_sample) / self.focal_length_px
        v = np.stack([x, np.zeros_like(x), np.ones_like(x)], axis=-1)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def project(self, points):
        """Project camera-frame points; returns ``(sample, along_track)`` in pixels.

        ``along_track`` is the signed offset from the sensor plane, zero for
        points the line actually images.
        """
        p = np.asarray(points, dtype=float)
        f = self.focal_length_px
        return self.principal_sample + f * p[..., 0] / p[..., 2], f * p[..., 1] / p[..., 2]

    @property
    def half_fov(self):
        edge = max(self.principal_sample, self.samples_per_line - 1 - self.principal_sample)
        return float(np.arctan(edge / self.focal_length_px))


def pixels_per_radian(cam, x):
    """Pixels per radian of cross-track rotation over flat terrain.

    ``x`` is measured from the principal sample: ``f / cos^2(arctan(x / f))``.
    """
    f = cam.focal_length_px
    return f / np.cos(np.arctan(np.asarray(x, dtype=float) / f)) ** 2


def relative_shift_error(cam, x):
    """Fractional excess of the shift at ``x`` over the shift at the optical center."""
    f = cam.focal_length_px
    return 1.0 / np.cos(np.arctan(np.asarray(x, dtype=float) / f)) ** 2 - 1.0
