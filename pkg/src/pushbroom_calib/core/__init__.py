"""Shared geometry, rotation algebra, camera model and containers."""

from .camera import CameraModel, pixels_per_radian, relative_shift_error
from .rotation import (
    AxisAngle,
    angle_deviation,
    canonicalize,
    chordal_mean,
    exp_map,
    log_map,
    right_jacobian,
    rotation_angle,
    skew,
    slerp,
    vee,
)
from .io import read_cube, read_mask, read_trajectory, write_cube, write_mask, write_trajectory
from .types import ALONG_TRACK_AXIS, HyperCube, PoseSample, Trajectory, interpolate_pose

__all__ = [
    "ALONG_TRACK_AXIS",
    "AxisAngle",
    "CameraModel",
    "HyperCube",
    "PoseSample",
    "Trajectory",
    "angle_deviation",
    "canonicalize",
    "chordal_mean",
    "exp_map",
    "interpolate_pose",
    "log_map",
    "pixels_per_radian",
    "read_cube",
    "read_mask",
    "read_trajectory",
    "relative_shift_error",
    "right_jacobian",
    "rotation_angle",
    "skew",
    "slerp",
    "vee",
    "write_cube",
    "write_mask",
    "write_trajectory",
]
