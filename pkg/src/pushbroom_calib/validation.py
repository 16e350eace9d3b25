"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .core.types import HyperCube
from .exceptions import ConfigError


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ConfigError(f"{name} must be a finite number, got {value!r}", name)
    if value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise ConfigError(f"{name} must be {bound}, got {value!r}", name)
    return float(value)


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}", name)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value!r}", name)
    return int(value)


def check_line(line, name="line"):
    arr = np.asarray(line, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


def check_line_pair(line_a, line_b, min_length=1):
    a = check_line(line_a, "line_a")
    b = check_line(line_b, "line_b")
    if a.shape != b.shape:
        raise ValueError(f"lines differ in length: {a.size} vs {b.size}")
    if a.size < min_length:
        raise ValueError(f"lines must hold at least {min_length} samples")
    return a, b


def as_image(image, min_shape=(1, 1)):
    """Coerce a cube or array to a 2-D float raster (band mean for cubes)."""
    if isinstance(image, HyperCube):
        arr = image.panchromatic()
    else:
        arr = np.asarray(image, dtype=float)
        if arr.ndim == 3:
            arr = arr.mean(axis=2)
    if arr.ndim != 2:
        raise ValueError("image must be two-dimensional")
    if arr.shape[0] < min_shape[0] or arr.shape[1] < min_shape[1]:
        raise ValueError(f"image must be at least {min_shape[0]}x{min_shape[1]}")
    return arr


def as_cube(x):
    if isinstance(x, HyperCube):
        return x
    arr = np.asarray(x, dtype=float)
    return HyperCube(arr, np.arange(arr.shape[0], dtype=float))


def check_points(points, name="points"):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must be an (n, 2) array")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr
