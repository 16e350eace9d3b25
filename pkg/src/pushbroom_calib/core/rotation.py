"""Rotation algebra on SO(3) with axis-angle (so(3)) parameterization.

All functions accept a single 3-vector or a stack ``(..., 3)`` of them and
return matching stacks of 3x3 matrices where relevant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-6


def skew(v):
    """Cross-product matrix ``[v]x`` such that ``skew(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    """Inverse of :func:`skew` applied to the antisymmetric part of ``m``."""
    m = np.asarray(m, dtype=float)
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def _rodrigues_coefficients(theta):
    """Return ``sin(t)/t`` and ``(1 - cos(t))/t**2`` with Taylor fallbacks."""
    small = theta < _SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / (t * t))
    return a, b


def exp_map(r):
    """Matrix exponential ``e^[r]x`` via the Rodrigues formula.

    Parameters
    ----------
    r : array_like, shape (..., 3)
        Rotation vectors in radians.

    Returns
    -------
    ndarray, shape (..., 3, 3)
    """
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=-1)
    a, b = _rodrigues_coefficients(theta)
    k = skew(r)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def log_map(rot):
    """Rotation vector of ``rot`` with norm in ``[0, pi]``.

    Handles the ``theta -> pi`` branch, where the antisymmetric part vanishes,
    by reading the axis off the symmetric part.
    """
    rot = np.asarray(rot, dtype=float)
    single = rot.ndim == 2
    rs = rot.reshape(-1, 3, 3)
    out = np.empty((rs.shape[0], 3))
    for i, m in enumerate(rs):
        w = vee(m)
        s = np.linalg.norm(w)
        c = 0.5 * (np.trace(m) - 1.0)
        theta = np.arctan2(s, c)
        if theta < _SMALL_ANGLE:
            out[i] = w * (1.0 + theta * theta / 6.0)
        elif np.pi - theta > 1e-4:
            out[i] = w * (theta / s)
        else:
            # near pi: R + I = 2 n n^T (1 - cos) approximately
            sym = 0.5 * (m + m.T) - c * np.eye(3)
            col = int(np.argmax(np.diag(sym)))
            axis = sym[:, col] / np.sqrt(max(sym[col, col], 1e-300))
            axis /= np.linalg.norm(axis)
            if np.dot(axis, w) < 0:
                axis = -axis
            out[i] = axis * theta
    return out[0] if single else out.reshape(rot.shape[:-2] + (3,))


def canonicalize(r):
    """Wrap a rotation vector so its norm lies in ``[0, pi]``."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    wrapped = np.mod(theta, 2.0 * np.pi)
    axis = np.divide(r, theta, out=np.zeros_like(r), where=theta > 0)
    flip = wrapped > np.pi
    wrapped = np.where(flip, 2.0 * np.pi - wrapped, wrapped)
    axis = np.where(flip, -axis, axis)
    # already-canonical vectors pass through bit-for-bit
    return np.where(theta <= np.pi, r, axis * wrapped)


def right_jacobian(r):
    """Right Jacobian of SO(3): ``exp(r + d) ~= exp(r) exp(J_r(r) d)``."""
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    k = skew(r)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        - ((1.0 - np.cos(theta)) / t2) * k
        + ((theta - np.sin(theta)) / (t2 * theta)) * (k @ k)
    )


def rotation_angle(rot):
    """Angle of a rotation matrix in ``[0, pi]``."""
    rot = np.asarray(rot, dtype=float)
    s = np.linalg.norm(vee(rot), axis=-1)
    c = 0.5 * (np.trace(rot, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, np.clip(c, -1.0, 1.0))


def angle_deviation(r1, r2):
    """Angle in radians of the relative rotation ``e^-[r1]x e^[r2]x``.

    Mathematically ``arccos((tr - 1) / 2)``; evaluated through ``atan2`` of the
    sine and cosine parts, which stays accurate when the rotations nearly
    coincide (arccos loses half the significant digits there).
    """
    rel = np.swapaxes(exp_map(r1), -1, -2) @ exp_map(r2)
    return rotation_angle(rel)


def slerp(rot0, rot1, u):
    """Geodesic interpolation ``rot0 exp(u log(rot0^T rot1))``."""
    delta = log_map(np.swapaxes(rot0, -1, -2) @ rot1)
    u = np.asarray(u, dtype=float)
    return rot0 @ exp_map(delta * u[..., None])


def chordal_mean(rotations):
    """Rotation closest in Frobenius norm to the average of ``rotations``."""
    m = np.mean(np.asarray(rotations, dtype=float), axis=0)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class AxisAngle:
    """Rotation vector (element of so(3)), canonicalized to norm <= pi."""

    vector: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).reshape(3)
        if not np.all(np.isfinite(v)):
            raise ValueError("axis-angle vector must be finite")
        object.__setattr__(self, "vector", canonicalize(v))

    @property
    def angle(self):
        return float(np.linalg.norm(self.vector))

    @property
    def degrees(self):
        return np.degrees(self.vector)

    def matrix(self):
        return exp_map(self.vector)

    @classmethod
    def from_matrix(cls, rot):
        return cls(log_map(rot))

    def __eq__(self, other):
        if not isinstance(other, AxisAngle):
            return NotImplemented
        return bool(np.array_equal(self.vector, other.vector))

    def __hash__(self):
        return hash(self.vector.tobytes())
