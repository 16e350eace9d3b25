import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pushbroom_calib.core.rotation import (
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

small_vec = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


def test_skew_matches_cross_product(rng):
    a, b = rng.normal(size=(2, 3))
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))
    np.testing.assert_allclose(vee(skew(a)), a)


def test_exp_of_zero_is_identity():
    np.testing.assert_array_equal(exp_map(np.zeros(3)), np.eye(3))


def test_exp_quarter_turn_about_z():
    r = exp_map([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


@given(small_vec)
def test_exp_is_orthonormal(v):
    r = exp_map(v)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


@given(small_vec)
def test_log_inverts_exp(v):
    v = canonicalize(v)
    if np.linalg.norm(v) > np.pi - 1e-6:
        return
    np.testing.assert_allclose(log_map(exp_map(v)), v, atol=1e-9)


def test_log_near_pi_returns_valid_rotation():
    v = np.array([0.0, 0.0, np.pi - 1e-9])
    np.testing.assert_allclose(exp_map(log_map(exp_map(v))), exp_map(v), atol=1e-7)


def test_canonicalize_wraps_long_vectors():
    v = canonicalize([0.0, 0.0, 1.5 * np.pi])
    assert np.linalg.norm(v) <= np.pi
    np.testing.assert_allclose(exp_map(v), exp_map([0.0, 0.0, 1.5 * np.pi]), atol=1e-12)


def test_batched_exp_and_log(rng):
    v = rng.normal(scale=0.5, size=(10, 3))
    r = exp_map(v)
    assert r.shape == (10, 3, 3)
    np.testing.assert_allclose(log_map(r), v, atol=1e-10)


@given(arrays(np.float64, 3, elements=st.floats(-2.0, 2.0)))
def test_right_jacobian_first_order(v):
    d = 1e-6 * np.array([0.3, -0.2, 0.5])
    lhs = exp_map(v + d)
    rhs = exp_map(v) @ exp_map(right_jacobian(v) @ d)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_angle_deviation_and_rotation_angle():
    a = np.radians([1.0, 0.0, 0.0])
    assert np.degrees(angle_deviation(a, np.zeros(3))) == pytest.approx(1.0)
    assert rotation_angle(exp_map(a)) == pytest.approx(np.radians(1.0))


@given(small_vec, small_vec)
def test_angle_deviation_symmetric(a, b):
    assert angle_deviation(a, b) == pytest.approx(angle_deviation(b, a), abs=1e-9)


def test_slerp_endpoints_and_midpoint():
    a = exp_map([0.0, 0.0, 0.0])
    b = exp_map([0.0, 0.0, 1.0])
    np.testing.assert_allclose(slerp(a, b, 0.0), a, atol=1e-12)
    np.testing.assert_allclose(slerp(a, b, 1.0), b, atol=1e-12)
    np.testing.assert_allclose(slerp(a, b, 0.5), exp_map([0.0, 0.0, 0.5]), atol=1e-12)


def test_chordal_mean_of_symmetric_spread():
    c = exp_map([0.1, 0.2, -0.1])
    d = exp_map([0.0, 0.0, 0.05])
    mean = chordal_mean(np.stack([c @ d, c @ d.T]))
    np.testing.assert_allclose(mean, c, atol=1e-3)


def test_axis_angle_value_object():
    a = AxisAngle([0.0, 0.0, 0.1])
    assert a.angle == pytest.approx(0.1)
    np.testing.assert_allclose(a.degrees, [0.0, 0.0, np.degrees(0.1)])
    np.testing.assert_allclose(AxisAngle.from_matrix(a.matrix()).vector, a.vector, atol=1e-15)
    assert a == AxisAngle([0.0, 0.0, 0.1])
    with pytest.raises(ValueError):
        AxisAngle([np.nan, 0.0, 0.0])


def _quat(v):
    theta = np.linalg.norm(v)
    axis = v / theta if theta > 0 else np.zeros(3)
    return np.concatenate([[np.cos(theta / 2)], np.sin(theta / 2) * axis])


def _qmul(p, q):
    w1, v1 = p[0], p[1:]
    w2, v2 = q[0], q[1:]
    return np.concatenate([[w1 * w2 - v1 @ v2], w1 * v2 + w2 * v1 + np.cross(v1, v2)])


@given(small_vec, small_vec)
def test_angle_deviation_matches_quaternion_oracle(a, b):
    qa = _quat(a)
    qa_conj = np.concatenate([[qa[0]], -qa[1:]])
    rel = _qmul(qa_conj, _quat(b))
    expected = 2.0 * np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0]))
    assert angle_deviation(a, b) == pytest.approx(expected, abs=1e-8)


@given(small_vec, small_vec, small_vec)
def test_angle_deviation_triangle_inequality(a, b, c):
    assert angle_deviation(a, c) <= angle_deviation(a, b) + angle_deviation(b, c) + 1e-9


def test_exp_inverse_property(rng):
    for v in rng.normal(size=(100, 3)):
        np.testing.assert_allclose(exp_map(v) @ exp_map(-v), np.eye(3), atol=1e-12)


def test_exp_orthonormal_on_many_samples(rng):
    v = rng.normal(size=(1000, 3))
    v = v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(0, np.pi, (1000, 1))
    r = exp_map(v)
    np.testing.assert_allclose(r @ np.swapaxes(r, 1, 2), np.broadcast_to(np.eye(3), r.shape), atol=1e-10)
    np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-10)


@given(small_vec)
def test_canonicalize_is_idempotent(v):
    once = canonicalize(v)
    np.testing.assert_array_equal(canonicalize(once), once)
    assert np.linalg.norm(once) <= np.pi + 1e-12
