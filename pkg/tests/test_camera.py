import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pushbroom_calib.core.camera import CameraModel, pixels_per_radian, relative_shift_error


def test_principal_sample_defaults_to_line_center():
    assert CameraModel(100.0, 11).principal_sample == 5.0


def test_invalid_cameras_rejected():
    with pytest.raises(ValueError):
        CameraModel(0.0, 10)
    with pytest.raises(ValueError):
        CameraModel(10.0, 10, principal_sample=10.0)


def test_ray_at_principal_sample_is_nadir():
    cam = CameraModel(1345.0, 900, principal_sample=400.0)
    np.testing.assert_allclose(cam.rays(400.0), [0.0, 0.0, 1.0])


def test_ray_at_one_focal_length_is_45_degrees():
    cam = CameraModel(1345.0, 2000, principal_sample=100.0)
    np.testing.assert_allclose(cam.rays(1445.0), np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0))


def test_project_inverts_rays(rng):
    cam = CameraModel(776.0, 512)
    x = rng.uniform(0, 511, 20)
    sample, along = cam.project(3.7 * cam.rays(x))
    np.testing.assert_allclose(sample, x)
    np.testing.assert_allclose(along, 0.0, atol=1e-12)


def test_pixels_per_radian_at_center_is_focal_length():
    cam = CameraModel(1345.0, 900)
    assert pixels_per_radian(cam, 0.0) == pytest.approx(1345.0)


def test_edge_relative_error_is_10_9_percent():
    cam = CameraModel(1345.0, 900)
    x = 1345.0 * np.tan(np.radians(18.25))
    assert relative_shift_error(cam, x) == pytest.approx(0.109, abs=5e-4)
    assert pixels_per_radian(cam, x) / 1345.0 - 1.0 == pytest.approx(0.109, abs=5e-4)


def test_mean_relative_error_over_line_is_3_6_percent():
    cam = CameraModel(1345.0, 900)
    edge = 1345.0 * np.tan(np.radians(18.25))
    x = np.linspace(-edge, edge, 900)
    assert np.mean(relative_shift_error(cam, x)) == pytest.approx(0.036, abs=1e-3)


def test_relative_error_at_one_focal_length_doubles_scale():
    assert relative_shift_error(CameraModel(500.0, 10), 500.0) == pytest.approx(1.0)


@given(st.floats(0.0, 2000.0), st.floats(0.0, 2000.0))
def test_relative_error_even_and_monotone(a, b):
    cam = CameraModel(776.0, 512)
    assert relative_shift_error(cam, a) == pytest.approx(relative_shift_error(cam, -a))
    if a < b:
        assert relative_shift_error(cam, a) <= relative_shift_error(cam, b)
    assert pixels_per_radian(cam, a) >= cam.focal_length_px
