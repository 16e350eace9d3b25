import numpy as np
import pytest

from pushbroom_calib.core.io import (
    read_cube,
    read_mask,
    read_trajectory,
    set_trajectory_clock_offset,
    write_cube,
    write_mask,
    write_trajectory,
)
from pushbroom_calib.core.types import HyperCube, Trajectory


def test_cube_round_trip(tmp_path, rng):
    cube = HyperCube(rng.normal(size=(6, 7, 3)).astype(np.float32), np.arange(6) * 0.01 + 3.0)
    write_cube(tmp_path / "c", cube)
    back = read_cube(tmp_path / "c.hdr")
    np.testing.assert_array_equal(back.data, cube.data)
    np.testing.assert_array_equal(back.line_times, cube.line_times)
    header = (tmp_path / "c.hdr").read_text()
    assert "interleave = bil" in header and "byte order = 0" in header and "data type = 4" in header


def test_cube_payload_is_band_interleaved_by_line(tmp_path):
    data = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)
    write_cube(tmp_path / "c", HyperCube(data, [0.0, 1.0]))
    raw = np.frombuffer((tmp_path / "c.bil").read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(raw[:3], data[0, :, 0])
    np.testing.assert_array_equal(raw[3:6], data[0, :, 1])


def test_cube_writes_are_byte_identical(tmp_path, rng):
    cube = HyperCube(rng.normal(size=(4, 5)), np.arange(4.0))
    write_cube(tmp_path / "a", cube)
    write_cube(tmp_path / "b", cube)
    for ext in (".hdr", ".bil", ".times"):
        assert (tmp_path / f"a{ext}").read_bytes() == (tmp_path / f"b{ext}").read_bytes()


def test_masked_cube_round_trip(tmp_path):
    data = np.ones((3, 4))
    data[0, 0] = np.nan
    mask = np.ones((3, 4), dtype=bool)
    mask[0, 0] = False
    write_cube(tmp_path / "m", HyperCube(data, [0, 1, 2], mask), mask_path=tmp_path / "m.mask")
    back = read_cube(tmp_path / "m", mask_path=tmp_path / "m.mask")
    np.testing.assert_array_equal(back.valid_mask, mask)
    assert np.isnan(back.data[0, 0, 0])


def test_mask_round_trip(tmp_path, rng):
    mask = rng.random((5, 6)) > 0.5
    write_mask(tmp_path / "x.mask", mask)
    np.testing.assert_array_equal(read_mask(tmp_path / "x.mask", (5, 6)), mask)


def test_trajectory_round_trip_and_offset(tmp_path, rng):
    traj = Trajectory(np.arange(5.0), rng.normal(size=(5, 3)), rng.normal(scale=0.1, size=(5, 3)), 0.25)
    write_trajectory(tmp_path / "t.csv", traj)
    text = (tmp_path / "t.csv").read_text().splitlines()
    assert text[1] == "time_s,pos_x_m,pos_y_m,pos_z_m,att_rx,att_ry,att_rz"
    back = read_trajectory(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.positions, traj.positions)
    np.testing.assert_array_equal(back.attitudes, traj.attitudes)
    assert back.clock_offset == 0.25
    set_trajectory_clock_offset(tmp_path / "t.csv", -1.5)
    assert read_trajectory(tmp_path / "t.csv").clock_offset == -1.5


def test_trajectory_header_required(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_trajectory(tmp_path / "bad.csv")
