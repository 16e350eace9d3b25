"""Cube, trajectory and mask file formats.

Cubes are stored as an ENVI-style text header (``.hdr``) next to a raw
band-interleaved-by-line payload of little-endian float32. Line times live
in a ``.times`` sidecar with one value per line.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .types import HyperCube, Trajectory

_HEADER_MAGIC = "ENVI"
_TRAJ_COLUMNS = ["time_s", "pos_x_m", "pos_y_m", "pos_z_m", "att_rx", "att_ry", "att_rz"]
_OFFSET_PREFIX = "# clock_offset_s ="


def _paths(path):
    base = Path(path)
    if base.suffix in (".hdr", ".bil", ".times"):
        base = base.with_suffix("")
    return base.with_suffix(".hdr"), base.with_suffix(".bil"), base.with_suffix(".times")


def write_cube(path, cube, mask_path=None):
    """Write ``cube`` to ``<path>.hdr``/``.bil``/``.times``.

    NaN sentinels are preserved in the payload. When ``mask_path`` is given
    and the cube carries a validity mask, the mask is written there too.
    """
    hdr, bil, times = _paths(path)
    hdr.parent.mkdir(parents=True, exist_ok=True)
    hdr.write_text(
        "\n".join(
            [
                _HEADER_MAGIC,
                f"samples = {cube.samples_per_line}",
                f"lines = {cube.lines}",
                f"bands = {cube.bands}",
                "header offset = 0",
                "data type = 4",
                "interleave = bil",
                "byte order = 0",
                "",
            ]
        )
    )
    # (line, sample, band) -> (line, band, sample)
    payload = np.ascontiguousarray(np.transpose(cube.data, (0, 2, 1)), dtype="<f4")
    bil.write_bytes(payload.tobytes())
    times.write_text("".join(f"{float(t)!r}\n" for t in cube.line_times))
    if mask_path is not None and cube.valid_mask is not None:
        write_mask(mask_path, cube.valid_mask)
    return hdr


def _parse_header(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != _HEADER_MAGIC:
        raise ValueError("not an ENVI header")
    fields = {}
    for line in lines[1:]:
        if "=" in line:
            key, value = line.split("=", 1)
            fields[key.strip().lower()] = value.strip()
    return fields


def read_cube(path, mask_path=None):
    """Read a cube written by :func:`write_cube`."""
    hdr, bil, times = _paths(path)
    fields = _parse_header(hdr.read_text())
    if fields.get("interleave", "bil").lower() != "bil":
        raise ValueError("only band-interleaved-by-line payloads are supported")
    if fields.get("data type", "4") != "4":
        raise ValueError("only 32-bit float payloads are supported")
    order = "<" if fields.get("byte order", "0") == "0" else ">"
    n_lines, n_samples, n_bands = (int(fields[k]) for k in ("lines", "samples", "bands"))
    raw = np.frombuffer(bil.read_bytes(), dtype=f"{order}f4")
    offset = int(fields.get("header offset", "0"))
    raw = raw[offset // 4 :]
    if raw.size != n_lines * n_samples * n_bands:
        raise ValueError("payload size does not match header dimensions")
    data = np.transpose(raw.reshape(n_lines, n_bands, n_samples), (0, 2, 1)).astype(float)
    line_times = np.loadtxt(times, dtype=float, ndmin=1)
    mask = None
    if mask_path is not None and Path(mask_path).exists():
        mask = read_mask(mask_path, (n_lines, n_samples))
    elif not np.all(np.isfinite(data)):
        mask = np.all(np.isfinite(data), axis=2)
    return HyperCube(data, line_times, mask)


def write_mask(path, mask):
    """Validity mask as raw uint8 (1 valid, 0 invalid), line-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def read_mask(path, shape):
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    return raw.reshape(shape).astype(bool)


def write_trajectory(path, traj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"{_OFFSET_PREFIX} {float(traj.clock_offset)!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_TRAJ_COLUMNS)
        for t, p, a in zip(traj.times, traj.positions, traj.attitudes):
            writer.writerow([repr(float(v)) for v in (t, *p, *a)])


def read_trajectory(path):
    clock_offset = 0.0
    rows = []
    with Path(path).open(newline="") as fh:
        body = []
        for line in fh:
            if line.startswith(_OFFSET_PREFIX):
                clock_offset = float(line[len(_OFFSET_PREFIX) :])
            elif not line.startswith("#"):
                body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != _TRAJ_COLUMNS:
        raise ValueError(f"trajectory header must be {','.join(_TRAJ_COLUMNS)}")
    for row in reader:
        if row:
            rows.append([float(v) for v in row])
    arr = np.asarray(rows, dtype=float).reshape(-1, 7)
    return Trajectory(arr[:, 0], arr[:, 1:4], arr[:, 4:7], clock_offset)


def set_trajectory_clock_offset(path, clock_offset):
    """Rewrite only the clock offset line of a trajectory file."""
    traj = read_trajectory(path)
    write_trajectory(path, traj.with_clock_offset(clock_offset))
