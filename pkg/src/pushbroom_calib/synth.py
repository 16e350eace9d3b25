"""Synthetic push-broom datasets with known ground truth.

A flat textured ground plane is imaged by a line camera flying straight
flight lines. Platform attitude is perturbed (roll, pitch) by band-limited
random motion; the camera sits on the platform rotated by a planted
boresight. Alongside the raw cubes the simulator emits the exact platform
trajectory, a degraded navigation copy (sparser, noisy, on a shifted clock),
the exact per-pair line shifts and exact tie-point geometry.

Frames
------
World is east-north-up with the ground at ``z = 0``. The body frame has
``x`` to the right of the flight direction, ``y`` backward along-track and
``z`` down; the camera frame equals the body frame up to the boresight,
which maps camera vectors into the body frame.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core.camera import CameraModel
from .core.rotation import AxisAngle, exp_map, log_map
from .core.types import HyperCube, Trajectory
from .exceptions import ConfigError, RenderError
from .features import TiePointSet
from .shift_model import ShiftSeries
from .validation import check_int, check_positive

_SQRT3 = np.sqrt(3.0)
MIN_TEXTURE_SIZE = 512
_MOTION_PAD_S = 15.0


# ------------------------------------------------------------------ texture


@dataclass(frozen=True, eq=False)
class SceneTexture:
    """Ground radiance raster; ``gsd`` is metres per texture pixel."""

    raster: np.ndarray
    gsd: float

    def __post_init__(self):
        r = np.asarray(self.raster, dtype=float)
        if r.ndim not in (2, 3) or min(r.shape[:2]) < MIN_TEXTURE_SIZE:
            raise ValueError(f"texture must be at least {MIN_TEXTURE_SIZE}x{MIN_TEXTURE_SIZE}")
        if not np.all(np.isfinite(r)):
            raise ValueError("texture values must be finite")
        check_positive(self.gsd, "gsd")
        object.__setattr__(self, "raster", r)

    @property
    def shape(self):
        return self.raster.shape[:2]

    def bands(self):
        return 1 if self.raster.ndim == 2 else self.raster.shape[2]


def gp_sample(size, length_scale, rng, pad=64):
    """Stationary Matern 3/2 field with unit variance (circulant embedding)."""
    m = size + pad
    i = np.minimum(np.arange(m), m - np.arange(m))
    dist = np.hypot(i[:, None], i[None, :])
    cov = (1.0 + _SQRT3 * dist / length_scale) * np.exp(-_SQRT3 * dist / length_scale)
    lam = np.maximum(np.fft.fft2(cov).real, 0.0)
    z = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    field_ = np.fft.fft2(np.sqrt(lam / (m * m)) * z).real
    return field_[:size, :size]


def _checker_plus_blobs(size, rng, n_blobs=60, cell=64):
    yy, xx = np.mgrid[0:size, 0:size]
    img = 0.3 * (((yy // cell) + (xx // cell)) % 2)
    for _ in range(n_blobs):
        cy, cx = rng.uniform(16, size - 16, 2)
        s = rng.uniform(2.0, 5.0)
        img += rng.choice([-1.0, 1.0]) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return img + 0.02 * rng.standard_normal((size, size))


def generate_texture(kind="gp_sample", size=1024, seed=0, length_scale=4.0, gsd=1.0, path=None, bands=1):
    """Procedural or file-backed ground texture.

    ``kind`` is ``"gp_sample"`` (Matern 3/2 field of the given length scale),
    ``"checker_plus_blobs"`` or ``"from_file"`` (a ``.npy`` array at ``path``).
    With ``bands > 1`` extra bands are affine copies of the first with a
    little independent detail.
    """
    size = check_int(size, "size", minimum=MIN_TEXTURE_SIZE)
    rng = np.random.default_rng(seed)
    if kind == "gp_sample":
        img = gp_sample(size, length_scale, rng)
    elif kind == "checker_plus_blobs":
        img = _checker_plus_blobs(size, rng)
    elif kind == "from_file":
        if path is None or not Path(path).exists():
            raise FileNotFoundError(f"texture file not found: {path}")
        img = np.load(path).astype(float)
    else:
        raise ValueError(f"unknown texture kind {kind!r}")
    if bands > 1:
        extra = [0.9 ** b * img + 0.1 * b + 0.05 * gp_sample(img.shape[0], length_scale, rng)[: img.shape[0], : img.shape[1]]
                 for b in range(1, bands)]
        img = np.stack([img, *extra], axis=-1)
    return SceneTexture(img, gsd)


# ------------------------------------------------------------------- config

_SECTIONS = {
    "scene": ("texture_kind", "texture_size", "texture_length_scale", "texture_path", "bands"),
    "camera": ("focal_length_px", "samples_per_line"),
    "trajectory": (
        "height_m", "speed_mps", "line_rate_hz", "lines_per_flight", "headings_deg",
        "lateral_offsets_m", "speed_factors", "gap_s", "margin_s",
    ),
    "perturbation": (
        "roll_std_deg", "roll_bandwidth_hz", "roll_sine_amp_deg", "roll_sine_freq_hz",
        "pitch_std_deg", "pitch_bandwidth_hz", "sensor_noise_std",
    ),
    "navigation": ("nav_rate_hz", "nav_attitude_noise_deg", "nav_position_noise_m"),
    "calibration": ("boresight_deg", "time_offset_lines"),
    "random": ("seed",),
}
_REQUIRED = ("trajectory.height_m", "trajectory.speed_mps", "trajectory.line_rate_hz",
             "trajectory.headings_deg", "random.seed")


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters; angles in degrees unless stated otherwise."""

    height_m: float = 60.0
    speed_mps: float = 3.9
    line_rate_hz: float = 100.0
    lines_per_flight: int = 1100
    headings_deg: tuple = (0.0, 90.0)
    lateral_offsets_m: tuple = ()
    speed_factors: tuple = ()
    gap_s: float = 30.0
    margin_s: float = 10.0
    focal_length_px: float = 776.0
    samples_per_line: int = 512
    texture_kind: str = "gp_sample"
    texture_size: int = 1024
    texture_length_scale: float = 4.0
    texture_path: str = ""
    bands: int = 1
    roll_std_deg: float = 0.5
    roll_bandwidth_hz: float = 1.5
    roll_sine_amp_deg: float = 0.0
    roll_sine_freq_hz: float = 0.5
    pitch_std_deg: float = 0.1
    pitch_bandwidth_hz: float = 1.0
    sensor_noise_std: float = 0.03
    nav_rate_hz: float = 20.0
    nav_attitude_noise_deg: float = 0.05
    nav_position_noise_m: float = 0.0
    boresight_deg: tuple = (0.6, -0.5, 0.6)
    time_offset_lines: float = 7.3
    seed: int = 0

    def __post_init__(self):
        for name in ("height_m", "speed_mps", "line_rate_hz", "focal_length_px", "gap_s"):
            check_positive(getattr(self, name), name)
        for name in ("margin_s", "roll_std_deg", "pitch_std_deg", "sensor_noise_std", "nav_attitude_noise_deg",
                     "nav_position_noise_m", "roll_sine_amp_deg"):
            check_positive(getattr(self, name), name, strict=False)
        check_int(self.lines_per_flight, "lines_per_flight", minimum=2)
        check_int(self.samples_per_line, "samples_per_line", minimum=16)
        object.__setattr__(self, "headings_deg", tuple(float(h) for h in np.atleast_1d(self.headings_deg)))
        for name in ("lateral_offsets_m", "speed_factors"):
            vals = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if vals and len(vals) != len(self.headings_deg):
                raise ConfigError(f"{name} needs one value per heading", f"trajectory.{name}")
            object.__setattr__(self, name, vals)
        if abs(self.time_offset_lines) / self.line_rate_hz > min(self.margin_s, _MOTION_PAD_S):
            raise ConfigError("time offset exceeds the simulated trajectory margin", "calibration.time_offset_lines")
        b = tuple(float(v) for v in np.atleast_1d(self.boresight_deg))
        if len(b) != 3:
            raise ConfigError("boresight_deg needs three values", "calibration.boresight_deg")
        object.__setattr__(self, "boresight_deg", b)

    @property
    def n_flights(self):
        return len(self.headings_deg)

    @property
    def line_period(self):
        return 1.0 / self.line_rate_hz

    @property
    def camera(self):
        return CameraModel(self.focal_length_px, self.samples_per_line)

    @property
    def ground_gsd(self):
        """Cross-track ground sample distance at nadir (metres)."""
        return self.height_m / self.focal_length_px

    @property
    def boresight(self):
        return AxisAngle(np.radians(self.boresight_deg))

    @property
    def time_offset_s(self):
        return self.time_offset_lines * self.line_period

    def lateral_offset(self, i):
        return self.lateral_offsets_m[i] if self.lateral_offsets_m else 0.0

    def speed_factor(self, i):
        return self.speed_factors[i] if self.speed_factors else 1.0

    def flight_start_time(self, i):
        return i * (self.lines_per_flight * self.line_period + self.gap_s)

    def line_times(self, i):
        return self.flight_start_time(i) + np.arange(self.lines_per_flight) * self.line_period

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return SimConfig(**values)

    # -- text format -----------------------------------------------------

    def to_ini(self):
        cp = configparser.ConfigParser()
        values = asdict(self)
        for section, keys in _SECTIONS.items():
            cp[section] = {k: _format_value(values[k]) for k in keys}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in cp[section].items()]
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}", "") from exc
        for key in _REQUIRED:
            section, name = key.split(".")
            if not cp.has_option(section, name):
                raise ConfigError(f"missing required field {key}", key)
        defaults = asdict(cls())
        kwargs = {}
        for section in cp.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", section)
            for name, raw in cp[section].items():
                if name not in _SECTIONS[section]:
                    raise ConfigError(f"unknown field {section}.{name}", f"{section}.{name}")
                try:
                    kwargs[name] = _parse_value(raw, defaults[name])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {section}.{name}: {raw!r}", f"{section}.{name}") from exc
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), getattr(exc, "field", "")) from exc

    @classmethod
    def from_file(cls, path):
        return cls.from_ini(Path(path).read_text())


def _format_value(v):
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _parse_value(raw, default):
    raw = raw.strip()
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.replace(",", " ").split()) if raw else ()
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


# --------------------------------------------------------------- geometry


def base_rotation(heading_rad):
    """Body-to-world rotation of level flight at compass heading (clockwise from north)."""
    s, c = np.sin(heading_rad), np.cos(heading_rad)
    forward = np.array([s, c, 0.0])
    right = np.array([c, -s, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    return np.column_stack([right, -forward, down])


def _band_limited(times, std, bandwidth, rng, grid_rate=200.0):
    """Gaussian-filtered white noise on ``times`` scaled to ``std``."""
    if std == 0:
        return np.zeros_like(times)
    t0, t1 = times.min(), times.max()
    grid = np.arange(t0 - 5.0, t1 + 5.0, 1.0 / grid_rate)
    sigma = grid_rate / (2 * np.pi * bandwidth)
    noise = ndimage.gaussian_filter1d(rng.standard_normal(grid.size), sigma, mode="wrap")
    noise *= std / noise.std()
    return np.interp(times, grid, noise)


@dataclass(frozen=True, eq=False)
class _Motion:
    """Attitude perturbation tabulated on a dense time grid."""

    grid: np.ndarray
    angles: np.ndarray  # (n, 3) body-axis rotation vector components

    def at(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.grid, self.angles[:, k]) for k in range(3)], axis=-1)


def _motion(cfg, rng):
    span_end = cfg.flight_start_time(cfg.n_flights - 1) + cfg.lines_per_flight * cfg.line_period
    # independent of the planted offset so every offset sees the same motion
    pad = cfg.margin_s + _MOTION_PAD_S
    grid = np.arange(-pad, span_end + pad, 1.0 / 200.0)
    roll = _band_limited(grid, np.radians(cfg.roll_std_deg), cfg.roll_bandwidth_hz, rng)
    roll += np.radians(cfg.roll_sine_amp_deg) * np.sin(2 * np.pi * cfg.roll_sine_freq_hz * grid)
    pitch = _band_limited(grid, np.radians(cfg.pitch_std_deg), cfg.pitch_bandwidth_hz, rng)
    # body x is the cross-track (pitch) axis, body y the along-track (roll) axis
    return _Motion(grid, np.column_stack([pitch, roll, np.zeros_like(grid)]))


def _flight_index(cfg, t):
    """Flight line each time belongs to (nearest by flight-span center)."""
    dur = cfg.lines_per_flight * cfg.line_period
    centers = np.array([cfg.flight_start_time(i) + 0.5 * dur for i in range(cfg.n_flights)])
    return np.argmin(np.abs(np.asarray(t, dtype=float)[..., None] - centers), axis=-1)


def _true_states(cfg, motion, t):
    """Exact platform positions and body-to-world attitude vectors at times ``t``."""
    t = np.asarray(t, dtype=float)
    idx = _flight_index(cfg, t)
    dur = cfg.lines_per_flight * cfg.line_period
    pos = np.empty(t.shape + (3,))
    rot = np.empty(t.shape + (3, 3))
    pert = exp_map(motion.at(t))
    for i in range(cfg.n_flights):
        sel = idx == i
        if not np.any(sel):
            continue
        h = np.radians(cfg.headings_deg[i])
        base = base_rotation(h)
        forward = np.array([np.sin(h), np.cos(h), 0.0])
        right = np.array([np.cos(h), -np.sin(h), 0.0])
        mid = cfg.flight_start_time(i) + 0.5 * dur
        along = cfg.speed_mps * cfg.speed_factor(i) * (t[sel] - mid)
        pos[sel] = along[:, None] * forward + cfg.lateral_offset(i) * right + np.array([0.0, 0.0, cfg.height_m])
        rot[sel] = base @ pert[sel]
    return pos, log_map(rot)


def _trajectory_times(cfg, rate, shift=0.0):
    """Sample times per flight line (with margins), concatenated."""
    out = []
    dur = cfg.lines_per_flight * cfg.line_period
    for i in range(cfg.n_flights):
        t0 = cfg.flight_start_time(i) - cfg.margin_s + shift
        t1 = cfg.flight_start_time(i) + dur + cfg.margin_s + shift
        n = int(np.floor((t1 - t0) * rate))
        out.append(t0 + np.arange(n) / rate)
    return np.concatenate(out)


def true_trajectory(cfg, motion):
    """Exact IMU trajectory sampled on the line-time grid (camera clock)."""
    dur = cfg.lines_per_flight * cfg.line_period
    times = []
    for i in range(cfg.n_flights):
        n_margin = int(round(cfg.margin_s * cfg.line_rate_hz))
        k = np.arange(-n_margin, cfg.lines_per_flight + n_margin)
        times.append(cfg.flight_start_time(i) + k * cfg.line_period)
    t = np.concatenate(times)
    del dur
    pos, att = _true_states(cfg, motion, t)
    return Trajectory(t, pos, att, 0.0)


def degraded_trajectory(cfg, motion, rng):
    """Low-cost navigation: sparse, noisy, on a clock running ahead by the planted offset.

    Trajectory time ``s`` reports the platform state at camera time
    ``s - offset``; the stored ``clock_offset`` is 0 (unknown to the user).
    """
    tau = cfg.time_offset_s
    s = _trajectory_times(cfg, cfg.nav_rate_hz, shift=tau)
    pos, att = _true_states(cfg, motion, s - tau)
    rot = exp_map(att)
    noise = exp_map(rng.normal(scale=np.radians(cfg.nav_attitude_noise_deg), size=att.shape))
    att = log_map(rot @ noise)
    pos = pos + rng.normal(scale=cfg.nav_position_noise_m, size=pos.shape)
    return Trajectory(s, pos, att, 0.0)


def _camera_poses(traj, t, boresight):
    pos, rot = traj.pose_arrays(t)
    return pos, rot @ exp_map(boresight.vector)


def _ground_points(cam, pos, rot_wc, samples):
    """Intersect rays of ``samples`` with the ground; ``pos``/``rot_wc`` broadcast."""
    v = cam.rays(samples)
    d = np.einsum("...ij,...j->...i", rot_wc, v)
    scale = -pos[..., 2] / d[..., 2]
    return pos + scale[..., None] * d


def _to_texture(scene, ground):
    h, w = scene.shape
    col = ground[..., 0] / scene.gsd + 0.5 * (w - 1)
    row = 0.5 * (h - 1) - ground[..., 1] / scene.gsd
    return row, col


# ---------------------------------------------------------------- render


@dataclass(frozen=True, eq=False)
class FlightLine:
    """One rendered flight line and its exact per-pair shifts."""

    cube: HyperCube | None
    true_shifts: ShiftSeries
    heading_deg: float
    index: int


@dataclass(frozen=True, eq=False)
class Dataset:
    config: SimConfig
    flights: list
    true_trajectory: Trajectory
    nav_trajectory: Trajectory
    motion: _Motion = field(repr=False)
    scene: SceneTexture | None = field(default=None, repr=False)

    @property
    def camera(self):
        return self.config.camera

    def project(self, ground, flight):
        return project_to_flight(ground, self.config, self.true_trajectory, flight)


def true_shift_series(cfg, traj, flight):
    """Exact ``(dx, dy)`` for each consecutive line pair at the principal sample."""
    cam = cfg.camera
    t = cfg.line_times(flight)
    pos, rwc = _camera_poses(traj, t, cfg.boresight)
    g = _ground_points(cam, pos[1:], rwc[1:], cam.principal_sample)
    p = np.einsum("nji,nj->ni", rwc[:-1], g - pos[:-1])
    f = cam.focal_length_px
    dx = f * p[:, 0] / p[:, 2]
    dy = -f * p[:, 1] / p[:, 2]
    return ShiftSeries.from_arrays(dx, np.maximum(dy, 0.0)), dx, dy


def render_pushbroom(scene, cfg, render_images=True):
    """Render every flight line of ``cfg`` over ``scene``.

    Raises
    ------
    RenderError
        If a sensor footprint leaves the texture (with the line index).
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    motion = _motion(cfg, np.random.default_rng(seeds[0]))
    truth = true_trajectory(cfg, motion)
    nav = degraded_trajectory(cfg, motion, np.random.default_rng(seeds[1]))
    noise_rng = np.random.default_rng(seeds[2])
    cam = cfg.camera
    flights = []
    spline = None
    if render_images:
        raster = scene.raster if scene.raster.ndim == 3 else scene.raster[:, :, None]
        spline = [ndimage.spline_filter(raster[:, :, b], order=3) for b in range(raster.shape[2])]
    for i in range(cfg.n_flights):
        series, _, _ = true_shift_series(cfg, truth, i)
        cube = None
        if render_images:
            t = cfg.line_times(i)
            pos, rwc = _camera_poses(truth, t, cfg.boresight)
            ground = _ground_points(cam, pos[:, None, :], rwc[:, None, :, :], np.arange(cam.samples_per_line))
            row, col = _to_texture(scene, ground)
            h, w = scene.shape
            bad = (row < 1) | (row > h - 2) | (col < 1) | (col > w - 2)
            if np.any(bad):
                line = int(np.nonzero(bad.any(axis=1))[0][0])
                raise RenderError(f"flight {i}: footprint leaves the scene at line {line}", line)
            data = np.stack(
                [ndimage.map_coordinates(s, [row, col], order=3, prefilter=False) for s in spline], axis=-1
            )
            if cfg.sensor_noise_std > 0:
                data = data + noise_rng.normal(scale=cfg.sensor_noise_std, size=data.shape)
            cube = HyperCube(data, t)
        flights.append(FlightLine(cube, series, cfg.headings_deg[i], i))
    return Dataset(cfg, flights, truth, nav, motion, scene)


def simulate(cfg, render_images=True):
    """Texture generation plus rendering from a single config."""
    gsd = cfg.ground_gsd
    scene = None
    if render_images:
        seeds = np.random.SeedSequence(cfg.seed).spawn(4)
        tex_seed = int(seeds[3].generate_state(1)[0])
        scene = generate_texture(cfg.texture_kind, cfg.texture_size, tex_seed, cfg.texture_length_scale, gsd,
                                 cfg.texture_path or None, cfg.bands)
    return render_pushbroom(scene, cfg, render_images)


# ------------------------------------------------------- tie-point truth


def project_to_flight(ground, cfg, traj, flight, iterations=60):
    """Raw ``(sample, fractional line)`` at which a flight line images ground points.

    The line is found where the point crosses the sensor plane
    (camera-frame along-track coordinate zero), by bisection on the
    interpolated trajectory. Points never crossed, or imaged outside the
    line, come back as NaN.
    """
    g = np.atleast_2d(np.asarray(ground, dtype=float))
    cam = cfg.camera
    t = cfg.line_times(flight)
    pos, rwc = _camera_poses(traj, t, cfg.boresight)
    # (points, lines) along-track coordinate in each camera frame
    py = np.einsum("lj,plj->pl", rwc[:, :, 1], g[:, None, :] - pos[None, :, :])
    sign = np.sign(py)
    change = sign[:, :-1] * sign[:, 1:] <= 0
    has = change.any(axis=1)
    k = np.where(has, np.argmax(change, axis=1), 0)
    lo = k.astype(float)
    hi = lo + 1.0
    f_lo = py[np.arange(len(g)), k]
    b = cfg.boresight
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        p, r = _camera_poses(traj, t[0] + mid * cfg.line_period, b)
        f_mid = np.einsum("pj,pj->p", r[:, :, 1], g - p)
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    u = 0.5 * (lo + hi)
    p, r = _camera_poses(traj, t[0] + u * cfg.line_period, b)
    q = np.einsum("pji,pj->pi", r, g - p)
    x = cam.principal_sample + cam.focal_length_px * q[:, 0] / q[:, 2]
    ok = has & (q[:, 2] > 0) & (x >= 0) & (x <= cam.samples_per_line - 1) & (u >= 0) & (u <= cfg.lines_per_flight - 1)
    x = np.where(ok, x, np.nan)
    u = np.where(ok, u, np.nan)
    return np.column_stack([x, u])


def ground_from_pixel(pts, cfg, traj, flight):
    """Ground points seen at raw ``(sample, fractional line)`` coordinates."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    t = cfg.flight_start_time(flight) + pts[:, 1] * cfg.line_period
    pos, rwc = _camera_poses(traj, t, cfg.boresight)
    return _ground_points(cfg.camera, pos, rwc, pts[:, 0])


def overlap_ground_points(cfg, traj, flight_a, flight_b, n_points, rng):
    """Random ground points imaged by both flight lines, with their pixel coordinates."""
    dur = cfg.lines_per_flight * cfg.line_period
    half = 0.5 * max(dur * cfg.speed_mps * max(cfg.speed_factor(flight_a), cfg.speed_factor(flight_b)),
                     cfg.samples_per_line * cfg.ground_gsd) + abs(cfg.lateral_offset(flight_a)) \
        + abs(cfg.lateral_offset(flight_b))
    got_g, got_a, got_b = [], [], []
    total = 0
    for _ in range(200):
        g = np.column_stack([rng.uniform(-half, half, (4 * n_points, 2)), np.zeros(4 * n_points)])
        pa = project_to_flight(g, cfg, traj, flight_a)
        pb = project_to_flight(g, cfg, traj, flight_b)
        ok = np.all(np.isfinite(pa), axis=1) & np.all(np.isfinite(pb), axis=1)
        got_g.append(g[ok])
        got_a.append(pa[ok])
        got_b.append(pb[ok])
        total += int(ok.sum())
        if total >= n_points:
            break
    g = np.concatenate(got_g)[:n_points]
    return g, np.concatenate(got_a)[:n_points], np.concatenate(got_b)[:n_points]


def simulate_tie_points(cfg, traj, n_points, pixel_noise=0.0, outlier_fraction=0.0, seed=0,
                        flight_a=0, flight_b=1):
    """Raw-coordinate tie points between two flight lines.

    Gaussian pixel noise is added to both ends; ``outlier_fraction`` of the
    matches get a uniformly random second point instead. Returns the tie
    points and a boolean array marking the planted inliers.
    """
    rng = np.random.default_rng(seed)
    _, pa, pb = overlap_ground_points(cfg, traj, flight_a, flight_b, n_points, rng)
    n = pa.shape[0]
    if pixel_noise > 0:
        pa = pa + rng.normal(scale=pixel_noise, size=pa.shape)
        pb = pb + rng.normal(scale=pixel_noise, size=pb.shape)
    inlier = np.ones(n, dtype=bool)
    n_out = int(round(outlier_fraction * n))
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        pb[idx, 0] = rng.uniform(0, cfg.samples_per_line - 1, n_out)
        pb[idx, 1] = rng.uniform(0, cfg.lines_per_flight - 1, n_out)
        inlier[idx] = False
    pa[:, 0] = np.clip(pa[:, 0], 0, cfg.samples_per_line - 1)
    pb[:, 0] = np.clip(pb[:, 0], 0, cfg.samples_per_line - 1)
    pa[:, 1] = np.clip(pa[:, 1], 0, cfg.lines_per_flight - 1)
    pb[:, 1] = np.clip(pb[:, 1], 0, cfg.lines_per_flight - 1)
    return TiePointSet(pa, pb, np.zeros(n), (f"flight{flight_a}", f"flight{flight_b}")), inlier


def tie_point_errors(ties, cfg, traj, flight_a, flight_b, offsets_a=None, offsets_b=None):
    """Distance (px) between each ``pt2`` and where ``pt1``'s ground point really appears.

    Coordinates may be rectified; ``offsets_*`` are the per-line
    rectification offsets of each chunk. Matches whose ground point is not
    imaged by ``flight_b`` get ``inf``.
    """
    p1 = np.array(ties.pt1, dtype=float)
    lines_a = np.arange(cfg.lines_per_flight, dtype=float)
    if offsets_a is not None:
        p1[:, 0] -= np.interp(p1[:, 1], lines_a, offsets_a)
    g = ground_from_pixel(p1, cfg, traj, flight_a)
    pb = project_to_flight(g, cfg, traj, flight_b)
    if offsets_b is not None:
        pb[:, 0] += np.interp(pb[:, 1], lines_a, offsets_b)
    err = np.linalg.norm(pb - ties.pt2, axis=1)
    return np.where(np.isfinite(err), err, np.inf)


def outlier_pairs(ties, fraction, rng, width, height):
    """Copy of ``ties`` with ``fraction`` of second points replaced at random."""
    pt2 = ties.pt2.copy()
    n_out = int(round(fraction * len(ties)))
    idx = rng.choice(len(ties), size=n_out, replace=False)
    pt2[idx] = np.column_stack([rng.uniform(0, width - 1, n_out), rng.uniform(0, height - 1, n_out)])
    flags = np.ones(len(ties), dtype=bool)
    flags[idx] = False
    return TiePointSet(ties.pt1, pt2, ties.distance, ties.chunk_ids), flags
