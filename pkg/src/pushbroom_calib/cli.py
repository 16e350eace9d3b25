"""Command-line pipeline: ``synth -> timesync -> rectify -> match -> calibrate``.

All commands operate on one dataset directory described by ``manifest.txt``
(flat ``key = value`` text). Exit codes: 0 ok, 2 usage or configuration
error, 3 low-confidence time sync, 4 too few matches, 5 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boresight import build_epipolar_pairs, calibrate, format_report
from .core.camera import CameraModel
from .core.io import read_cube, read_trajectory, set_trajectory_clock_offset, write_cube, write_trajectory
from .core.rotation import AxisAngle
from .exceptions import ConfigError, FilterFailureError, NumericalError, PushbroomError
from .features import TiePointSet, match_images
from .filter import DEFAULT_THRESHOLD, ransac_filter
from .rectify import DEFAULT_DETREND_WINDOW, LineRectifier, accumulate_shifts, apply_rectification
from .shift_model import ShiftSeries
from .synth import SimConfig, simulate, tie_point_errors
from .timesync import synchronize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_LOW_CONFIDENCE = 3
EXIT_FEW_MATCHES = 4
EXIT_SOLVER = 5

MANIFEST = "manifest.txt"
NAV_TRAJECTORY = "trajectory.csv"
TRUE_TRAJECTORY = "truth/trajectory_true.csv"
QUANTILES = (5, 25, 75, 95)


class UsageError(Exception):
    pass


# ------------------------------------------------------------- manifest


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise UsageError(f"{path} not found; run 'synth' or write a manifest")
    out = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}: malformed line {raw!r}")
        out[key.strip()] = value.strip()
    for key in ("flights", "focal_length_px", "samples_per_line"):
        if key not in out:
            raise UsageError(f"{path}: missing key '{key}'")
    return out


def write_manifest(directory, entries):
    text = "# dataset manifest\n" + "".join(f"{k} = {v}\n" for k, v in entries)
    (Path(directory) / MANIFEST).write_text(text)


def _floats(value):
    return [float(v) for v in value.split()]


def _camera(manifest):
    principal = manifest.get("principal_sample")
    return CameraModel(
        float(manifest["focal_length_px"]),
        int(manifest["samples_per_line"]),
        None if principal is None else float(principal),
    )


def _headings(manifest):
    n = int(manifest["flights"])
    return _floats(manifest.get("headings_deg", " ".join(["0"] * n)))


def _has_truth(manifest):
    return "boresight_deg" in manifest


# ----------------------------------------------------------- file names


def _flight_cube(d, i):
    return Path(d) / f"flight{i}.hdr"


def _rectified_cube(d, i):
    return Path(d) / "rectified" / f"flight{i}.hdr"


def _offsets_file(d, i):
    return Path(d) / "rectified" / f"flight{i}_offsets.csv"


def _shifts_file(d, i, method):
    return Path(d) / "shifts" / f"flight{i}_{method}.csv"


def _true_shifts_file(d, i):
    return Path(d) / "truth" / f"shifts_flight{i}.csv"


def _ties_file(d, a, b, pyramid="anisotropic"):
    folder = "ties" if pyramid == "anisotropic" else f"ties_{pyramid}"
    return Path(d) / folder / f"flight{a}_flight{b}.csv"


def _write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path.read_text()


def write_offsets(path, offsets):
    _write_table(path, ["line_index", "offset_px"], [[i, repr(float(v))] for i, v in enumerate(offsets)])


def read_offsets(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["offset_px"]) for r in rows])


# ------------------------------------------------------------- commands


def cmd_synth(args):
    try:
        cfg = SimConfig.from_file(args.config)
    except FileNotFoundError:
        raise UsageError(f"config file {args.config} not found")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate(cfg)
    (out / "config.cfg").write_text(cfg.to_ini())
    write_trajectory(out / NAV_TRAJECTORY, data.nav_trajectory)
    write_trajectory(out / TRUE_TRAJECTORY, data.true_trajectory)
    entries = [
        ("config", "config.cfg"),
        ("flights", cfg.n_flights),
        ("headings_deg", " ".join(repr(h) for h in cfg.headings_deg)),
        ("focal_length_px", repr(cfg.focal_length_px)),
        ("samples_per_line", cfg.samples_per_line),
        ("line_period_s", repr(float(cfg.line_period))),
        ("nav_trajectory", NAV_TRAJECTORY),
        ("true_trajectory", TRUE_TRAJECTORY),
        ("boresight_deg", " ".join(repr(v) for v in cfg.boresight_deg)),
        ("time_offset_lines", repr(cfg.time_offset_lines)),
        ("time_offset_s", repr(float(cfg.time_offset_s))),
    ]
    for fl in data.flights:
        write_cube(_flight_cube(out, fl.index), fl.cube)
        fl.true_shifts.to_csv(_true_shifts_file(out, fl.index))
        entries.append((f"flight{fl.index}.cube", _flight_cube(out, fl.index).name))
        entries.append((f"flight{fl.index}.true_shifts", f"truth/shifts_flight{fl.index}.csv"))
    write_manifest(out, entries)
    print(f"wrote {cfg.n_flights} flight lines x {cfg.lines_per_flight} lines to {out}")
    return EXIT_OK


def _flight_shifts(d, i, method, threads):
    """Shift series of raw flight ``i``, estimated once and cached on disk."""
    path = _shifts_file(d, i, method)
    if path.exists():
        return ShiftSeries.from_csv(path)
    rect = LineRectifier(method=method, n_jobs=threads).fit(read_cube(_flight_cube(d, i)))
    rect.shifts_.to_csv(path)
    return rect.shifts_


def error_row(errors):
    e = np.abs(np.asarray(errors, dtype=float))
    q = np.percentile(e, QUANTILES)
    return [e.size, f"{np.sqrt(np.mean(e**2)):.4f}", f"{np.median(e):.4f}"] + [f"{v:.4f}" for v in q]


def cmd_rectify(args):
    d = Path(args.data)
    manifest = read_manifest(d)
    flights = _flight_list(manifest, args.flights)
    rows = []
    all_err = []
    for i in flights:
        cube = read_cube(_flight_cube(d, i))
        shifts = _flight_shifts(d, i, args.method, args.threads)
        rmap = accumulate_shifts(shifts, args.detrend_window)
        write_cube(_rectified_cube(d, i), apply_rectification(cube, rmap))
        write_offsets(_offsets_file(d, i), rmap.per_line_offset)
        truth = _true_shifts_file(d, i)
        if truth.exists():
            err = shifts.dx - ShiftSeries.from_csv(truth).dx
            all_err.append(err)
            rows.append([f"flight{i}", args.method] + error_row(err))
    if rows:
        if len(rows) > 1:
            rows.append(["all", args.method] + error_row(np.concatenate(all_err)))
        header = ["flight", "method", "pairs", "rmse_px", "median_px"] + [f"q{q:02d}_px" for q in QUANTILES]
        print(_write_table(d / f"rectify_errors_{args.method}.csv", header, rows), end="")
    print(f"rectified flights {' '.join(str(i) for i in flights)} with method {args.method}")
    return EXIT_OK


def _flight_list(manifest, requested):
    n = int(manifest["flights"])
    flights = list(range(n)) if not requested else list(requested)
    for i in flights:
        if not 0 <= i < n:
            raise UsageError(f"flight {i} not in dataset (0..{n - 1})")
    return flights


def cmd_timesync(args):
    d = Path(args.data)
    manifest = read_manifest(d)
    (i,) = _flight_list(manifest, [args.flight])
    cam = _camera(manifest)
    traj = read_trajectory(d / manifest.get("nav_trajectory", NAV_TRAJECTORY))
    cube = read_cube(_flight_cube(d, i))
    shifts = _flight_shifts(d, i, args.method, args.threads)
    est, corrected = synchronize(traj, cube.line_times, shifts, cam, args.search)
    print(f"offset_lines = {est.offset_lines:.4f}")
    print(f"offset_seconds = {est.offset_seconds:.6f}")
    print(f"peak_correlation = {est.peak_correlation:.4f}")
    print(f"low_confidence = {str(est.low_confidence).lower()}")
    if "time_offset_lines" in manifest:
        print(f"planted_offset_lines = {float(manifest['time_offset_lines']):.4f}")
    if est.low_confidence:
        print("warning: correlation peak below 0.2, trajectory left unchanged", file=sys.stderr)
        return EXIT_LOW_CONFIDENCE
    if args.apply:
        set_trajectory_clock_offset(d / manifest.get("nav_trajectory", NAV_TRAJECTORY), corrected.clock_offset)
        print(f"clock_offset_s = {corrected.clock_offset:.6f} written")
    return EXIT_OK


def quarter_turns(heading_a, heading_b):
    """Multiple of 90 degrees closest to the heading change from chunk a to chunk b."""
    return int(np.round(((heading_b - heading_a) % 360.0) / 90.0)) % 4


def _chunk(d, i):
    rect = _rectified_cube(d, i)
    if rect.exists():
        return read_cube(rect), read_offsets(_offsets_file(d, i))
    return read_cube(_flight_cube(d, i)), None


def cmd_match(args):
    d = Path(args.data)
    manifest = read_manifest(d)
    a, b = _flight_list(manifest, args.flights)
    if a == b:
        raise UsageError("match needs two different flights")
    headings = _headings(manifest)
    cube_a, off_a = _chunk(d, a)
    cube_b, off_b = _chunk(d, b)
    y_oct = 1 if args.pyramid == "isotropic" else args.y_octaves
    ties, n_a, n_b = match_images(
        cube_a.panchromatic(), cube_b.panchromatic(), y_octaves=y_oct,
        quarter_turns=quarter_turns(headings[a], headings[b]), ratio_threshold=args.ratio,
    )
    ties = TiePointSet(ties.pt1, ties.pt2, ties.distance, (f"flight{a}", f"flight{b}"))
    header = ["pyramid", "keypoints_a", "keypoints_b", "matches", "inliers"]
    row = [args.pyramid, n_a, n_b, len(ties)]
    if len(ties) < 4:
        ties.to_csv(_ties_file(d, a, b, args.pyramid))
        row.append(0)
        print(_write_table(d / f"match_summary_{args.pyramid}.csv", header, [row]), end="")
        print(f"error: only {len(ties)} matches, at least 4 needed", file=sys.stderr)
        return EXIT_FEW_MATCHES
    try:
        filtered = ransac_filter(ties, args.threshold, max_iters=args.max_iters, seed=args.seed)
    except FilterFailureError as exc:
        ties.to_csv(_ties_file(d, a, b, args.pyramid))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FEW_MATCHES
    filtered.to_csv(_ties_file(d, a, b, args.pyramid))
    inl = filtered.inlier_flags.astype(bool)
    row.append(int(inl.sum()))
    if _has_truth(manifest):
        cfg = SimConfig.from_file(d / manifest["config"])
        truth = read_trajectory(d / manifest["true_trajectory"])
        err = tie_point_errors(ties, cfg, truth, a, b, off_a, off_b)
        ok = err <= args.truth_tolerance
        header += ["match_accuracy", "inlier_accuracy"]
        row += [f"{ok.mean():.4f}", f"{ok[inl].mean():.4f}" if inl.any() else "nan"]
    print(_write_table(d / f"match_summary_{args.pyramid}.csv", header, [row]), end="")
    return EXIT_OK


def cmd_calibrate(args):
    d = Path(args.data)
    manifest = read_manifest(d)
    cam = _camera(manifest)
    traj = read_trajectory(d / manifest.get("nav_trajectory", NAV_TRAJECTORY))
    tie_files = sorted((d / "ties").glob("flight*_flight*.csv")) if not args.ties else [Path(p) for p in args.ties]
    if not tie_files:
        raise UsageError("no tie point files; run 'match' first")
    pairs = None
    for path in tie_files:
        ties = TiePointSet.from_csv(path)
        a, b = (int(c.removeprefix("flight")) for c in ties.chunk_ids)
        if np.any(ties.inlier_flags >= 0):
            ties = ties.inliers()
        cube_a, off_a = _chunk(d, a)
        cube_b, off_b = _chunk(d, b)
        p = build_epipolar_pairs(ties, cube_a.line_times, cube_b.line_times, traj, cam, off_a, off_b)
        pairs = p if pairs is None else pairs.concat(p)
    reps = args.repetitions if len(pairs) >= args.sample_size else 0
    try:
        sol = calibrate(pairs, args.kernel, sample_size=args.sample_size, repetitions=reps, seed=args.seed,
                        n_jobs=args.threads)
    except (NumericalError, ValueError) as exc:
        print(f"error: boresight solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    truth = AxisAngle(np.radians(_floats(manifest["boresight_deg"]))) if _has_truth(manifest) else None
    report = format_report(sol, truth)
    if args.repetitions == 0:
        report += "bootstrap = skipped (0 repetitions requested)\n"
    elif reps == 0:
        report += f"bootstrap = skipped ({len(pairs)} pairs < sample size {args.sample_size})\n"
    path = d / f"calibration_{args.kernel}.txt"
    path.write_text(report)
    print(report, end="")
    if not sol.converged:
        print("warning: boresight solver stopped at the iteration cap", file=sys.stderr)
    return EXIT_OK


def cmd_bench_patchwidth(args):
    from .bench import format_sweep, patch_width_sweep

    rows = patch_width_sweep(n_trials=args.trials, n_patches=args.patches, noise=args.noise, seed=args.seed)
    text = format_sweep(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_bench_recovery(args):
    from .bench import shift_recovery_benchmark

    res = shift_recovery_benchmark(n_shifts=args.shifts, n_pairs=args.pairs, seed=args.seed)
    header = ["method", "pairs", "rmse_px", "median_px"] + [f"q{q:02d}_px" for q in QUANTILES]
    rows = [["bayes"] + error_row(res.bayes_errors), ["correlation"] + error_row(res.correlation_errors)]
    text = _write_table(args.out, header, rows) if args.out else None
    if text is None:
        text = ",".join(header) + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="pushbroom-calib", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=1, help="cap on worker processes (default 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("rectify", help="estimate line shifts and resample")
    s.add_argument("--data", required=True)
    s.add_argument("--method", choices=("bayes", "correlation"), default="bayes")
    s.add_argument("--flights", type=int, nargs="*")
    s.add_argument("--detrend-window", type=int, default=DEFAULT_DETREND_WINDOW)
    s.set_defaults(func=cmd_rectify)

    s = sub.add_parser("timesync", help="estimate the camera/trajectory clock offset")
    s.add_argument("--data", required=True)
    s.add_argument("--flight", type=int, default=0)
    s.add_argument("--method", choices=("bayes", "correlation"), default="bayes")
    s.add_argument("--search", type=int, default=500)
    s.add_argument("--apply", action="store_true", help="write the offset into the trajectory file")
    s.set_defaults(func=cmd_timesync)

    s = sub.add_parser("match", help="tie points between two flight lines")
    s.add_argument("--data", required=True)
    s.add_argument("--flights", type=int, nargs=2, default=[0, 1])
    s.add_argument("--pyramid", choices=("anisotropic", "isotropic"), default="anisotropic")
    s.add_argument("--y-octaves", type=int, default=4)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.add_argument("--max-iters", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--truth-tolerance", type=float, default=3.0)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("calibrate", help="boresight solve and bootstrap")
    s.add_argument("--data", required=True)
    s.add_argument("--ties", nargs="*")
    s.add_argument("--kernel", choices=("huber", "l2"), default="huber")
    s.add_argument("--sample-size", type=int, default=500)
    s.add_argument("--repetitions", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("bench", help="simulated-line benchmarks")
    bsub = s.add_subparsers(dest="bench", required=True)
    b = bsub.add_parser("patchwidth", help="error versus patch width")
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--patches", type=int, default=100)
    b.add_argument("--noise", type=float, default=0.03)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_patchwidth)
    b = bsub.add_parser("recovery", help="Bayesian vs correlation shift recovery")
    b.add_argument("--shifts", type=int, default=10)
    b.add_argument("--pairs", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_recovery)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config field '{exc.field}': {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PushbroomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
