"""Keypoint detection and matching with invariance to along-track stretch.

Platform speed changes stretch push-broom images along the flight
direction only. The scale pyramid therefore explores x and y scale
independently: each level is blurred and downsampled by its own factor per
axis, features are detected on a det-of-Hessian response and described by
binary intensity comparisons sampled in the level's own (anisotropic)
frame, so a y-stretch is absorbed by picking a different level.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .validation import check_int

DESCRIPTOR_BITS = 512
DEFAULT_RATIO = np.sqrt(2.0)
_BASE_SIGMA = 1.0
_HESSIAN_SIGMA = 2.0
_DESCRIPTOR_SIGMA = 1.0
_PATCH_RADIUS = 16
_MIN_LEVEL_SIZE = 2 * _PATCH_RADIUS + 8
_PATTERN_SEED = 20240611


@dataclass(frozen=True, eq=False)
class PyramidLevel:
    image: np.ndarray
    x_scale: float
    y_scale: float
    blur_sigma: float
    valid: np.ndarray = field(repr=False, default=None)

    @property
    def scales(self):
        return (self.x_scale, self.y_scale)


@dataclass(frozen=True, eq=False)
class Keypoint:
    x: float
    y: float
    response: float
    level: tuple
    descriptor: np.ndarray = field(repr=False)

    def bits(self):
        return np.unpackbits(self.descriptor)


def _fill_invalid(image):
    img = np.asarray(image, dtype=float)
    valid = np.isfinite(img)
    if np.all(valid):
        return img, valid
    fill = img[valid].mean() if np.any(valid) else 0.0
    return np.where(valid, img, fill), valid


def build_anisotropic_pyramid(image, y_octaves=4, x_octaves=1, ratio=DEFAULT_RATIO, base_sigma=_BASE_SIGMA):
    """Levels over every ``(x_scale, y_scale) = (ratio**i, ratio**j)``.

    Each level is blurred by ``base_sigma * scale`` per axis in base pixels
    and sampled every ``scale`` pixels, so its content carries a blur of
    about ``base_sigma`` in its own pixels. Levels smaller than the
    descriptor footprint are dropped. NaN pixels are treated as invalid.
    """
    y_octaves = check_int(y_octaves, "y_octaves", minimum=1)
    x_octaves = check_int(x_octaves, "x_octaves", minimum=1)
    if not ratio > 1:
        raise ValueError("ratio must exceed 1")
    img, valid = _fill_invalid(image)
    if img.ndim != 2 or min(img.shape) < 64:
        raise ValueError("image must be 2-D and at least 64x64")
    invalid = (~valid).astype(float)
    levels = []
    for i in range(x_octaves):
        for j in range(y_octaves):
            sx, sy = ratio**i, ratio**j
            ny = int(np.floor((img.shape[0] - 1) / sy)) + 1
            nx = int(np.floor((img.shape[1] - 1) / sx)) + 1
            if min(nx, ny) < _MIN_LEVEL_SIZE:
                continue
            blurred = ndimage.gaussian_filter(img, (base_sigma * sy, base_sigma * sx), mode="nearest")
            rows = np.arange(ny) * sy
            cols = np.arange(nx) * sx
            rr, cc = np.meshgrid(rows, cols, indexing="ij")
            level_img = ndimage.map_coordinates(blurred, [rr, cc], order=1, mode="nearest")
            if np.any(invalid):
                spread = ndimage.gaussian_filter(invalid, (3 * base_sigma * sy, 3 * base_sigma * sx))
                bad = ndimage.map_coordinates(spread, [rr, cc], order=1) > 1e-3
                bad |= ndimage.map_coordinates(invalid, [rr, cc], order=0) > 0
                level_valid = ~bad
            else:
                level_valid = np.ones(level_img.shape, dtype=bool)
            levels.append(PyramidLevel(level_img, sx, sy, base_sigma, level_valid))
    return levels


def _sampling_pattern():
    rng = np.random.default_rng(_PATTERN_SEED)
    pts = rng.normal(scale=_PATCH_RADIUS / 1.5, size=(DESCRIPTOR_BITS, 2, 2))
    return np.clip(pts, -_PATCH_RADIUS, _PATCH_RADIUS)


_PATTERN = _sampling_pattern()


def _rotated_pattern(quarter_turns):
    """Sampling offsets ``(ox, oy)`` rotated by ``quarter_turns * 90`` degrees."""
    pat = _PATTERN.copy()
    for _ in range(int(quarter_turns) % 4):
        pat = np.stack([-pat[..., 1], pat[..., 0]], axis=-1)
    return pat


def _hessian_response(img, sigma=_HESSIAN_SIGMA):
    lxx = ndimage.gaussian_filter(img, sigma, order=(0, 2), mode="nearest")
    lyy = ndimage.gaussian_filter(img, sigma, order=(2, 0), mode="nearest")
    lxy = ndimage.gaussian_filter(img, sigma, order=(1, 1), mode="nearest")
    return sigma**4 * (lxx * lyy - lxy * lxy)


def _is_flat(img, valid):
    """True when the valid pixels vary only at round-off level."""
    vals = img[valid]
    return vals.size == 0 or np.ptp(vals) <= 1e-9 * max(1.0, float(np.abs(vals).max()))


def _peaks(resp, valid, threshold):
    """3x3 local maxima above ``threshold * max`` away from borders/invalid pixels."""
    top = resp[valid].max() if np.any(valid) else 0.0
    if not top > 0:
        return np.empty((0, 2), dtype=int)
    usable = ndimage.binary_erosion(valid, iterations=_PATCH_RADIUS + 2, border_value=0)
    local_max = resp == ndimage.maximum_filter(resp, size=3, mode="nearest")
    ys, xs = np.nonzero(local_max & usable & (resp > threshold * top))
    return np.column_stack([ys, xs])


def _subpixel(resp, ys, xs):
    def offset(m, c, p):
        den = m - 2.0 * c + p
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(den < 0, 0.5 * (m - p) / den, 0.0)
        return np.clip(off, -0.5, 0.5)

    c = resp[ys, xs]
    dy = offset(resp[ys - 1, xs], c, resp[ys + 1, xs])
    dx = offset(resp[ys, xs - 1], c, resp[ys, xs + 1])
    return ys + dy, xs + dx


def _describe(img, ys, xs, pattern):
    """Packed 512-bit descriptors at fractional level coordinates."""
    if ys.size == 0:
        return np.empty((0, DESCRIPTOR_BITS // 8), dtype=np.uint8)
    smooth = ndimage.gaussian_filter(img, _DESCRIPTOR_SIGMA, mode="nearest")
    # pattern[..., 0] is the x offset, pattern[..., 1] the y offset
    py = ys[:, None, None] + pattern[None, :, :, 1]
    px = xs[:, None, None] + pattern[None, :, :, 0]
    vals = ndimage.map_coordinates(smooth, [py.ravel(), px.ravel()], order=1, mode="nearest")
    vals = vals.reshape(ys.size, DESCRIPTOR_BITS, 2)
    return np.packbits(vals[:, :, 0] < vals[:, :, 1], axis=1)


def detect_and_describe(pyramid, threshold=0.001, max_keypoints=5000, quarter_turns=0):
    """Det-of-Hessian keypoints with binary descriptors over all levels.

    Candidates are 3x3 maxima per level. Among levels sharing an x scale, a
    candidate must also beat the neighbouring y-scale levels at the same
    base position, so one structure yields one keypoint at its best-fitting
    level. ``quarter_turns`` rotates the descriptor pattern by multiples of
    90 degrees for chunks flown in different directions. At most
    ``max_keypoints`` strongest keypoints are returned, in a deterministic
    order.
    """
    pattern = _rotated_pattern(quarter_turns)
    images = [_fill_invalid(level.image)[0] for level in pyramid]
    responses = [_hessian_response(img) for img in images]
    dilated = [ndimage.maximum_filter(r, size=3, mode="nearest") for r in responses]
    by_xscale = {}
    for idx, level in enumerate(pyramid):
        by_xscale.setdefault(level.x_scale, []).append(idx)
    cands = []
    for idx, level in enumerate(pyramid):
        resp = responses[idx]
        if _is_flat(images[idx], level.valid):
            continue
        pk = _peaks(resp, level.valid, threshold)
        if pk.size == 0:
            continue
        ys, xs = pk[:, 0], pk[:, 1]
        value = resp[ys, xs]
        keep = np.ones(ys.size, dtype=bool)
        chain = sorted(by_xscale[level.x_scale], key=lambda k: pyramid[k].y_scale)
        pos = chain.index(idx)
        for nb in (chain[pos - 1] if pos > 0 else None, chain[pos + 1] if pos + 1 < len(chain) else None):
            if nb is None:
                continue
            other = pyramid[nb]
            oy = np.rint(ys * level.y_scale / other.y_scale).astype(int)
            ox = np.rint(xs * level.x_scale / other.x_scale).astype(int)
            inside = (oy >= 0) & (oy < other.image.shape[0]) & (ox >= 0) & (ox < other.image.shape[1])
            nbv = np.full(ys.size, -np.inf)
            nbv[inside] = dilated[nb][oy[inside], ox[inside]]
            keep &= value > nbv if nb < idx else value >= nbv
        ys, xs, value = ys[keep], xs[keep], value[keep]
        fy, fx = _subpixel(resp, ys, xs)
        cands.append((idx, fy, fx, value))
    if not cands:
        return []
    lvl = np.concatenate([np.full(c[1].size, c[0]) for c in cands])
    fy = np.concatenate([c[1] for c in cands])
    fx = np.concatenate([c[2] for c in cands])
    val = np.concatenate([c[3] for c in cands])
    order = np.lexsort((fx, fy, lvl, -val))[:max_keypoints]
    keypoints = []
    for idx in np.unique(lvl[order]):
        sel = order[lvl[order] == idx]
        level = pyramid[idx]
        desc = _describe(images[idx], fy[sel], fx[sel], pattern)
        for k, s in enumerate(sel):
            keypoints.append(
                Keypoint(
                    float(fx[s] * level.x_scale),
                    float(fy[s] * level.y_scale),
                    float(val[s]),
                    level.scales,
                    desc[k],
                )
            )
    keypoints.sort(key=lambda kp: (-kp.response, kp.y, kp.x))
    return keypoints


# ------------------------------------------------------------------ matching


@dataclass(frozen=True, eq=False)
class TiePointSet:
    """Correspondences ``pt1[i] <-> pt2[i]`` between two image chunks."""

    pt1: np.ndarray
    pt2: np.ndarray
    distance: np.ndarray
    chunk_ids: tuple = ("a", "b")
    inlier_flags: np.ndarray | None = None

    def __post_init__(self):
        p1 = np.asarray(self.pt1, dtype=float).reshape(-1, 2)
        p2 = np.asarray(self.pt2, dtype=float).reshape(-1, 2)
        d = np.asarray(self.distance, dtype=float).reshape(-1)
        if not (p1.shape == p2.shape and d.size == p1.shape[0]):
            raise ValueError("pt1, pt2 and distance must have matching lengths")
        object.__setattr__(self, "pt1", p1)
        object.__setattr__(self, "pt2", p2)
        object.__setattr__(self, "distance", d)
        object.__setattr__(self, "chunk_ids", tuple(str(c) for c in self.chunk_ids))
        if self.inlier_flags is not None:
            flags = np.asarray(self.inlier_flags, dtype=bool).reshape(-1)
            if flags.size != d.size:
                raise ValueError("one inlier flag per match required")
            object.__setattr__(self, "inlier_flags", flags)

    def __len__(self):
        return self.distance.size

    def with_flags(self, flags):
        return TiePointSet(self.pt1, self.pt2, self.distance, self.chunk_ids, flags)

    def swapped(self):
        return TiePointSet(self.pt2, self.pt1, self.distance, self.chunk_ids[::-1], self.inlier_flags)

    def subset(self, index):
        flags = None if self.inlier_flags is None else self.inlier_flags[index]
        return TiePointSet(self.pt1[index], self.pt2[index], self.distance[index], self.chunk_ids, flags)

    def inliers(self):
        if self.inlier_flags is None:
            return self
        return self.subset(self.inlier_flags)

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            fh.write(f"# chunks = {self.chunk_ids[0]},{self.chunk_ids[1]}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x1", "y1", "x2", "y2", "distance", "inlier_flag"])
            flags = self.inlier_flags
            for i in range(len(self)):
                flag = -1 if flags is None else int(flags[i])
                w.writerow([*(repr(float(v)) for v in (*self.pt1[i], *self.pt2[i], self.distance[i])), flag])

    @classmethod
    def from_csv(cls, path):
        chunk_ids = ("a", "b")
        with Path(path).open(newline="") as fh:
            body = []
            for line in fh:
                if line.startswith("# chunks ="):
                    chunk_ids = tuple(line.split("=", 1)[1].strip().split(","))
                elif not line.startswith("#"):
                    body.append(line)
        rows = list(csv.DictReader(body))
        arr = np.array([[float(r[k]) for k in ("x1", "y1", "x2", "y2", "distance")] for r in rows]).reshape(-1, 5)
        raw = [int(r["inlier_flag"]) for r in rows]
        flags = None if not raw or any(f < 0 for f in raw) else np.array(raw, dtype=bool)
        return cls(arr[:, 0:2], arr[:, 2:4], arr[:, 4], chunk_ids, flags)


def _descriptor_matrix(keypoints):
    if not keypoints:
        return np.empty((0, DESCRIPTOR_BITS), dtype=np.float32)
    bits = np.unpackbits(np.stack([kp.descriptor for kp in keypoints]), axis=1)
    return bits.astype(np.float32) * 2.0 - 1.0


def hamming_distances(set_a, set_b):
    """Pairwise Hamming distances between two keypoint lists."""
    a = _descriptor_matrix(set_a)
    b = _descriptor_matrix(set_b)
    return np.rint(0.5 * (DESCRIPTOR_BITS - a @ b.T)).astype(np.int32)


def match(set_a, set_b, ratio_threshold=0.8, chunk_ids=("a", "b")):
    """Mutual nearest neighbours that also pass the distance ratio test."""
    if not set_a or not set_b:
        return TiePointSet(np.empty((0, 2)), np.empty((0, 2)), np.empty(0), chunk_ids)
    dist = hamming_distances(set_a, set_b)
    best_b = np.argmin(dist, axis=1)
    best_a = np.argmin(dist, axis=0)
    ia = np.arange(len(set_a))
    d1 = dist[ia, best_b]
    if dist.shape[1] > 1:
        d2 = np.partition(dist, 1, axis=1)[:, 1]
    else:
        d2 = np.full(ia.size, DESCRIPTOR_BITS)
    ok = (best_a[best_b] == ia) & (d1 < ratio_threshold * d2)
    sel = ia[ok]
    pt1 = np.array([(set_a[i].x, set_a[i].y) for i in sel]).reshape(-1, 2)
    pt2 = np.array([(set_b[j].x, set_b[j].y) for j in best_b[sel]]).reshape(-1, 2)
    return TiePointSet(pt1, pt2, d1[sel].astype(float), chunk_ids)


def match_images(image_a, image_b, y_octaves=4, x_octaves=1, ratio=DEFAULT_RATIO,
                 ratio_threshold=0.8, quarter_turns=0, max_keypoints=5000, threshold=0.001):
    """Pyramid, detection and matching for two images.

    ``quarter_turns`` rotates the descriptors of ``image_b``. Returns the
    tie points and the two keypoint counts.
    """
    kp_a = detect_and_describe(build_anisotropic_pyramid(image_a, y_octaves, x_octaves, ratio),
                               threshold, max_keypoints)
    kp_b = detect_and_describe(build_anisotropic_pyramid(image_b, y_octaves, x_octaves, ratio),
                               threshold, max_keypoints, quarter_turns)
    return match(kp_a, kp_b, ratio_threshold), len(kp_a), len(kp_b)
