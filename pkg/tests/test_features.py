import numpy as np
import pytest
from scipy import ndimage

from pushbroom_calib.features import (
    DEFAULT_RATIO,
    DESCRIPTOR_BITS,
    TiePointSet,
    build_anisotropic_pyramid,
    detect_and_describe,
    hamming_distances,
    match,
    match_images,
)
from pushbroom_calib.synth import gp_sample


@pytest.fixture(scope="module")
def image():
    return gp_sample(256, 4.0, np.random.default_rng(1))


def _stretch_y(img, s):
    ys = np.arange(int(img.shape[0] * s)) / s
    grid = np.meshgrid(ys, np.arange(img.shape[1]), indexing="ij")
    return ndimage.map_coordinates(img, grid, order=3, mode="nearest")


# --------------------------------------------------------------- pyramid


def test_level_count_and_scales(image):
    levels = build_anisotropic_pyramid(image, y_octaves=3, x_octaves=2)
    assert len(levels) == 6
    scales = {(round(l.x_scale, 9), round(l.y_scale, 9)) for l in levels}
    r = DEFAULT_RATIO
    assert scales == {(round(r**i, 9), round(r**j, 9)) for i in range(2) for j in range(3)}


def test_default_x_octave_is_single(image):
    levels = build_anisotropic_pyramid(image, y_octaves=4)
    assert [l.x_scale for l in levels] == [1.0] * 4
    np.testing.assert_allclose([l.y_scale for l in levels], DEFAULT_RATIO ** np.arange(4))


def test_single_level_is_blurred_base(image):
    (level,) = build_anisotropic_pyramid(image, y_octaves=1, x_octaves=1)
    assert level.scales == (1.0, 1.0)
    np.testing.assert_allclose(level.image, ndimage.gaussian_filter(image, 1.0, mode="nearest"), atol=1e-12)


def test_small_image_truncates_octaves():
    img = gp_sample(64, 4.0, np.random.default_rng(0))
    levels = build_anisotropic_pyramid(img, y_octaves=6)
    assert 1 <= len(levels) < 6


def test_too_small_image_rejected():
    with pytest.raises(ValueError):
        build_anisotropic_pyramid(np.zeros((32, 128)))


def test_y_level_commutes_with_squash(image):
    level = build_anisotropic_pyramid(image, y_octaves=3)[2]
    squashed = build_anisotropic_pyramid(image[::2], y_octaves=1)[0]
    n = min(level.image.shape[0], squashed.image.shape[0])
    diff = level.image[8 : n - 8] - squashed.image[8 : n - 8]
    assert np.abs(diff).max() < 0.02 * np.ptp(image)


# ----------------------------------------------------------- detection


def test_constant_image_has_no_keypoints():
    assert detect_and_describe(build_anisotropic_pyramid(np.full((96, 96), 3.0))) == []


@pytest.mark.parametrize("sigma", [2.0, 4.0, 8.0])
def test_single_blob_gives_one_keypoint(sigma):
    y, x = np.mgrid[0:128, 0:128]
    img = np.exp(-((x - 70.3) ** 2 + (y - 50.6) ** 2) / (2 * sigma**2))
    kps = detect_and_describe(build_anisotropic_pyramid(img, y_octaves=4))
    assert len(kps) == 1
    assert abs(kps[0].x - 70.3) < 1 and abs(kps[0].y - 50.6) < 1
    assert kps[0].descriptor.size * 8 == DESCRIPTOR_BITS


def test_detection_is_deterministic(image):
    a = detect_and_describe(build_anisotropic_pyramid(image))
    b = detect_and_describe(build_anisotropic_pyramid(image.copy()))
    assert len(a) == len(b) > 0
    for p, q in zip(a, b):
        assert (p.x, p.y, p.response, p.level) == (q.x, q.y, q.response, q.level)
        assert np.array_equal(p.descriptor, q.descriptor)


def test_keypoints_avoid_invalid_regions(image):
    img = image.copy()
    img[:, 100:140] = np.nan
    kps = detect_and_describe(build_anisotropic_pyramid(img))
    assert kps
    xs = np.array([k.x for k in kps])
    assert not np.any((xs >= 100) & (xs < 140))


def test_keypoints_inside_image(image):
    kps = detect_and_describe(build_anisotropic_pyramid(image))
    assert all(0 <= k.x <= image.shape[1] - 1 and 0 <= k.y <= image.shape[0] - 1 for k in kps)


def test_max_keypoints_keeps_strongest(image):
    pyr = build_anisotropic_pyramid(image)
    full = detect_and_describe(pyr)
    top = detect_and_describe(pyr, max_keypoints=20)
    assert len(top) == 20
    assert min(k.response for k in top) >= sorted((k.response for k in full), reverse=True)[19]


# -------------------------------------------------------------- matching


def test_self_match_is_identity(image):
    kps = detect_and_describe(build_anisotropic_pyramid(image))
    ties = match(kps, kps)
    assert len(ties) == len(kps)
    np.testing.assert_array_equal(ties.pt1, ties.pt2)
    assert np.all(ties.distance == 0)


def test_hamming_distance_properties(image):
    kps = detect_and_describe(build_anisotropic_pyramid(image))[:30]
    d = hamming_distances(kps, kps)
    assert np.all(np.diag(d) == 0)
    assert np.array_equal(d, d.T)
    assert d.max() <= DESCRIPTOR_BITS


def test_disjoint_noise_images_rarely_match():
    rng = np.random.default_rng(0)
    ties, na, nb = match_images(rng.normal(size=(256, 256)), rng.normal(size=(256, 256)))
    assert len(ties) < 0.01 * min(na, nb)


def test_empty_sets_give_empty_match():
    ties = match([], [])
    assert len(ties) == 0


def test_matching_is_deterministic(image):
    b = _stretch_y(image, 2.0)
    t1, _, _ = match_images(image, b)
    t2, _, _ = match_images(image, b)
    np.testing.assert_array_equal(t1.pt1, t2.pt1)
    np.testing.assert_array_equal(t1.pt2, t2.pt2)


@pytest.mark.parametrize("s", [1.5, 2.0, 3.0])
def test_anisotropic_pyramid_doubles_matches_under_y_stretch(s):
    img = gp_sample(384, 4.0, np.random.default_rng(3))
    stretched = _stretch_y(img, s)
    iso, _, _ = match_images(img, stretched, y_octaves=1)
    aniso, _, _ = match_images(img, stretched, y_octaves=4)
    assert len(aniso) >= 2 * len(iso)


def test_anisotropic_matches_are_more_correct(image):
    stretched = _stretch_y(image, 2.0)

    def correct_fraction(ties):
        expected = np.column_stack([ties.pt1[:, 0], 2.0 * ties.pt1[:, 1]])
        return np.mean(np.linalg.norm(ties.pt2 - expected, axis=1) < 3.0) if len(ties) else 0.0

    iso, _, _ = match_images(image, stretched, y_octaves=1)
    aniso, _, _ = match_images(image, stretched, y_octaves=4)
    assert correct_fraction(aniso) > correct_fraction(iso)


def test_quarter_turn_descriptors_match_rotated_image(image):
    # a chunk flown a quarter turn further reads as the image rotated clockwise
    rotated = np.rot90(image, -1)
    plain, _, _ = match_images(image, rotated, y_octaves=1)
    turned, _, _ = match_images(image, rotated, y_octaves=1, quarter_turns=1)
    assert len(turned) > 5 * max(len(plain), 1)


# ------------------------------------------------------------ tie points


def test_tie_point_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ties = TiePointSet(rng.uniform(0, 100, (5, 2)), rng.uniform(0, 100, (5, 2)), np.arange(5.0), ("f0", "f1"),
                       [True, False, True, True, False])
    path = tmp_path / "ties.csv"
    ties.to_csv(path)
    back = TiePointSet.from_csv(path)
    np.testing.assert_array_equal(back.pt1, ties.pt1)
    np.testing.assert_array_equal(back.pt2, ties.pt2)
    np.testing.assert_array_equal(back.inlier_flags, ties.inlier_flags)
    assert back.chunk_ids == ("f0", "f1")
    assert len(back.inliers()) == 3


def test_tie_point_csv_without_flags(tmp_path):
    ties = TiePointSet(np.ones((2, 2)), np.zeros((2, 2)), [1.0, 2.0])
    ties.to_csv(tmp_path / "t.csv")
    assert TiePointSet.from_csv(tmp_path / "t.csv").inlier_flags is None


def test_tie_point_validation():
    with pytest.raises(ValueError):
        TiePointSet(np.ones((3, 2)), np.ones((2, 2)), np.ones(3))
    with pytest.raises(ValueError):
        TiePointSet(np.ones((2, 2)), np.ones((2, 2)), np.ones(2), inlier_flags=[True])


def test_swapped_exchanges_roles():
    ties = TiePointSet([[1, 2]], [[3, 4]], [0.0], ("a", "b"))
    sw = ties.swapped()
    np.testing.assert_array_equal(sw.pt1, [[3, 4]])
    assert sw.chunk_ids == ("b", "a")
