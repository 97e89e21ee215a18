import numpy as np
import pytest

from bladecodec.segpost import (
    HORIZONTAL,
    VERTICAL,
    AcceptanceCurve,
    acceptance_curve,
    curve_auc,
    ensemble_predict,
    estimate_orientation,
    fill_holes,
    forest_fit,
    neighbor_offsets,
    pixel_features,
)


def striped_image(size=32, axis=1):
    img = np.zeros((3, size, size), dtype=np.uint8)
    if axis == 1:
        img[:, :, ::2] = 255  # vertical stripes, strong x-gradient
    else:
        img[:, ::2, :] = 255
    return img


def test_orientation_vertical_stripes():
    assert estimate_orientation(striped_image(axis=1)) == VERTICAL


def test_orientation_horizontal_stripes():
    assert estimate_orientation(striped_image(axis=0)) == HORIZONTAL


def test_orientation_tie_is_horizontal():
    flat = np.full((3, 16, 16), 128, dtype=np.uint8)
    assert estimate_orientation(flat) == HORIZONTAL


def test_fill_no_holes_unchanged():
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[4:8, :] = 1  # clean band touching left and right borders
    out = fill_holes(mask, HORIZONTAL)
    assert np.array_equal(out, mask)


def test_fill_donut():
    mask = np.zeros((9, 9), dtype=np.uint8)
    mask[2:7, 2:7] = 1
    mask[4, 4] = 0
    out = fill_holes(mask, HORIZONTAL)
    assert out[4, 4] == 1
    expected = mask.copy()
    expected[4, 4] = 1
    assert np.array_equal(out, expected)


def test_fill_border_notch():
    # Horizontal band over rows 0..5 touching both side borders, with a
    # bite open to the top border inside the band's row span.  The bite is
    # enclosed by blade and border, so it must fill; the background below
    # the band must survive.
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[0:6, :] = 1
    mask[0:3, 5:7] = 0
    out = fill_holes(mask, HORIZONTAL)
    expected = np.zeros((12, 12), dtype=np.uint8)
    expected[0:6, :] = 1
    assert np.array_equal(out, expected)


def test_fill_connects_ragged_borders():
    # Blade rows 3..8 at the left border with a gap at rows 5..6: the
    # border run is made contiguous before flood filling.
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[3:9, :] = 1
    mask[5:7, 0] = 0
    out = fill_holes(mask, HORIZONTAL)
    assert out[5, 0] == 1 and out[6, 0] == 1


def test_fill_vertical_mirrors_horizontal():
    mask = np.zeros((10, 14), dtype=np.uint8)
    mask[:, 4:9] = 1
    mask[3:5, 6] = 0  # interior hole
    out = fill_holes(mask, VERTICAL)
    assert out[3, 6] == 1 and out[4, 6] == 1


def test_fill_idempotent_and_monotone_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        h = int(rng.integers(4, 24))
        w = int(rng.integers(4, 24))
        mask = (rng.random((h, w)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        orientation = HORIZONTAL if rng.random() < 0.5 else VERTICAL
        once = fill_holes(mask, orientation)
        assert np.all(once >= mask)  # only 0 -> 1 flips
        twice = fill_holes(once, orientation)
        assert np.array_equal(once, twice)


def test_fill_empty_mask_unchanged():
    mask = np.zeros((8, 8), dtype=np.uint8)
    assert np.array_equal(fill_holes(mask, HORIZONTAL), mask)


# ---------------------------------------------------------------------------
# random forest


def two_tone_scene(rng, size=24, blade_color=(200, 40, 40), bg_color=(30, 90, 170)):
    mask = np.zeros((size, size), dtype=np.uint8)
    r0 = size // 3
    mask[r0:2 * r0, :] = 1
    img = np.empty((3, size, size), dtype=np.uint8)
    for c in range(3):
        img[c] = np.where(mask == 1, blade_color[c], bg_color[c])
    noise = rng.integers(-10, 11, size=img.shape)
    img = np.clip(img.astype(int) + noise, 0, 255).astype(np.uint8)
    return img, mask


def test_forest_separates_two_tone_scene():
    rng = np.random.default_rng(1)
    imgs, masks = [], []
    for _ in range(3):
        img, mask = two_tone_scene(rng)
        imgs.append(img)
        masks.append(mask)
    forest = forest_fit(imgs, masks, neigh_spec=(1, 1), seed=0)
    probs = forest.predict_proba(imgs[0])
    pred = (probs > 0.5).astype(np.uint8)
    assert (pred == masks[0]).mean() > 0.99


def test_forest_zero_neighbors_uses_center_only():
    img = np.zeros((3, 5, 5), dtype=np.uint8)
    feats = pixel_features(img, 0, 1)
    assert feats.shape == (25, 3)
    assert neighbor_offsets(0, 3) == [(0, 0)]
    assert len(neighbor_offsets(2, 1)) == 9


def test_forest_deterministic_given_seed():
    rng = np.random.default_rng(2)
    img, mask = two_tone_scene(rng)
    a = forest_fit([img], [mask], seed=7)
    b = forest_fit([img], [mask], seed=7)
    pa = a.predict_proba(img)
    pb = b.predict_proba(img)
    assert np.array_equal(pa, pb)


def test_forest_cross_seed_output_deviation_small():
    rng = np.random.default_rng(3)
    imgs, masks = [], []
    for _ in range(3):
        img, mask = two_tone_scene(rng)
        imgs.append(img)
        masks.append(mask)
    probs = []
    for seed in range(4):
        forest = forest_fit(imgs, masks, neigh_spec=(1, 1), seed=seed)
        probs.append(forest.predict_proba(imgs[0]))
    for i in range(1, 4):
        assert np.abs(probs[i] - probs[0]).mean() <= 0.01


def test_ensemble_arithmetic():
    rng = np.random.default_rng(4)
    img, mask = two_tone_scene(rng)
    forest = forest_fit([img], [mask], seed=0)

    class ConstantForest:
        def predict_proba(self, image):
            return np.zeros(image.shape[1:], dtype=np.float64)

    bu = np.full(img.shape[1:], 0.8)
    out = ensemble_predict(ConstantForest(), img, bu, tau_rf=0.37)
    assert np.all(out == 1)  # (0 + 0.8) / 2 = 0.4 > 0.37
    out = ensemble_predict(ConstantForest(), img, bu, tau_rf=0.41)
    assert np.all(out == 0)


def test_ensemble_all_confident():
    class OnesForest:
        def predict_proba(self, image):
            return np.ones(image.shape[1:], dtype=np.float64)

    img = np.zeros((3, 6, 6), dtype=np.uint8)
    out = ensemble_predict(OnesForest(), img, np.ones((6, 6)))
    assert np.all(out == 1)


def test_ensemble_unanimous_extremes_survive_any_threshold():
    class HalfForest:
        def predict_proba(self, image):
            h, w = image.shape[1:]
            out = np.zeros((h, w))
            out[:, : w // 2] = 1.0
            return out

    img = np.zeros((3, 4, 4), dtype=np.uint8)
    bu = HalfForest().predict_proba(img)
    for tau in (0.2, 0.5, 0.8):
        out = ensemble_predict(HalfForest(), img, bu, tau_rf=tau)
        assert np.array_equal(out, bu.astype(np.uint8))


def test_ensemble_symmetric_in_its_two_maps():
    rng = np.random.default_rng(5)
    img, mask = two_tone_scene(rng)
    forest = forest_fit([img], [mask], seed=1)
    p_rf = forest.predict_proba(img)
    bu = rng.random(img.shape[1:])

    class FixedForest:
        def __init__(self, p):
            self.p = p

        def predict_proba(self, image):
            return self.p

    a = ensemble_predict(FixedForest(p_rf), img, bu)
    b = ensemble_predict(FixedForest(bu), img, p_rf)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# acceptance-ratio curves


def test_curve_single_perfect_instance():
    curve = acceptance_curve([1.0], grid_size=100)
    assert np.all(curve.ratios[curve.taus < 1.0] == 1.0)
    assert abs(curve_auc(curve) - 1.0) <= 1.0 / 100


def test_curve_two_values_auc():
    curve = acceptance_curve([0.5, 1.0], grid_size=1000)
    assert abs(curve_auc(curve) - 0.75) <= 1.0 / 1000


def test_curve_nonincreasing_and_auc_equals_mean():
    rng = np.random.default_rng(6)
    for _ in range(5):
        sims = rng.random(10_000)
        grid = 1000
        curve = acceptance_curve(sims, grid_size=grid)
        assert np.all(np.diff(curve.ratios) <= 1e-15)
        assert abs(curve_auc(curve) - sims.mean()) <= 1.0 / grid


def test_curve_r_at_zero_counts_strictly_positive():
    curve = acceptance_curve([0.0, 0.2, 0.9], grid_size=10)
    assert curve.ratios[0] == pytest.approx(2.0 / 3.0)


def test_curve_empty_rejected():
    with pytest.raises(ValueError):
        acceptance_curve([], grid_size=10)
