import numpy as np
import pytest

from roofstack.augment import (
    AugmentConfig,
    augment_pipeline,
    blur,
    contact_sheet,
    dihedral,
    elastic_transform,
    gauss_noise,
    grid_distortion,
    mask_jitter,
    optical_distortion,
    random_crop_margin,
    resize_chip,
    rgb_shift,
)
from roofstack.errors import ParameterError
from roofstack.raster import Chip, ImageRGB, extract_chip
from tests.conftest import make_chip, square_building


def tiny_chip():
    rgb = np.arange(1, 7, dtype=np.uint8).reshape(2, 3, 1).repeat(3, axis=2)
    mask = np.array([[255, 0, 255], [0, 255, 0]], dtype=np.uint8)
    return Chip(rgb=rgb, mask=mask, margin=0, building_id="tiny")


def chips_identical(a, b):
    return np.array_equal(a.rgb, b.rgb) and np.array_equal(a.mask, b.mask)


class TestDihedral:
    def test_k0_is_identity(self, chip):
        assert chips_identical(dihedral(chip, 0), chip)

    def test_k1_four_times_is_identity(self, chip):
        out = chip
        for _ in range(4):
            out = dihedral(out, 1)
        assert chips_identical(out, chip)

    def test_hand_computed_rotation(self):
        c = tiny_chip()
        out = dihedral(c, 1)
        # 90 deg counterclockwise: last column becomes first row
        assert np.array_equal(out.rgb[:, :, 0], np.array([[3, 6], [2, 5], [1, 4]]))
        assert np.array_equal(out.mask, np.array([[255, 0], [0, 255], [255, 0]]))

    def test_out_of_range_rejected(self, chip):
        for k in (-1, 8):
            with pytest.raises(ParameterError):
                dihedral(chip, k)

    def test_every_element_has_exact_inverse(self):
        c = make_chip(height=12, width=12, margin=3, seed=5)
        for k in range(8):
            forward = dihedral(c, k)
            inverses = [j for j in range(8) if chips_identical(dihedral(forward, j), c)]
            assert inverses, f"no inverse for k={k}"

    def test_group_closure(self):
        c = make_chip(height=10, width=10, margin=2, seed=6)
        variants = [dihedral(c, k) for k in range(8)]
        for a in range(8):
            for b in range(8):
                composed = dihedral(dihedral(c, a), b)
                assert any(chips_identical(composed, v) for v in variants)


class TestColorTransforms:
    def test_rgb_shift_zero_identity(self, chip):
        assert chips_identical(rgb_shift(chip, (0, 0, 0)), chip)

    def test_rgb_shift_clamps(self):
        rgb = np.array([[[250, 10, 128]]], dtype=np.uint8)
        c = Chip(rgb=rgb, mask=np.array([[255]], dtype=np.uint8), margin=0, building_id="px")
        out = rgb_shift(c, (20, -20, 20))
        assert tuple(out.rgb[0, 0]) == (255, 0, 148)

    def test_rgb_shift_invertible_away_from_clamp(self):
        rng = np.random.default_rng(3)
        rgb = rng.integers(5, 251, size=(20, 20, 3), dtype=np.uint8)
        c = Chip(rgb=rgb, mask=np.zeros((20, 20), dtype=np.uint8), margin=0, building_id="mid")
        out = rgb_shift(rgb_shift(c, (5, 5, 5)), (-5, -5, -5))
        assert np.array_equal(out.rgb, c.rgb)

    def test_blur_constant_image_fixed_point(self):
        rgb = np.full((9, 9, 3), 77, dtype=np.uint8)
        c = Chip(rgb=rgb, mask=np.zeros((9, 9), dtype=np.uint8), margin=0, building_id="flat")
        for mode, arg in (("median", 3), ("box", 3), ("gaussian", 1.2)):
            assert np.array_equal(blur(c, mode, arg).rgb, rgb)

    def test_box_blur_impulse(self):
        rgb = np.zeros((5, 5, 3), dtype=np.uint8)
        rgb[2, 2] = 255
        c = Chip(rgb=rgb, mask=np.zeros((5, 5), dtype=np.uint8), margin=0, building_id="dot")
        out = blur(c, "box", 3)
        assert (out.rgb[1:4, 1:4, 0] == 28).all()  # rint(255 / 9)
        assert out.rgb[0, 0, 0] == 0

    def test_median_removes_isolated_salt(self):
        rgb = np.zeros((9, 9, 3), dtype=np.uint8)
        for y, x in ((2, 2), (5, 7), (8, 0)):
            rgb[y, x] = 255
        c = Chip(rgb=rgb, mask=np.zeros((9, 9), dtype=np.uint8), margin=0, building_id="salt")
        out = blur(c, "median", 3)
        assert (out.rgb == 0).all()

    def test_median_brute_force_oracle(self):
        rng = np.random.default_rng(4)
        rgb = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        c = Chip(rgb=rgb, mask=np.zeros((8, 8), dtype=np.uint8), margin=0, building_id="r")
        out = blur(c, "median", 3)
        padded = np.pad(rgb, ((1, 1), (1, 1), (0, 0)), mode="edge")
        for y in range(8):
            for x in range(8):
                for ch in range(3):
                    window = padded[y : y + 3, x : x + 3, ch]
                    assert out.rgb[y, x, ch] == np.median(window)

    def test_even_kernel_rejected(self, chip):
        with pytest.raises(ParameterError):
            blur(chip, "box", 4)

    def test_gauss_noise_sigma_zero_identity(self, chip):
        assert chips_identical(gauss_noise(chip, 0.0, seed=1), chip)

    def test_gauss_noise_deterministic(self, chip):
        a = gauss_noise(chip, 8.0, seed=99)
        b = gauss_noise(chip, 8.0, seed=99)
        assert chips_identical(a, b)

    def test_gauss_noise_spread(self):
        rgb = np.full((64, 64, 3), 128, dtype=np.uint8)
        c = Chip(rgb=rgb, mask=np.zeros((64, 64), dtype=np.uint8), margin=0, building_id="flat")
        out = gauss_noise(c, 10.0, seed=7)
        std = out.rgb.astype(np.float64).std()
        assert 8.5 <= std <= 11.5

    def test_color_transforms_leave_mask_bit_identical(self, chip):
        for out in (
            rgb_shift(chip, (10, -5, 3)),
            blur(chip, "box", 3),
            blur(chip, "median", 3),
            blur(chip, "gaussian", 1.0),
            gauss_noise(chip, 6.0, seed=2),
        ):
            assert np.array_equal(out.mask, chip.mask)


class TestGeometricTransforms:
    def test_elastic_alpha_zero_identity(self, chip):
        assert chips_identical(elastic_transform(chip, 0.0, 6.0, seed=1), chip)

    def test_elastic_deterministic(self, chip):
        a = elastic_transform(chip, 30.0, 6.0, seed=5)
        b = elastic_transform(chip, 30.0, 6.0, seed=5)
        assert chips_identical(a, b)

    def test_elastic_mass_preserved_on_checkerboard(self):
        yy, xx = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
        board = np.where((yy // 8 + xx // 8) % 2 == 0, 255, 0).astype(np.uint8)
        rgb = board[:, :, None].repeat(3, axis=2)
        c = Chip(rgb=rgb, mask=np.zeros((64, 64), dtype=np.uint8), margin=0, building_id="cb")
        out = elastic_transform(c, 30.0, 6.0, seed=5)
        assert abs(out.rgb.mean() - c.rgb.mean()) <= 0.02 * c.rgb.mean()

    def test_grid_zero_limit_identity(self, chip):
        assert chips_identical(grid_distortion(chip, 5, 0.0, seed=1), chip)

    def test_grid_deterministic(self, chip):
        a = grid_distortion(chip, 5, 0.3, seed=9)
        b = grid_distortion(chip, 5, 0.3, seed=9)
        assert chips_identical(a, b)

    def test_grid_corners_fixed(self):
        c = make_chip(height=33, width=41, margin=5, seed=8)
        out = grid_distortion(c, 4, 0.3, seed=3)
        for y in (0, 32):
            for x in (0, 40):
                assert np.array_equal(out.rgb[y, x], c.rgb[y, x])

    def test_optical_zero_identity(self, chip):
        assert chips_identical(optical_distortion(chip, 0.0), chip)

    def test_optical_center_fixed(self):
        c = make_chip(height=41, width=41, margin=5, seed=10)
        for k in (-0.4, 0.2, 0.6):
            out = optical_distortion(c, k)
            assert np.array_equal(out.rgb[20, 20], c.rgb[20, 20])

    def test_optical_preserves_rotational_symmetry(self):
        n = 101
        yy, xx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        r = np.hypot(yy - 50.0, xx - 50.0)
        rings = (128 + 100 * np.sin(r / 3.0)).round().clip(0, 255).astype(np.uint8)
        rgb = rings[:, :, None].repeat(3, axis=2)
        c = Chip(rgb=rgb, mask=np.zeros((n, n), dtype=np.uint8), margin=0, building_id="rings")
        out = optical_distortion(c, 0.3)
        rotated = np.rot90(out.rgb, 1, axes=(0, 1))
        assert np.abs(out.rgb.astype(int) - rotated.astype(int)).max() <= 1


class TestCropAndResize:
    def _extracted(self):
        rng = np.random.default_rng(14)
        img = ImageRGB(rng.integers(0, 256, size=(400, 400, 3), dtype=np.uint8))
        b = square_building(150, 150, 60, bid="c")
        return img, b, extract_chip(img, b, 100)

    def test_zero_margins_full_resize(self):
        _, _, chip = self._extracted()
        out = random_crop_margin(chip, (0, 0, 0, 0), 64)
        assert chips_identical(out, resize_chip(chip, 64))

    def test_full_margins_reach_bbox(self):
        img, b, chip = self._extracted()
        out = random_crop_margin(chip, (100, 100, 100, 100), 64)
        bbox_chip = extract_chip(img, b, 0)
        assert np.array_equal(out.rgb, resize_chip(bbox_chip, 64).rgb)

    def test_inference_crop_50(self):
        img, b, chip = self._extracted()
        out = random_crop_margin(chip, (50, 50, 50, 50), 64)
        half_chip = extract_chip(img, b, 50)
        assert np.array_equal(out.rgb, resize_chip(half_chip, 64).rgb)

    def test_empty_window_rejected(self):
        chip = make_chip(height=30, width=30, margin=5)
        with pytest.raises(ParameterError):
            random_crop_margin(chip, (15, 15, 0, 0), 32)

    def test_mask_erased_rejected(self):
        rgb = np.zeros((40, 40, 3), dtype=np.uint8)
        mask = np.zeros((40, 40), dtype=np.uint8)
        mask[0:2, 0:2] = 255  # mask far in the corner
        chip = Chip(rgb=rgb, mask=mask, margin=10, building_id="corner")
        with pytest.raises(ParameterError, match="mask"):
            random_crop_margin(chip, (10, 0, 10, 0), 32)


class TestMaskJitter:
    def test_identity_at_zero(self, chip):
        assert chips_identical(mask_jitter(chip, (0, 0), 0.0), chip)

    def test_rgb_bit_identical(self, chip):
        out = mask_jitter(chip, (3, -2), 2.5)
        assert np.array_equal(out.rgb, chip.rgb)

    def test_integer_shift_roundtrip_interior(self):
        c = make_chip(height=60, width=60, margin=20, seed=2)
        out = mask_jitter(mask_jitter(c, (3, 0), 0.0), (-3, 0), 0.0)
        interior = (slice(10, 50), slice(10, 50))
        assert np.array_equal(out.mask[interior], c.mask[interior])

    def test_pixel_count_stable_under_small_jitter(self):
        rgb = np.zeros((140, 140, 3), dtype=np.uint8)
        mask = np.zeros((140, 140), dtype=np.uint8)
        mask[20:120, 20:120] = 255  # 100x100 square
        c = Chip(rgb=rgb, mask=mask, margin=20, building_id="sq")
        base = int((c.mask == 255).sum())
        rng = np.random.default_rng(17)
        for _ in range(10):
            dx, dy = (int(v) for v in rng.integers(-5, 6, size=2))
            angle = float(rng.uniform(-5, 5))
            out = mask_jitter(c, (dx, dy), angle)
            count = int((out.mask == 255).sum())
            assert abs(count - base) <= 0.1 * base


class TestPipeline:
    def test_all_probs_zero_is_plain_resize(self, chip):
        cfg = AugmentConfig(
            probabilities={name: 0.0 for name in AugmentConfig().probabilities},
            crop_margin_range=(0, 0),
            output_size=32,
        )
        out = augment_pipeline(chip, cfg, seed=123)
        assert chips_identical(out, resize_chip(chip, 32))

    def test_deterministic(self):
        c = make_chip(height=50, width=50, margin=12, seed=3)
        cfg = AugmentConfig(output_size=32, crop_margin_range=(0, 10))
        a = augment_pipeline(c, cfg, seed=77)
        b = augment_pipeline(c, cfg, seed=77)
        assert chips_identical(a, b)

    def test_mask_stays_binary_through_pipeline(self):
        c = make_chip(height=50, width=50, margin=12, seed=4)
        cfg = AugmentConfig(output_size=32, crop_margin_range=(0, 10))
        for seed in range(25):
            out = augment_pipeline(c, cfg, seed=seed)
            assert set(np.unique(out.mask)) <= {0, 255}

    def test_mask_binary_after_each_transform(self, chip):
        outputs = [
            dihedral(chip, 3),
            rgb_shift(chip, (4, 4, 4)),
            blur(chip, "box", 3),
            gauss_noise(chip, 5.0, seed=1),
            elastic_transform(chip, 30.0, 6.0, seed=1),
            grid_distortion(chip, 5, 0.3, seed=1),
            optical_distortion(chip, 0.3),
            mask_jitter(chip, (2, 1), 3.0),
            random_crop_margin(chip, (2, 2, 2, 2), 24),
        ]
        for out in outputs:
            assert set(np.unique(out.mask)) <= {0, 255}

    def test_config_json_round_trip(self):
        cfg = AugmentConfig(rgb_shift_limit=15, output_size=96, crop_margin_range=(10, 60))
        again = AugmentConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_config_rejects_bad_ranges(self):
        with pytest.raises(ParameterError):
            AugmentConfig(crop_margin_range=(0, 150))
        with pytest.raises(ParameterError):
            AugmentConfig(crop_margin_range=(-5, 50))
        with pytest.raises(ParameterError):
            AugmentConfig(probabilities={"dihedral": 1.5})
        with pytest.raises(ParameterError):
            AugmentConfig(probabilities={"warp_drive": 0.5})

    def test_seed_policy_is_stable(self):
        from roofstack.augment import SeedPolicy

        policy = SeedPolicy(global_seed=42)
        a = policy.item_seed("b0001", epoch=3, variant_index=7)
        assert a == SeedPolicy(42).item_seed("b0001", 3, 7)
        assert a != policy.item_seed("b0001", 3, 8)
        assert a != policy.item_seed("b0002", 3, 7)

    def test_contact_sheet_shape(self):
        chips = [make_chip(height=16, width=16, margin=4, seed=s) for s in range(6)]
        sheet = contact_sheet(chips, cols=3, pad=2)
        assert sheet.shape == (16 * 2 + 2, 16 * 3 + 4, 3)
