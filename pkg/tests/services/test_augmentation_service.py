import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[2]))

from app.models import AugmentConfig
from app.services.augmentation_service import AugmentationService


def _pair(size=16, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, size=(size, size)).astype(np.uint8)
    mask = (rng.uniform(size=(size, size)) < 0.3).astype(np.uint8)
    return image, mask


def test_brightness_shift_clamps():
    image = np.array([[255, 100, 0]], dtype=np.uint8)
    np.testing.assert_array_equal(AugmentationService._shift_brightness(image, 20), [[255, 120, 20]])
    np.testing.assert_array_equal(AugmentationService._shift_brightness(image, -20), [[235, 80, 0]])
    np.testing.assert_array_equal(AugmentationService._shift_brightness(image, 0), image)


def test_adjust_brightness_uses_one_offset_per_image():
    image = np.full((8, 8), 128, dtype=np.uint8)
    out = AugmentationService.adjust_brightness(image, np.random.default_rng(3))
    assert len(np.unique(out)) == 1
    assert abs(int(out[0, 0]) - 128) <= 20


def test_gaussian_noise_statistics():
    image = np.full((256, 256), 128, dtype=np.uint8)
    out = AugmentationService._gaussian_noise(image, 10.0, np.random.default_rng(0))
    diff = out.astype(float) - 128
    assert abs(diff.mean()) <= 0.5
    assert 9 <= diff.std() <= 11


def test_zero_sigma_noise_is_identity():
    image, _ = _pair()
    np.testing.assert_array_equal(AugmentationService._gaussian_noise(image, 0.0, np.random.default_rng(0)), image)


def test_uniform_noise_is_bounded():
    image = np.full((64, 64), 128, dtype=np.uint8)
    out = AugmentationService._uniform_noise(image, 20.0, np.random.default_rng(1))
    assert np.max(np.abs(out.astype(int) - 128)) <= 20


def test_add_noise_stays_in_range():
    image, _ = _pair(64)
    for seed in range(10):
        out = AugmentationService.add_noise(image, np.random.default_rng(seed))
        assert out.dtype == np.uint8


def test_flip_is_involution_and_paired():
    image, mask = _pair()
    once = AugmentationService._flip(image, mask, True, False)
    twice = AugmentationService._flip(*once, True, False)
    np.testing.assert_array_equal(twice[0], image)
    np.testing.assert_array_equal(twice[1], mask)

    rotated_image, rotated_mask = AugmentationService._flip(image, mask, True, True)
    assert rotated_image[15, 15] == image[0, 0]
    assert rotated_mask[15, 15] == mask[0, 0]


def test_random_flip_moves_image_and_mask_together():
    size = 12
    coords = np.arange(size * size).reshape(size, size)
    image = (coords % 256).astype(np.uint8)
    mask = (coords % 7 == 0).astype(np.uint8)
    for seed in range(8):
        out_image, out_mask = AugmentationService.random_flip(image, mask, np.random.default_rng(seed))
        np.testing.assert_array_equal(out_mask, (out_image.astype(int) % 7 == 0).astype(np.uint8))


def test_flip_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="differ in size"):
        AugmentationService.random_flip(np.zeros((4, 4)), np.zeros((4, 5)), np.random.default_rng(0))


def test_pad_and_crop_identity_without_padding():
    image, mask = _pair()
    cfg = AugmentConfig(pad_fraction_max=0.0, crop_size=16)
    out_image, out_mask = AugmentationService.pad_and_crop(image, mask, np.random.default_rng(0), cfg)
    np.testing.assert_array_equal(out_image, image)
    np.testing.assert_array_equal(out_mask, mask)


def test_full_scale_padding_geometry():
    image = np.ones((304, 304), dtype=np.uint8)
    mask = np.ones((304, 304), dtype=np.uint8)
    for origin in [(0, 0), (76, 76), (40, 3)]:
        out_image, out_mask = AugmentationService._pad_crop(image, mask, (76, 76), origin, 304)
        assert out_image.shape == (304, 304)
        assert out_mask.shape == (304, 304)
    with pytest.raises(ValueError, match="exceeds padded size"):
        AugmentationService._pad_crop(image, mask, (76, 76), (77, 0), 304)


def test_pad_and_crop_output_size_and_alignment():
    size = 20
    coords = np.arange(size * size).reshape(size, size)
    image = (coords % 250 + 1).astype(np.uint8)
    mask = (coords % 5 == 0).astype(np.uint8)
    cfg = AugmentConfig(crop_size=20)
    for seed in range(10):
        out_image, out_mask = AugmentationService.pad_and_crop(image, mask, np.random.default_rng(seed), cfg)
        assert out_image.shape == (20, 20)
        # padding is zero in both; inside the image the pairing is kept
        inside = out_image > 0
        expected = ((out_image.astype(int) - 1) % 5 == 0) & inside
        np.testing.assert_array_equal(out_mask.astype(bool), expected)


def test_infeasible_crop_rejected():
    image, mask = _pair()
    with pytest.raises(ValueError, match="crop_size 32 exceeds"):
        AugmentationService.pad_and_crop(image, mask, np.random.default_rng(0), AugmentConfig(crop_size=32))


def test_pipeline_is_deterministic_and_keeps_mask_binary():
    image, mask = _pair(64)
    cfg = AugmentConfig(crop_size=64)
    first = AugmentationService.compose_pipeline(image, mask, cfg, AugmentationService.sample_rng(cfg, 5))
    second = AugmentationService.compose_pipeline(image, mask, cfg, AugmentationService.sample_rng(cfg, 5))
    np.testing.assert_array_equal(first[0], second[0])
    np.testing.assert_array_equal(first[1], second[1])
    assert set(np.unique(first[1])) <= {0, 1}
    assert first[0].shape == (64, 64)


def test_pipeline_with_everything_disabled_only_resizes():
    image, mask = _pair(32)
    cfg = AugmentConfig(crop_size=32, brightness=False, noise=False, flip=False, pad_crop=False)
    out_image, out_mask = AugmentationService.compose_pipeline(image, mask, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(out_image, image)
    np.testing.assert_array_equal(out_mask, mask)

    cfg = cfg.model_copy(update={"crop_size": 16})
    out_image, out_mask = AugmentationService.compose_pipeline(image, mask, cfg, np.random.default_rng(0))
    assert out_image.shape == (16, 16) and out_mask.shape == (16, 16)


def test_pipeline_rejects_non_binary_mask():
    image, mask = _pair()
    with pytest.raises(ValueError, match="binary"):
        AugmentationService.compose_pipeline(image, mask * 255, AugmentConfig(crop_size=16), np.random.default_rng(0))
