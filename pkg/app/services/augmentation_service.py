"""Training-time augmentation: brightness shift, additive noise, paired flips
and zero-pad plus random crop. Photometric stages touch only the image;
geometric stages move image and mask together."""

from typing import Optional, Tuple
import logging

import numpy as np
from PIL import Image

from app.models import AugmentConfig

logger = logging.getLogger(__name__)

Pair = Tuple[np.ndarray, np.ndarray]


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _check_pair(image: np.ndarray, mask: np.ndarray) -> Pair:
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale image, got shape {image.shape}")
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} differ in size")
    return image, mask


class AugmentationService:
    """Stateless augmentation stages driven by an explicit numpy Generator"""

    @staticmethod
    def sample_rng(cfg: AugmentConfig, index: int) -> np.random.Generator:
        """Independent stream per (seed, sample index)."""
        return np.random.default_rng([cfg.seed, index])

    # --- photometric -------------------------------------------------------

    @staticmethod
    def _shift_brightness(image: np.ndarray, offset: int) -> np.ndarray:
        return _to_uint8(np.asarray(image, dtype=np.int64) + offset)

    @staticmethod
    def adjust_brightness(image: np.ndarray, rng: np.random.Generator,
                          cfg: Optional[AugmentConfig] = None) -> np.ndarray:
        """Add one integer offset in [-range, range] to every pixel."""
        cfg = cfg or AugmentConfig()
        offset = int(rng.integers(-cfg.brightness_range, cfg.brightness_range + 1))
        return AugmentationService._shift_brightness(image, offset)

    @staticmethod
    def _gaussian_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
        noise = rng.normal(0.0, sigma, size=np.shape(image))
        return _to_uint8(np.asarray(image, dtype=np.float64) + noise)

    @staticmethod
    def _uniform_noise(image: np.ndarray, bound: float, rng: np.random.Generator) -> np.ndarray:
        noise = rng.uniform(-bound, bound, size=np.shape(image))
        return _to_uint8(np.asarray(image, dtype=np.float64) + noise)

    @staticmethod
    def add_noise(image: np.ndarray, rng: np.random.Generator,
                  cfg: Optional[AugmentConfig] = None) -> np.ndarray:
        """Coin flip per image between Gaussian (sigma ~ U[0, max]) and uniform noise."""
        cfg = cfg or AugmentConfig()
        if rng.random() < 0.5:
            sigma = rng.uniform(0.0, cfg.gauss_sigma_max)
            return AugmentationService._gaussian_noise(image, sigma, rng)
        return AugmentationService._uniform_noise(image, cfg.uniform_range, rng)

    # --- geometric ---------------------------------------------------------

    @staticmethod
    def _flip(image: np.ndarray, mask: np.ndarray, horizontal: bool, vertical: bool) -> Pair:
        if horizontal:
            image, mask = image[:, ::-1], mask[:, ::-1]
        if vertical:
            image, mask = image[::-1, :], mask[::-1, :]
        return np.ascontiguousarray(image), np.ascontiguousarray(mask)

    @staticmethod
    def random_flip(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> Pair:
        image, mask = _check_pair(image, mask)
        horizontal = bool(rng.random() < 0.5)
        vertical = bool(rng.random() < 0.5)
        return AugmentationService._flip(image, mask, horizontal, vertical)

    @staticmethod
    def _pad_crop(image: np.ndarray, mask: np.ndarray, pad: Tuple[int, int],
                  origin: Tuple[int, int], crop_size: int) -> Pair:
        """Zero-pad by ``pad`` rows/cols (floor half before) then crop at ``origin``."""
        pad_y, pad_x = pad
        widths = ((pad_y // 2, pad_y - pad_y // 2), (pad_x // 2, pad_x - pad_x // 2))
        padded_image = np.pad(image, widths, mode="constant", constant_values=0)
        padded_mask = np.pad(mask, widths, mode="constant", constant_values=0)
        top, left = origin
        if (top < 0 or left < 0 or top + crop_size > padded_image.shape[0]
                or left + crop_size > padded_image.shape[1]):
            raise ValueError(
                f"crop {crop_size}x{crop_size} at ({top}, {left}) exceeds padded size "
                f"{padded_image.shape}"
            )
        window = (slice(top, top + crop_size), slice(left, left + crop_size))
        return padded_image[window].copy(), padded_mask[window].copy()

    @staticmethod
    def pad_and_crop(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                     cfg: Optional[AugmentConfig] = None) -> Pair:
        cfg = cfg or AugmentConfig()
        image, mask = _check_pair(image, mask)
        crop = cfg.crop_size
        pads = []
        for extent in image.shape:
            max_pad = int(np.floor(cfg.pad_fraction_max * extent + 0.5))
            if crop > extent + max_pad:
                raise ValueError(
                    f"crop_size {crop} exceeds image size {image.shape} plus maximal pad {max_pad}"
                )
            fraction = rng.uniform(0.0, cfg.pad_fraction_max) if cfg.pad_fraction_max > 0 else 0.0
            # padding never drops below what the crop needs
            pads.append(max(int(np.floor(fraction * extent + 0.5)), crop - extent, 0))
        padded_shape = (image.shape[0] + pads[0], image.shape[1] + pads[1])
        top = int(rng.integers(0, padded_shape[0] - crop + 1))
        left = int(rng.integers(0, padded_shape[1] - crop + 1))
        return AugmentationService._pad_crop(image, mask, (pads[0], pads[1]), (top, left), crop)

    @staticmethod
    def resize_pair(image: np.ndarray, mask: np.ndarray, size: int) -> Pair:
        """Nearest-neighbour resize of both arrays; identity when already ``size``."""
        image, mask = _check_pair(image, mask)
        if image.shape == (size, size):
            return image, mask
        resized_image = Image.fromarray(image.astype(np.uint8)).resize((size, size), Image.NEAREST)
        resized_mask = Image.fromarray(mask.astype(np.uint8)).resize((size, size), Image.NEAREST)
        return np.asarray(resized_image), np.asarray(resized_mask)

    @staticmethod
    def compose_pipeline(image: np.ndarray, mask: np.ndarray, cfg: AugmentConfig,
                         rng: np.random.Generator) -> Pair:
        """Brightness, noise, flip, pad-crop in that order; each stage optional."""
        image, mask = _check_pair(image, mask)
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("augmentation masks must be binary {0, 1}")
        image = image.astype(np.uint8)
        mask = mask.astype(np.uint8)

        if cfg.brightness:
            image = AugmentationService.adjust_brightness(image, rng, cfg)
        if cfg.noise:
            image = AugmentationService.add_noise(image, rng, cfg)
        if cfg.flip:
            image, mask = AugmentationService.random_flip(image, mask, rng)
        if cfg.pad_crop:
            return AugmentationService.pad_and_crop(image, mask, rng, cfg)
        return AugmentationService.resize_pair(image, mask, cfg.crop_size)
