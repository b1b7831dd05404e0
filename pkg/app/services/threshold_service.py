from typing import Optional
import logging

import numpy as np
from skimage.filters import threshold_otsu

from app.models import ThresholdConfig

logger = logging.getLogger(__name__)


class ThresholdService:
    """Global (Otsu) and local mean-offset binarisation baselines"""

    @staticmethod
    def threshold(image: np.ndarray, cfg: Optional[ThresholdConfig] = None) -> np.ndarray:
        cfg = cfg or ThresholdConfig()
        if cfg.method == "otsu":
            return ThresholdService.otsu_threshold(image)
        return ThresholdService.local_mean_threshold(image, cfg)

    @staticmethod
    def _check_image(image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        if image.ndim != 2:
            raise ValueError(f"expected a 2-d grayscale image, got shape {image.shape}")
        if np.any(image < 0) or np.any(image > 255) or np.any(image != np.round(image)):
            raise ValueError("expected 8-bit grayscale values in [0, 255]")
        return image.astype(np.int64)

    @staticmethod
    def otsu_level(image: np.ndarray) -> Optional[int]:
        """Threshold maximising between-class variance; ``None`` for a flat histogram.

        Pixels strictly above the level are foreground. Ties resolve to the
        smaller level.
        """
        pixels = ThresholdService._check_image(image).astype(np.uint8)
        if pixels.min() == pixels.max():
            return None
        return int(threshold_otsu(pixels, nbins=256))

    @staticmethod
    def otsu_threshold(image: np.ndarray) -> np.ndarray:
        level = ThresholdService.otsu_level(image)
        pixels = ThresholdService._check_image(image)
        if level is None:
            return np.zeros(pixels.shape, dtype=np.uint8)
        return (pixels > level).astype(np.uint8)

    @staticmethod
    def local_mean_threshold(image: np.ndarray, cfg: Optional[ThresholdConfig] = None) -> np.ndarray:
        """Vessel where intensity exceeds the clamped-window mean plus ``offset``."""
        cfg = cfg or ThresholdConfig(method="local_mean")
        pixels = ThresholdService._check_image(image)
        half = cfg.window // 2
        padded = np.pad(pixels, half, mode="edge")
        integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
        integral[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
        height, width = pixels.shape
        w = cfg.window
        window_sum = (
            integral[w:w + height, w:w + width]
            - integral[:height, w:w + width]
            - integral[w:w + height, :width]
            + integral[:height, :width]
        )
        area = w * w
        # integer form of pixel > sum / area + offset
        return (pixels * area > window_sum + cfg.offset * area).astype(np.uint8)
