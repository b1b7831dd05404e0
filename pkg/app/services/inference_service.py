from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union
import logging

import numpy as np
from PIL import Image

from app.services.attention_service import RenderMode
from app.services.network_service import NetworkService, SVSNetwork
from app.storage.dataset import write_gray

logger = logging.getLogger(__name__)

MAP_NAMES = ("backbone_prob", "attention", "final_prob", "mask")


@dataclass
class InferenceMaps:
    """Single-image outputs at the caller's image size"""

    backbone_prob: np.ndarray
    attention: np.ndarray
    final_prob: np.ndarray
    mask: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in MAP_NAMES}


def to_8bit(values: np.ndarray) -> np.ndarray:
    """Scale [0, 1] values to 8-bit with round-half-up: floor(v * 255 + 0.5)."""
    scaled = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def _resize_float(values: np.ndarray, shape) -> np.ndarray:
    if values.shape == tuple(shape):
        return values
    img = Image.fromarray(values.astype(np.float32))
    return np.asarray(img.resize((shape[1], shape[0]), Image.BILINEAR), dtype=np.float64)


class InferenceService:
    """Run a trained network on single 8-bit images"""

    @staticmethod
    def prepare(net: SVSNetwork, image: np.ndarray) -> np.ndarray:
        """(1, S, S, 1) network input in [0, 1] from an 8-bit 2-d image."""
        image = np.asarray(image)
        if image.ndim != 2:
            raise ValueError(f"expected a 2-d grayscale image, got shape {image.shape}")
        size = net.config.input_size
        if image.shape != (size, size):
            image = np.asarray(
                Image.fromarray(image.astype(np.uint8)).resize((size, size), Image.BILINEAR)
            )
        return image.astype(np.float32)[None, :, :, None] / 255.0

    @staticmethod
    def predict_maps(net: SVSNetwork, image: np.ndarray,
                     mode: Optional[RenderMode] = None) -> InferenceMaps:
        result = NetworkService.forward(net, InferenceService.prepare(net, image), mode)
        shape = np.shape(image)
        backbone = _resize_float(result.backbone_prob.data[0, ..., 0], shape)
        attention = _resize_float(result.attention.values.data[0, ..., 0], shape)
        final = _resize_float(result.final_prob.data[0, ..., 0], shape)
        return InferenceMaps(
            backbone_prob=backbone,
            attention=attention,
            final_prob=final,
            mask=NetworkService.binarize(final),
        )

    @staticmethod
    def predict_mask(net: SVSNetwork, image: np.ndarray,
                     mode: Optional[RenderMode] = None) -> np.ndarray:
        return InferenceService.predict_maps(net, image, mode).mask

    @staticmethod
    def render_pngs(maps: InferenceMaps) -> Dict[str, np.ndarray]:
        return {
            "backbone_prob": to_8bit(maps.backbone_prob),
            "attention": to_8bit(maps.attention),
            "final_prob": to_8bit(maps.final_prob),
            "mask": maps.mask.astype(np.uint8) * 255,
        }

    @staticmethod
    def render_to_dir(net: SVSNetwork, image: np.ndarray, out_dir: Union[str, Path],
                      mode: Optional[RenderMode] = None) -> Dict[str, Path]:
        """Write backbone_prob.png, attention.png, final_prob.png and mask.png."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        pngs = InferenceService.render_pngs(InferenceService.predict_maps(net, image, mode))
        written = {}
        for name, pixels in pngs.items():
            path = out_dir / f"{name}.png"
            write_gray(path, pixels)
            written[name] = path
        logger.info(f"Rendered {len(written)} maps to {out_dir}")
        return written
