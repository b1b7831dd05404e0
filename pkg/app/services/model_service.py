from pathlib import Path
from typing import Dict, Optional
import logging

import numpy as np

from app.config import settings
from app.services.attention_service import RenderMode
from app.services.inference_service import MAP_NAMES, InferenceService
from app.services.network_service import SVSNetwork
from app.storage.checkpoint import CheckpointStore

logger = logging.getLogger(__name__)


class ModelService:
    """Holds the checkpoint served over HTTP"""

    def __init__(self):
        self.network: Optional[SVSNetwork] = None
        self.checkpoint: Optional[Path] = None
        self.mode = RenderMode.truncated()

    def start(self, checkpoint_path: Optional[str] = None):
        """Load the configured checkpoint; the API keeps running without one."""
        path = checkpoint_path or settings.checkpoint_path
        try:
            self.mode = RenderMode.parse(settings.render_mode, settings.truncation_k)
        except ValueError as e:
            logger.error(f"Invalid render settings: {e}")
            self.mode = RenderMode.truncated()
        if not path:
            logger.warning("No checkpoint configured; /segment will be unavailable")
            return
        try:
            self.network = CheckpointStore.load(path)
            self.checkpoint = Path(path)
            logger.info(f"Model service ready with checkpoint {path}")
        except Exception as e:
            logger.error(f"Failed to load checkpoint {path}: {e}")
            logger.warning("API will continue without segmentation functionality")
            self.network = None
            self.checkpoint = None

    def stop(self):
        if self.network is not None:
            logger.info("Model service released checkpoint")
        self.network = None
        self.checkpoint = None

    def is_available(self) -> bool:
        return self.network is not None

    def parameter_count(self) -> Optional[int]:
        return self.network.parameter_count() if self.network is not None else None

    def segment(self, image: np.ndarray, output: str = "mask") -> np.ndarray:
        """8-bit rendering of one map (see MAP_NAMES) for a grayscale image."""
        if output not in MAP_NAMES:
            raise ValueError(f"Unsupported output: {output}")
        if self.network is None:
            raise RuntimeError("No checkpoint loaded")
        maps = InferenceService.predict_maps(self.network, image, self.mode)
        pngs: Dict[str, np.ndarray] = InferenceService.render_pngs(maps)
        return pngs[output]


# Global model service instance
model_service = ModelService()
