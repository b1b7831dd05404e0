"""Synthetic OCTA-like scenes: branching vessel trees with Gaussian cross
sections, elliptical non-perfusion regions and multiplicative speckle."""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union
import logging
import math

import numpy as np

from app.models import SceneConfig
from app.storage.dataset import DatasetStore, Manifest

logger = logging.getLogger(__name__)

# unit-mean Rayleigh: mean = scale * sqrt(pi / 2)
RAYLEIGH_SCALE = math.sqrt(2.0 / math.pi)
VESSEL_PEAK = (170.0, 230.0)
WIDTH_DECAY = 0.97
TURN_STD = 0.18
MOMENTUM = 0.85
MAX_WALKERS = 16


@dataclass
class Scene:
    image: np.ndarray      # uint8 grayscale
    mask: np.ndarray       # uint8 {0, 1}
    np_region: np.ndarray  # uint8 {0, 1}
    clean: np.ndarray      # float64 pre-speckle intensity


@dataclass
class _Walker:
    x: float
    y: float
    heading: float
    turn: float
    width: float
    peak: float


class SynthService:
    """Deterministic scene generation from a SceneConfig"""

    @staticmethod
    def generate_scene(cfg: SceneConfig,
                       seed: Optional[Union[int, Sequence[int]]] = None) -> Scene:
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        size = cfg.size
        if cfg.np_radius_frac[1] * size * 2 >= size:
            raise ValueError(f"non-perfusion radius {cfg.np_radius_frac[1]} x {size} does not fit")

        vessels = SynthService._grow_vessels(cfg, rng)
        np_region = SynthService._nonperfusion(cfg, rng)
        vessels[np_region] = 0.0

        mask = (vessels > cfg.mask_threshold).astype(np.uint8)
        clean = np.clip(cfg.background_level + vessels, 0, 255)
        region = np_region.astype(np.uint8)
        image = SynthService.speckle_stress(clean, region, cfg, rng)
        return Scene(image=image, mask=mask, np_region=region, clean=clean)

    @staticmethod
    def generate_dataset(cfg: SceneConfig, count: int, out_dir: Union[str, Path],
                         train_fraction: float = 0.5) -> Path:
        """Write ``count`` scenes plus a shuffled train/test manifest; returns the manifest path."""
        if count < 2:
            raise ValueError(f"count must be at least 2 to form a train/test split, got {count}")
        n_train = int(count * train_fraction)
        if not 0 < n_train < count:
            raise ValueError(f"train fraction {train_fraction} leaves an empty split for count {count}")

        store = DatasetStore(out_dir)
        try:
            store.prepare()
            for index in range(count):
                scene = SynthService.generate_scene(cfg, seed=[cfg.seed, index])
                store.write_sample(index, scene.image, scene.mask, scene.np_region)
            order = np.random.default_rng(cfg.seed).permutation(count)
            manifest = Manifest(
                size=cfg.size,
                seed=cfg.seed,
                train=sorted(int(i) for i in order[:n_train]),
                test=sorted(int(i) for i in order[n_train:]),
            )
            path = store.write_manifest(manifest)
        except OSError as e:
            logger.error(f"Failed to write dataset to {out_dir}: {e}")
            raise
        logger.info(f"Wrote {count} scenes ({n_train} train / {count - n_train} test) to {out_dir}")
        return path

    @staticmethod
    def speckle_stress(image: np.ndarray, np_region: np.ndarray, cfg: SceneConfig,
                       rng: np.random.Generator) -> np.ndarray:
        """Multiply each pixel by ``1 + gain * (R - 1)`` with unit-mean Rayleigh R."""
        image = np.asarray(image, dtype=np.float64)
        region = np.asarray(np_region)
        if region.shape != image.shape:
            raise ValueError(f"region shape {region.shape} does not match image {image.shape}")
        gain = np.where(region != 0, cfg.speckle_gain_np, cfg.speckle_gain)
        speckle = rng.rayleigh(RAYLEIGH_SCALE, size=image.shape)
        noisy = image * (1.0 + gain * (speckle - 1.0))
        return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)

    @staticmethod
    def _grow_vessels(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
        size = cfg.size
        canvas = np.zeros((size, size), dtype=np.float64)
        walkers: List[_Walker] = []
        centre = (size - 1) / 2.0
        for _ in range(cfg.n_seeds):
            x, y = SynthService._border_point(size, rng)
            heading = math.atan2(centre - y, centre - x) + rng.normal(0.0, 0.35)
            walkers.append(_Walker(
                x=x, y=y, heading=heading, turn=0.0,
                width=rng.uniform(*cfg.width_start),
                peak=rng.uniform(*VESSEL_PEAK),
            ))

        spawned = len(walkers)
        max_steps = 2 * size
        while walkers:
            walker = walkers.pop(0)
            for _ in range(max_steps):
                SynthService._stamp(canvas, walker.x, walker.y, walker.width, walker.peak)
                walker.turn = MOMENTUM * walker.turn + rng.normal(0.0, TURN_STD)
                walker.heading += walker.turn * (1 - MOMENTUM)
                walker.x += math.cos(walker.heading)
                walker.y += math.sin(walker.heading)
                walker.width = cfg.width_min + (walker.width - cfg.width_min) * WIDTH_DECAY
                if not (-1 <= walker.x <= size and -1 <= walker.y <= size):
                    break
                if spawned < MAX_WALKERS and rng.random() < cfg.branch_prob:
                    side = 1.0 if rng.random() < 0.5 else -1.0
                    walkers.append(_Walker(
                        x=walker.x, y=walker.y,
                        heading=walker.heading + side * rng.uniform(0.4, 1.0),
                        turn=0.0,
                        width=max(cfg.width_min, 0.7 * walker.width),
                        peak=walker.peak * rng.uniform(0.85, 1.0),
                    ))
                    spawned += 1
        return canvas

    @staticmethod
    def _border_point(size: int, rng: np.random.Generator):
        edge = int(rng.integers(4))
        along = rng.uniform(0.15, 0.85) * (size - 1)
        if edge == 0:
            return along, 0.0
        if edge == 1:
            return float(size - 1), along
        if edge == 2:
            return along, float(size - 1)
        return 0.0, along

    @staticmethod
    def _stamp(canvas: np.ndarray, x: float, y: float, width: float, peak: float) -> None:
        """Max-composite a Gaussian cross-section disc (sd = width / 2)."""
        sd = width / 2.0
        reach = int(math.ceil(3 * sd)) + 1
        size = canvas.shape[0]
        x0, x1 = max(0, int(x) - reach), min(size, int(x) + reach + 1)
        y0, y1 = max(0, int(y) - reach), min(size, int(y) + reach + 1)
        if x0 >= x1 or y0 >= y1:
            return
        cols = np.arange(x0, x1)[None, :]
        rows = np.arange(y0, y1)[:, None]
        dist2 = (cols - x) ** 2 + (rows - y) ** 2
        profile = peak * np.exp(-dist2 / (2 * sd * sd))
        np.maximum(canvas[y0:y1, x0:x1], profile, out=canvas[y0:y1, x0:x1])

    @staticmethod
    def _nonperfusion(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
        size = cfg.size
        region = np.zeros((size, size), dtype=bool)
        count = int(rng.integers(cfg.n_nonperfusion[0], cfg.n_nonperfusion[1] + 1))
        rows, cols = np.indices((size, size))
        for _ in range(count):
            a = rng.uniform(*cfg.np_radius_frac) * size
            b = a * rng.uniform(0.6, 1.0)
            cx = rng.uniform(a, size - 1 - a)
            cy = rng.uniform(a, size - 1 - a)
            angle = rng.uniform(0, math.pi)
            dx = cols - cx
            dy = rows - cy
            u = dx * math.cos(angle) + dy * math.sin(angle)
            v = -dx * math.sin(angle) + dy * math.cos(angle)
            region |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
        return region
