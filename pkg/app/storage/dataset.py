"""On-disk dataset layout: ``images/``, ``masks/`` and ``regions/`` hold
``NNNN.png`` files (masks and regions as 0/255), ``manifest.json`` records
``{size, seed, train, test}``."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union
import io
import json
import logging

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SUBDIRS = ("images", "masks", "regions")
MANIFEST_NAME = "manifest.json"


def sample_name(sample_id: int) -> str:
    return f"{sample_id:04d}.png"


def read_gray(path: PathLike) -> np.ndarray:
    """8-bit grayscale array from a PNG file."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8).copy()


def decode_gray(payload: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(payload)) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8).copy()
    except Exception as e:
        raise ValueError(f"could not decode image: {e}") from e


def encode_gray(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(buffer, format="PNG")
    return buffer.getvalue()


def write_gray(path: PathLike, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale array, got shape {array.shape}")
    if array.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {array.dtype}")
    Path(path).write_bytes(encode_gray(array))


def binary_to_png(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) != 0).astype(np.uint8) * 255


def png_to_binary(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels) >= 128).astype(np.uint8)


@dataclass
class Manifest:
    size: int
    seed: int
    train: List[int] = field(default_factory=list)
    test: List[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"size": self.size, "seed": self.seed, "train": self.train, "test": self.test},
            indent=2, sort_keys=True,
        ) + "\n"


class DatasetStore:
    """Read/write access to one dataset root"""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def path(self, kind: str, sample_id: int) -> Path:
        if kind not in SUBDIRS:
            raise ValueError(f"Unsupported dataset entry kind: {kind}")
        return self.root / kind / sample_name(sample_id)

    def prepare(self) -> None:
        for sub in SUBDIRS:
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def write_sample(self, sample_id: int, image: np.ndarray, mask: np.ndarray,
                     region: np.ndarray) -> None:
        write_gray(self.path("images", sample_id), image)
        write_gray(self.path("masks", sample_id), binary_to_png(mask))
        write_gray(self.path("regions", sample_id), binary_to_png(region))

    def write_manifest(self, manifest: Manifest) -> Path:
        self.manifest_path.write_text(manifest.to_json(), encoding="utf-8")
        return self.manifest_path

    def load_manifest(self) -> Manifest:
        if not self.manifest_path.exists():
            raise FileNotFoundError(f"dataset manifest not found: {self.manifest_path}")
        payload = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        try:
            manifest = Manifest(
                size=int(payload["size"]),
                seed=int(payload["seed"]),
                train=[int(i) for i in payload["train"]],
                test=[int(i) for i in payload["test"]],
            )
        except (KeyError, TypeError) as e:
            raise ValueError(f"malformed manifest {self.manifest_path}: {e}") from e
        if set(manifest.train) & set(manifest.test):
            raise ValueError(f"manifest {self.manifest_path} has overlapping train/test ids")
        return manifest

    def load_image(self, sample_id: int) -> np.ndarray:
        return read_gray(self.path("images", sample_id))

    def load_mask(self, sample_id: int) -> np.ndarray:
        return png_to_binary(read_gray(self.path("masks", sample_id)))

    def load_region(self, sample_id: int) -> np.ndarray:
        return png_to_binary(read_gray(self.path("regions", sample_id)))

    def load_pair(self, sample_id: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.load_image(sample_id), self.load_mask(sample_id)
