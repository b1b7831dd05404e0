import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[2]))

from app.models import NetworkConfig
from app.services.inference_service import MAP_NAMES, InferenceService, to_8bit
from app.services.network_service import NetworkService
from app.storage.dataset import read_gray

NET = NetworkService.build_network(NetworkConfig(base_channels=2, depth=1, input_size=16, seed=2))


def test_to_8bit_rounds_half_up_and_clips():
    values = np.array([0.0, 0.5, 1.0, 1.2, -0.1])
    np.testing.assert_array_equal(to_8bit(values), [0, 128, 255, 255, 0])


def test_maps_follow_caller_size():
    image = np.random.default_rng(0).integers(0, 256, size=(20, 20), dtype=np.uint8)
    maps = InferenceService.predict_maps(NET, image)
    for name in MAP_NAMES:
        assert getattr(maps, name).shape == (20, 20)
    assert np.all(maps.attention >= 0) and np.all(maps.attention < 1)
    assert np.all(maps.final_prob <= maps.backbone_prob + 1e-6)
    np.testing.assert_array_equal(maps.mask, NetworkService.binarize(maps.final_prob))


def test_render_to_dir_writes_four_maps(tmp_path):
    image = np.full((16, 16), 120, dtype=np.uint8)
    written = InferenceService.render_to_dir(NET, image, tmp_path / "maps")

    assert sorted(written) == sorted(MAP_NAMES)
    for name, path in written.items():
        assert path == tmp_path / "maps" / f"{name}.png"
        assert read_gray(path).shape == (16, 16)
    assert set(np.unique(read_gray(written["mask"]))) <= {0, 255}
    assert np.all(read_gray(written["final_prob"]) <= read_gray(written["backbone_prob"]))


def test_prepare_rejects_color_images():
    with pytest.raises(ValueError, match="2-d grayscale"):
        InferenceService.prepare(NET, np.zeros((16, 16, 3), dtype=np.uint8))


def test_rendered_pngs_are_reproducible(tmp_path):
    image = np.random.default_rng(5).integers(0, 256, size=(16, 16), dtype=np.uint8)
    first = InferenceService.render_to_dir(NET, image, tmp_path / "a")
    second = InferenceService.render_to_dir(NET, image, tmp_path / "b")
    for name in MAP_NAMES:
        assert first[name].read_bytes() == second[name].read_bytes()
