import csv
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[2]))

from app.config import build_run_config
from app.models import SceneConfig
from app.services.network_service import NetworkService
from app.services.synth_service import SynthService
from app.services.training_service import TrainingService, default_loss_log
from app.storage.dataset import DatasetStore

TINY = {"network.base_channels": 2, "network.depth": 1, "training.iterations": 2, "seed": 5}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    SynthService.generate_dataset(SceneConfig(size=64, seed=11), 4, root)
    return root


def test_make_batch_shapes_and_ranges(dataset):
    run = build_run_config("desk", None, TINY)
    store = DatasetStore(dataset)
    images, masks = TrainingService.load_split(store, store.load_manifest().train)

    x, y = TrainingService.make_batch(images, masks, 1, run)
    assert x.shape == (2, 64, 64, 1) and x.dtype == np.float32
    assert 0.0 <= x.min() and x.max() <= 1.0
    assert y.shape == (2, 64, 64)
    assert set(np.unique(y)) <= {0, 1}

    again, _ = TrainingService.make_batch(images, masks, 1, run)
    np.testing.assert_array_equal(x, again)


def test_train_writes_checkpoint_and_loss_log(dataset, tmp_path):
    run = build_run_config("desk", None, TINY)
    result = TrainingService.train(run, dataset, checkpoint=tmp_path / "model.svsn")

    assert result.checkpoint.exists()
    assert result.loss_log == default_loss_log(tmp_path / "model.svsn")
    with open(result.loss_log, newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["step", "loss", "aux_loss"]
    assert [row[0] for row in rows[1:]] == ["1", "2"]
    assert all(np.isfinite(float(row[1])) for row in rows[1:])


def test_training_is_deterministic(dataset, tmp_path):
    run = build_run_config("desk", None, TINY)
    first = TrainingService.train(run, dataset, checkpoint=tmp_path / "a.svsn")
    second = TrainingService.train(run, dataset, checkpoint=tmp_path / "b.svsn")
    assert first.checkpoint.read_bytes() == second.checkpoint.read_bytes()
    assert first.loss_log.read_text() == second.loss_log.read_text()


def test_without_checkpoint_nothing_is_written(dataset, tmp_path):
    run = build_run_config("desk", None, {**TINY, "training.iterations": 1})
    result = TrainingService.train(run, dataset, augment=False)
    assert result.checkpoint is None and result.loss_log is None
    assert len(result.losses) == 1


def test_numerical_failure_names_the_step(dataset, monkeypatch):
    run = build_run_config("desk", None, TINY)

    def explode(*args, **kwargs):
        raise FloatingPointError("non-finite value in conv2d")

    monkeypatch.setattr(NetworkService, "train_step", staticmethod(explode))
    with pytest.raises(FloatingPointError, match="step 1"):
        TrainingService.train(run, dataset)


def test_crop_size_must_match_input(dataset):
    run = build_run_config("desk", None, {**TINY, "augment.crop_size": 32})
    with pytest.raises(ValueError, match="crop_size"):
        TrainingService.train(run, dataset)


def test_missing_dataset_is_io_error(tmp_path):
    run = build_run_config("desk", None, TINY)
    with pytest.raises(FileNotFoundError):
        TrainingService.train(run, tmp_path / "nothing")
