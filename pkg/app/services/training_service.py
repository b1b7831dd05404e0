from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union
import csv
import logging

import numpy as np

from app.models import RunConfig
from app.services.attention_service import RenderMode
from app.services.augmentation_service import AugmentationService
from app.services.network_service import NetworkService, StepResult, SVSNetwork
from app.services.optimizer_service import AdamState
from app.storage.checkpoint import CheckpointStore
from app.storage.dataset import DatasetStore

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
LOSS_LOG_HEADER = ("step", "loss", "aux_loss")


@dataclass
class TrainingResult:
    network: SVSNetwork
    losses: List[StepResult] = field(default_factory=list)
    checkpoint: Optional[Path] = None
    loss_log: Optional[Path] = None


def default_loss_log(checkpoint: PathLike) -> Path:
    return Path(checkpoint).with_suffix(".loss.csv")


class TrainingService:
    """Dataset-driven training loop around NetworkService.train_step"""

    @staticmethod
    def render_mode(run: RunConfig) -> RenderMode:
        return RenderMode.parse(run.render_mode, run.truncation_k)

    @staticmethod
    def load_split(store: DatasetStore, ids: List[int]) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        images, masks = [], []
        for sample_id in ids:
            image, mask = store.load_pair(sample_id)
            images.append(image)
            masks.append(mask)
        return images, masks

    @staticmethod
    def make_batch(images: List[np.ndarray], masks: List[np.ndarray], step: int,
                   run: RunConfig, augment: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """Pick ``batch_size`` samples for ``step`` and prepare them at input size.

        Returns images scaled to [0, 1] as (B, S, S, 1) and binary masks (B, S, S).
        """
        batch_size = run.training.batch_size
        size = run.network.input_size
        rng = np.random.default_rng([run.training.seed, step])
        picks = rng.choice(len(images), size=batch_size, replace=len(images) < batch_size)

        batch_images, batch_masks = [], []
        for slot, index in enumerate(picks):
            image, mask = images[index], masks[index]
            if augment:
                sample_rng = AugmentationService.sample_rng(run.augment, step * batch_size + slot)
                image, mask = AugmentationService.compose_pipeline(image, mask, run.augment, sample_rng)
            else:
                image, mask = AugmentationService.resize_pair(image, mask, size)
            batch_images.append(image)
            batch_masks.append(mask)

        x = np.stack(batch_images).astype(np.float32)[..., None] / 255.0
        y = np.stack(batch_masks).astype(np.uint8)
        return x, y

    @staticmethod
    def write_loss_log(path: PathLike, losses: List[StepResult]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(LOSS_LOG_HEADER)
            for step, result in enumerate(losses, start=1):
                writer.writerow((step, repr(result.loss), repr(result.aux_loss)))
        return path

    @staticmethod
    def train(run: RunConfig, data_dir: PathLike, checkpoint: Optional[PathLike] = None,
              loss_log: Optional[PathLike] = None, augment: bool = True) -> TrainingResult:
        """Train on the manifest's train split; optionally persist checkpoint and loss log."""
        if augment and run.augment.crop_size != run.network.input_size:
            raise ValueError(
                f"augment crop_size {run.augment.crop_size} must equal input_size {run.network.input_size}"
            )
        store = DatasetStore(data_dir)
        manifest = store.load_manifest()
        if not manifest.train:
            raise ValueError(f"dataset {data_dir} has an empty train split")
        images, masks = TrainingService.load_split(store, manifest.train)

        mode = TrainingService.render_mode(run)
        net = NetworkService.build_network(run.network)
        opt = AdamState.for_params(net.params, lr=run.training.lr)
        result = TrainingResult(network=net)

        logger.info(
            f"Training {run.training.iterations} steps on {len(images)} scenes "
            f"(preset={run.preset}, lr={run.training.lr}, batch={run.training.batch_size}, "
            f"augment={augment}, render={mode.kind})"
        )
        for step in range(1, run.training.iterations + 1):
            x, y = TrainingService.make_batch(images, masks, step, run, augment)
            try:
                step_result = NetworkService.train_step(net, x, y, opt, run.training, mode)
                if not np.isfinite(step_result.loss):
                    raise FloatingPointError(f"loss is {step_result.loss}")
            except FloatingPointError as e:
                logger.error(f"Numerical failure at step {step}: {e}")
                raise FloatingPointError(f"non-finite value at step {step}: {e}") from e
            result.losses.append(step_result)
            if step % run.training.log_every == 0 or step == run.training.iterations:
                logger.info(
                    f"step {step}/{run.training.iterations} loss={step_result.loss:.4f} "
                    f"aux={step_result.aux_loss:.4f}"
                )

        if checkpoint is not None:
            result.checkpoint = CheckpointStore.save(net, checkpoint)
            log_path = loss_log if loss_log is not None else default_loss_log(checkpoint)
            result.loss_log = TrainingService.write_loss_log(log_path, result.losses)
            logger.info(f"Wrote loss log to {result.loss_log}")
        elif loss_log is not None:
            result.loss_log = TrainingService.write_loss_log(loss_log, result.losses)
        return result
