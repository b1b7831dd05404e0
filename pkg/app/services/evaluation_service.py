"""Corpus evaluation: per-image confusion counts, micro/macro reports and the
optional non-perfusion region block, for model predictions, precomputed mask
directories and thresholding baselines."""

from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import json
import logging

import numpy as np

from app.models import ConfusionCounts, ThresholdConfig
from app.services.attention_service import RenderMode
from app.services.inference_service import InferenceService
from app.services.metrics_service import MetricsService
from app.services.network_service import SVSNetwork
from app.services.threshold_service import ThresholdService
from app.storage.dataset import DatasetStore, binary_to_png, png_to_binary, read_gray, sample_name, write_gray

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
REGIONS = ("np",)


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return None if denominator == 0 else numerator / denominator


class EvaluationService:
    """Build JSON-ready evaluation reports"""

    @staticmethod
    def region_block(predictions: Dict[int, np.ndarray], truths: Dict[int, np.ndarray],
                     regions: Dict[int, np.ndarray]) -> Dict[str, Any]:
        """Confusion restricted to the region plus ``np_fdr``.

        ``np_fdr`` is false positives inside the region over all positive
        predictions of the image.
        """
        per_image = []
        restricted: List[ConfusionCounts] = []
        in_region_fp = 0
        predicted_positive = 0
        image_ratios = []
        for sample_id in sorted(predictions):
            pred, region = predictions[sample_id], regions[sample_id]
            counts = MetricsService.confusion_from_masks(pred, truths[sample_id], region)
            positives = int(np.count_nonzero(pred))
            ratio = _ratio(counts.fp, positives)
            in_region_fp += counts.fp
            predicted_positive += positives
            if ratio is not None:
                image_ratios.append(ratio)
            entry: Dict[str, Any] = {"id": sample_id, "pixels": counts.total, "np_fdr": ratio}
            if counts.total > 0:
                restricted.append(counts)
                entry["metrics"] = MetricsService.compute_metrics(counts).model_dump()
            per_image.append(entry)

        block: Dict[str, Any] = {
            "np_fdr": _ratio(in_region_fp, predicted_positive),
            "np_fdr_macro": float(np.mean(image_ratios)) if image_ratios else None,
            "images_with_region": len(restricted),
            "micro": None,
            "macro": None,
            "per_image": per_image,
        }
        if restricted:
            block["micro"] = MetricsService.aggregate(restricted, "micro").model_dump()
            block["macro"] = MetricsService.aggregate(restricted, "macro").model_dump()
        return block

    @staticmethod
    def evaluate_predictions(predictions: Dict[int, np.ndarray], store: DatasetStore,
                             source: str, region: Optional[str] = None) -> Dict[str, Any]:
        if not predictions:
            raise ValueError("nothing to evaluate: the prediction set is empty")
        if region is not None and region not in REGIONS:
            raise ValueError(f"Unsupported region: {region}")

        truths = {sample_id: store.load_mask(sample_id) for sample_id in predictions}
        per_image = []
        counts = []
        for sample_id in sorted(predictions):
            item = MetricsService.confusion_from_masks(predictions[sample_id], truths[sample_id])
            counts.append(item)
            per_image.append({
                "id": sample_id,
                "metrics": MetricsService.compute_metrics(item).model_dump(),
            })

        report: Dict[str, Any] = {
            "source": source,
            "images": len(counts),
            "micro": MetricsService.aggregate(counts, "micro").model_dump(),
            "macro": MetricsService.aggregate(counts, "macro").model_dump(),
            "per_image": per_image,
        }
        if region is not None:
            regions = {sample_id: store.load_region(sample_id) for sample_id in predictions}
            report["region"] = {"name": region, **EvaluationService.region_block(predictions, truths, regions)}
        return report

    @staticmethod
    def test_ids(store: DatasetStore) -> List[int]:
        ids = store.load_manifest().test
        if not ids:
            raise ValueError(f"dataset {store.root} has an empty test split")
        return ids

    @staticmethod
    def predict_split(net: SVSNetwork, store: DatasetStore, ids: List[int],
                      mode: Optional[RenderMode] = None) -> Dict[int, np.ndarray]:
        return {
            sample_id: InferenceService.predict_mask(net, store.load_image(sample_id), mode)
            for sample_id in ids
        }

    @staticmethod
    def evaluate_network(net: SVSNetwork, data_dir: PathLike, region: Optional[str] = None,
                         mode: Optional[RenderMode] = None) -> Dict[str, Any]:
        store = DatasetStore(data_dir)
        ids = EvaluationService.test_ids(store)
        predictions = EvaluationService.predict_split(net, store, ids, mode)
        return EvaluationService.evaluate_predictions(predictions, store, "model", region)

    @staticmethod
    def evaluate_directory(pred_dir: PathLike, data_dir: PathLike,
                           region: Optional[str] = None) -> Dict[str, Any]:
        """Score precomputed ``NNNN.png`` masks (0/255) against the test split."""
        store = DatasetStore(data_dir)
        pred_dir = Path(pred_dir)
        predictions = {
            sample_id: png_to_binary(read_gray(pred_dir / sample_name(sample_id)))
            for sample_id in EvaluationService.test_ids(store)
        }
        return EvaluationService.evaluate_predictions(predictions, store, f"masks:{pred_dir}", region)

    @staticmethod
    def run_baseline(data_dir: PathLike, cfg: ThresholdConfig, masks_dir: Optional[PathLike] = None,
                     region: Optional[str] = None) -> Dict[str, Any]:
        """Threshold every test image, optionally writing the masks as 0/255 PNGs."""
        store = DatasetStore(data_dir)
        predictions = {
            sample_id: ThresholdService.threshold(store.load_image(sample_id), cfg)
            for sample_id in EvaluationService.test_ids(store)
        }
        if masks_dir is not None:
            masks_dir = Path(masks_dir)
            masks_dir.mkdir(parents=True, exist_ok=True)
            for sample_id, mask in predictions.items():
                write_gray(masks_dir / sample_name(sample_id), binary_to_png(mask))
            logger.info(f"Wrote {len(predictions)} {cfg.method} masks to {masks_dir}")
        return EvaluationService.evaluate_predictions(predictions, store, f"baseline:{cfg.method}", region)

    @staticmethod
    def write_report(report: Dict[str, Any], path: PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            logger.error(f"Failed to write report {path}: {e}")
            raise
        logger.info(f"Wrote {report['source']} report over {report['images']} images to {path}")
        return path
