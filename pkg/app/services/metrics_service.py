from typing import Iterable, List, Optional, Union
import logging
import math

import numpy as np

from app.models import METRIC_NAMES, ConfusionCounts, MetricsReport

logger = logging.getLogger(__name__)


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    if denominator == 0:
        return None
    return numerator / denominator


class MetricsService:
    """Confusion counts, the nine segmentation metrics and corpus aggregation"""

    @staticmethod
    def confusion_from_masks(pred: np.ndarray, truth: np.ndarray,
                             region: Optional[np.ndarray] = None) -> ConfusionCounts:
        """Tally pixels; vessel (non-zero) is the positive class."""
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ValueError(f"mask shape mismatch: pred {pred.shape} vs truth {truth.shape}")
        if region is not None and np.asarray(region).shape != pred.shape:
            raise ValueError(f"region shape {np.asarray(region).shape} does not match masks {pred.shape}")

        p = pred != 0
        t = truth != 0
        selected = np.ones_like(p) if region is None else np.asarray(region) != 0
        return ConfusionCounts(
            tp=int(np.count_nonzero(p & t & selected)),
            tn=int(np.count_nonzero(~p & ~t & selected)),
            fp=int(np.count_nonzero(p & ~t & selected)),
            fn=int(np.count_nonzero(~p & t & selected)),
        )

    @staticmethod
    def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
        total = counts.total
        if total == 0:
            raise ValueError("cannot compute metrics over zero pixels")
        tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn

        accuracy = (tp + tn) / total
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        specificity = _ratio(tn, tn + fp)
        fdr = _ratio(fp, tp + fp)

        f1 = None
        if precision is not None and recall is not None and recall + precision > 0:
            f1 = 2 * (recall * precision) / (recall + precision)

        auc = None
        g_means = None
        if recall is not None and specificity is not None:
            auc = (recall + specificity) / 2
            g_means = math.sqrt(recall * specificity)

        pe = ((tp + fn) * (tp + fp) + (tn + fp) * (tn + fn)) / (total * total)
        kappa = None if pe == 1 else (accuracy - pe) / (1 - pe)

        values = {
            "accuracy": accuracy, "precision": precision, "recall": recall,
            "specificity": specificity, "f1": f1, "auc": auc, "fdr": fdr,
            "g_means": g_means, "kappa": kappa,
        }
        return MetricsReport(
            **values,
            pe=pe,
            counts=counts,
            undefined=[name for name in METRIC_NAMES if values[name] is None],
        )

    @staticmethod
    def aggregate(items: Iterable[Union[ConfusionCounts, MetricsReport]], mode: str = "micro") -> MetricsReport:
        """Micro: metrics of summed counts. Macro: mean of each defined per-image value."""
        items = list(items)
        if not items:
            raise ValueError("cannot aggregate an empty corpus")
        if mode not in ("micro", "macro"):
            raise ValueError(f"Unsupported aggregation mode: {mode}")

        counts: List[ConfusionCounts] = []
        reports: List[MetricsReport] = []
        for item in items:
            if isinstance(item, ConfusionCounts):
                counts.append(item)
                reports.append(MetricsService.compute_metrics(item))
            else:
                reports.append(item)
                if item.counts is not None:
                    counts.append(item.counts)

        summed = None
        if len(counts) == len(items):
            summed = counts[0]
            for extra in counts[1:]:
                summed = summed + extra

        if mode == "micro":
            if summed is None:
                raise ValueError("micro aggregation needs confusion counts for every item")
            report = MetricsService.compute_metrics(summed)
            report.images = len(items)
            return report

        values = {}
        for name in METRIC_NAMES + ("pe",):
            defined = [getattr(r, name) for r in reports if getattr(r, name) is not None]
            values[name] = float(np.mean(defined)) if defined else None
        return MetricsReport(
            **values,
            counts=summed,
            undefined=[name for name in METRIC_NAMES if values[name] is None],
            images=len(items),
        )
