from fastapi import APIRouter, HTTPException
from app.models import ConfusionCounts, MetricsReport
from app.services.metrics_service import MetricsService
import logging

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/metrics", tags=["Metrics"])


@router.post("", response_model=MetricsReport)
async def compute_metrics(counts: ConfusionCounts):
    """
    Metriken-Endpunkt

    Berechnet die neun Segmentierungsmetriken aus einem Konfusionsquadrupel:
    accuracy, precision, recall, specificity, f1, auc, fdr, g_means und kappa.
    Metriken mit Nenner null werden als `null` geliefert und in
    `undefined` aufgeführt.

    **Beispiel:**
    ```json
    {"tp": 50, "tn": 30, "fp": 10, "fn": 10}
    ```
    """
    try:
        return MetricsService.compute_metrics(counts)
    except ValueError as e:
        logger.error(f"Metrics error: {e}")
        raise HTTPException(status_code=400, detail=str(e))
