from fastapi import APIRouter, File, HTTPException, Query, Response, UploadFile
from pydantic import ValidationError
from app.models import ThresholdConfig
from app.services.threshold_service import ThresholdService
from app.storage.dataset import binary_to_png, decode_gray, encode_gray
import logging

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/baseline", tags=["Baseline"])


@router.post("", response_class=Response)
async def threshold_image(
    file: UploadFile = File(...),
    method: str = Query("otsu", description="otsu oder local_mean"),
    window: int = Query(15, description="Fenstergröße für local_mean (ungerade, >= 3)"),
    offset: int = Query(5, description="Offset für local_mean in Intensitätsstufen"),
):
    """
    Schwellwert-Baseline-Endpunkt

    Binarisiert ein hochgeladenes Graustufen-PNG ohne Modell und liefert die
    Maske (0/255) als PNG.

    - `otsu`: globaler Schwellwert mit maximaler Zwischenklassenvarianz
    - `local_mean`: Pixel über dem Fenstermittel plus `offset`
    """
    try:
        cfg = ThresholdConfig(method=method, window=window, offset=offset)
        image = decode_gray(await file.read())
        mask = ThresholdService.threshold(image, cfg)
        return Response(content=encode_gray(binary_to_png(mask)), media_type="image/png")
    except (ValidationError, ValueError) as e:
        logger.error(f"Baseline error: {e}")
        raise HTTPException(status_code=400, detail=str(e))
