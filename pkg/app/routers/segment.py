from fastapi import APIRouter, File, HTTPException, Query, Response, UploadFile
from app.services.model_service import model_service
from app.storage.dataset import decode_gray, encode_gray
import logging

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/segment", tags=["Segment"])


@router.post("", response_class=Response)
async def segment_image(
    file: UploadFile = File(...),
    output: str = Query("mask", description="mask, final_prob, backbone_prob oder attention"),
):
    """
    Segmentierungs-Endpunkt

    Wendet den geladenen Checkpoint auf ein hochgeladenes Graustufen-PNG an und
    liefert eine Karte als 8-Bit-PNG in der Größe des Uploads:

    - `mask`: binäre Gefäßmaske (0/255), finale Wahrscheinlichkeit >= 0.5
    - `final_prob`: Backbone-Wahrscheinlichkeit mal Attention-Karte
    - `backbone_prob`: Ausgabe der Backbone-Stufe
    - `attention`: gerenderte Gauß-Attention-Karte
    """
    if not model_service.is_available():
        raise HTTPException(status_code=503, detail="No checkpoint loaded")
    try:
        image = decode_gray(await file.read())
        pixels = model_service.segment(image, output)
        return Response(content=encode_gray(pixels), media_type="image/png")
    except HTTPException:
        raise
    except ValueError as e:
        logger.error(f"Segment error: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Segment error: {e}")
        raise HTTPException(status_code=500, detail=f"Segmentation failed: {e}")
