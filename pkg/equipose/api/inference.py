"""
Inference API endpoints
Shape reconstruction with pose and size estimation for inline observed clouds
"""

from typing import Any, Dict

from fastapi import APIRouter, HTTPException

from ..geometry.pointcloud import as_float_tensor
from ..models import InferRequest
from ..services.inference_service import ObjectInput, get_inference_service

router = APIRouter()


@router.post("/infer")
async def run_inference(request: InferRequest) -> Dict[str, Any]:
    """
    Infer every object of the request with the checkpoint named by EQUIPOSE_CHECKPOINT.

    Returns 503 when no checkpoint is configured and 400 for malformed clouds.
    """
    service = get_inference_service()
    if service is None:
        raise HTTPException(status_code=503, detail="no inference checkpoint configured (EQUIPOSE_CHECKPOINT)")
    if not request.objects:
        raise HTTPException(status_code=400, detail="request has no objects")
    try:
        objects = [
            ObjectInput(obj.instance_id, obj.category,
                        as_float_tensor(obj.observed, "observed", width=3), as_float_tensor(obj.prior, "prior", width=3))
            for obj in request.objects
        ]
        results = service.run(objects, request.seed)
    except ValueError as e:
        print(f"ERROR: [API] inference request rejected: {e}")
        raise HTTPException(status_code=400, detail=str(e))

    response = []
    for result in results:
        item = result.record.model_dump(mode="json")
        if request.include_shape:
            item["shape"] = result.shape.tolist()
        response.append(item)
    print(f"SUCCESS: [API] inferred {len(response)} objects")
    return {"objects": response, **service.describe()}
