"""
Metrics API endpoints
3D IoU, pose error and Chamfer distances over inline boxes, poses and clouds
"""

from typing import Any, Dict

import torch
from fastapi import APIRouter, HTTPException

from ..geometry.neighbors import chamfer
from ..geometry.pointcloud import as_float_tensor
from ..models import ChamferRequest, IoURequest, PoseErrorRequest
from ..services.evaluation_service import cd_metric, iou3d, pose_error

router = APIRouter()


@router.post("/metrics/iou")
async def compute_iou(request: IoURequest) -> Dict[str, Any]:
    """Intersection over union of two oriented boxes."""
    try:
        return {"iou": iou3d(request.a, request.b)}
    except ValueError as e:
        print(f"ERROR: [API] iou request rejected: {e}")
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/metrics/pose-error")
async def compute_pose_error(request: PoseErrorRequest) -> Dict[str, Any]:
    """Rotation error in degrees and translation error in centimeters."""
    try:
        degrees, centimeters = pose_error(request.pred, request.gt, request.symmetry_axis)
        return {"rotation_error_deg": degrees, "translation_error_cm": centimeters}
    except ValueError as e:
        print(f"ERROR: [API] pose-error request rejected: {e}")
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/metrics/chamfer")
async def compute_chamfer(request: ChamferRequest) -> Dict[str, Any]:
    """Summed squared Chamfer distance (selection form) and averaged closest-point distance (evaluation form)."""
    try:
        a = as_float_tensor(request.a, "a", width=3)
        b = as_float_tensor(request.b, "b", width=3)
        if a.shape[0] == 0 or b.shape[0] == 0:
            raise ValueError("both clouds must be non-empty")
        with torch.no_grad():
            summed = float(chamfer(a, b))
        return {"chamfer": summed, "cd": cd_metric(a, b)}
    except ValueError as e:
        print(f"ERROR: [API] chamfer request rejected: {e}")
        raise HTTPException(status_code=400, detail=str(e))
