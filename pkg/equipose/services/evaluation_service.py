"""
Evaluation Service
3D IoU of oriented boxes, rotation/translation errors, a°b cm accuracies and the averaged Chamfer metric
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from ..config import get_thread_cap
from ..geometry.neighbors import pairwise_sq_dists
from ..geometry.pointcloud import Pose, as_float_tensor
from ..geometry.rotations import geodesic_angle
from ..models import EvalRecord, OrientedBox

IOU_THRESHOLDS = {"iou50": 0.5, "iou75": 0.75}
POSE_THRESHOLDS = {
    "5deg2cm": (5.0, 2.0),
    "5deg5cm": (5.0, 5.0),
    "10deg2cm": (10.0, 2.0),
    "10deg5cm": (10.0, 5.0),
}
SUMMARY_KEYS = ("count", "iou50", "iou75", "5deg2cm", "5deg5cm", "10deg2cm", "10deg5cm", "mean_cd")
# Interior slack below this counts as a touching (zero-volume) intersection
INTERIOR_TOL = 1e-12


# ----------------------------------------------------------------------------
# 3D IoU
# ----------------------------------------------------------------------------

def box_volume(box: OrientedBox) -> float:
    return float(np.prod(box.extents))


def box_halfspaces(box: OrientedBox) -> np.ndarray:
    """Six halfspaces [n, -offset] with n . x - offset <= 0 (scipy convention)."""
    rotation = box.pose.rotation_matrix().numpy()
    center = np.asarray(box.pose.translation)
    rows = []
    for axis in range(3):
        normal = rotation[:, axis]
        half = box.extents[axis] / 2.0
        reach = float(normal @ center)
        rows.append(np.concatenate([normal, [-(reach + half)]]))
        rows.append(np.concatenate([-normal, [reach - half]]))
    return np.array(rows)


def _aligned_intersection(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection volume of two boxes sharing one rotation, measured in that frame."""
    rotation = a.pose.rotation_matrix().numpy()
    offset = rotation.T @ (np.asarray(b.pose.translation) - np.asarray(a.pose.translation))
    volume = 1.0
    for axis in range(3):
        half_a, half_b = a.extents[axis] / 2.0, b.extents[axis] / 2.0
        overlap = min(half_a, offset[axis] + half_b) - max(-half_a, offset[axis] - half_b)
        if overlap <= 0:
            return 0.0
        volume *= overlap
    return volume


def _polytope_intersection(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection volume by halfspace intersection of the twelve box faces."""
    halfspaces = np.vstack([box_halfspaces(a), box_halfspaces(b)])
    norms = np.linalg.norm(halfspaces[:, :-1], axis=1, keepdims=True)
    cost = np.zeros(4)
    cost[-1] = -1.0
    result = linprog(cost, A_ub=np.hstack([halfspaces[:, :-1], norms]), b_ub=-halfspaces[:, -1],
                     bounds=[(None, None)] * 3 + [(0, None)])
    if not result.success or result.x[-1] <= INTERIOR_TOL:
        return 0.0
    try:
        vertices = HalfspaceIntersection(halfspaces, result.x[:3]).intersections
        return float(ConvexHull(vertices).volume)
    except QhullError:
        return 0.0


def iou3d(a: OrientedBox, b: OrientedBox) -> float:
    """
    Intersection over union of two oriented boxes.

    Boxes with identical rotations use the closed-form overlap; all others go
    through exact convex polytope intersection.
    """
    for box in (a, b):
        if any(not (e > 0) for e in box.extents):
            raise ValueError(f"degenerate box extents {box.extents}")
    gap = np.linalg.norm(np.asarray(a.pose.translation) - np.asarray(b.pose.translation))
    if gap > (np.linalg.norm(a.extents) + np.linalg.norm(b.extents)) / 2.0:
        return 0.0
    if a.pose.rotation == b.pose.rotation:
        inter = _aligned_intersection(a, b)
    else:
        inter = _polytope_intersection(a, b)
    union = box_volume(a) + box_volume(b) - inter
    return float(min(1.0, max(0.0, inter / union)))


# ----------------------------------------------------------------------------
# Pose error and accuracies
# ----------------------------------------------------------------------------

def pose_error(pred: Pose, gt: Pose, symmetry_axis: Optional[Sequence[float]] = None) -> Tuple[float, float]:
    """
    (rotation error in degrees, translation error in centimeters).

    With a symmetry axis the rotation error is the smallest over all rotations
    of the ground truth about that axis, i.e. the angle between the two posed axes.
    """
    if symmetry_axis is None:
        degrees = math.degrees(geodesic_angle(pred.rotation, gt.rotation))
    else:
        axis = np.asarray(symmetry_axis, dtype=np.float64)
        norm = float(np.linalg.norm(axis))
        if norm == 0:
            raise ValueError("symmetry axis must be non-zero")
        axis = axis / norm
        a = pred.rotation_matrix().numpy() @ axis
        b = gt.rotation_matrix().numpy() @ axis
        degrees = math.degrees(math.acos(min(1.0, max(-1.0, float(a @ b)))))
    centimeters = 100.0 * float(np.linalg.norm(np.asarray(pred.translation) - np.asarray(gt.translation)))
    return degrees, centimeters


def accuracy_at(records: Sequence[Any], a_deg: float, b_cm: float) -> float:
    """Fraction of records with rotation error < a_deg and translation error < b_cm."""
    if len(records) == 0:
        raise ValueError("accuracy needs at least one record")
    hits = sum(1 for r in records if _field(r, "rotation_error_deg") < a_deg and _field(r, "translation_error_cm") < b_cm)
    return hits / len(records)


def cd_metric(pred: Any, gt: Any) -> float:
    """Average closest-point distance, averaged over both directions."""
    pred = as_float_tensor(pred, "predicted shape", width=3)
    gt = as_float_tensor(gt, "ground-truth shape", width=3)
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        raise ValueError("cd_metric requires two non-empty point sets")
    with torch.no_grad():
        d = pairwise_sq_dists(pred, gt).clamp_min(0.0).sqrt()
        return 0.5 * (float(d.min(dim=1).values.mean()) + float(d.min(dim=0).values.mean()))


# ----------------------------------------------------------------------------
# Records and summaries
# ----------------------------------------------------------------------------

def _field(record: Any, name: str) -> float:
    return float(record[name] if isinstance(record, Mapping) else getattr(record, name))


def evaluate_instance(
    instance_id: str,
    category: str,
    gt_pose: Pose,
    gt_scale: float,
    canonical_extents: Sequence[float],
    pred_pose: Pose,
    pred_scale: float,
    pred_canonical_extents: Sequence[float],
    pred_shape: Any,
    gt_shape: Any,
    symmetry_axis: Optional[Sequence[float]] = None,
) -> EvalRecord:
    gt_extents = tuple(gt_scale * float(e) for e in canonical_extents)
    pred_extents = tuple(pred_scale * float(e) for e in pred_canonical_extents)
    degrees, centimeters = pose_error(pred_pose, gt_pose, symmetry_axis)
    iou = iou3d(OrientedBox(pose=pred_pose, extents=pred_extents), OrientedBox(pose=gt_pose, extents=gt_extents))
    return EvalRecord(
        instance_id=instance_id,
        category=category,
        gt_pose=gt_pose,
        gt_scale=gt_scale,
        gt_extents=gt_extents,
        pred_pose=pred_pose,
        pred_scale=pred_scale,
        pred_extents=pred_extents,
        rotation_error_deg=degrees,
        translation_error_cm=centimeters,
        iou=iou,
        cd=cd_metric(pred_shape, gt_shape),
        symmetry=None if symmetry_axis is None else ",".join(repr(float(v)) for v in symmetry_axis),
    )


def evaluate_many(jobs: Iterable[Dict[str, Any]]) -> List[EvalRecord]:
    """evaluate_instance over keyword-argument dicts, in input order, on up to EQUIPOSE_THREADS threads."""
    jobs = list(jobs)
    with ThreadPoolExecutor(max_workers=get_thread_cap()) as pool:
        return list(pool.map(lambda job: evaluate_instance(**job), jobs))


def summarize(records: Sequence[Any]) -> Dict[str, float]:
    """
    Summary metrics from EvalRecords or from rows holding the same numeric fields.

    Returns:
        {"count", "iou50", "iou75", "5deg2cm", "5deg5cm", "10deg2cm", "10deg5cm", "mean_cd"}
    """
    if len(records) == 0:
        raise ValueError("cannot summarize an empty record set")
    n = len(records)
    summary: Dict[str, float] = {"count": n}
    for key, threshold in IOU_THRESHOLDS.items():
        summary[key] = sum(1 for r in records if _field(r, "iou") >= threshold) / n
    for key, (a_deg, b_cm) in POSE_THRESHOLDS.items():
        summary[key] = accuracy_at(records, a_deg, b_cm)
    total = 0.0
    for r in records:
        total += _field(r, "cd")
    summary["mean_cd"] = total / n
    return summary


def build_jobs(predictions: Sequence[Any], dataset: Any, shapes: Mapping[str, Any],
               use_symmetry: bool = True) -> List[Dict[str, Any]]:
    """
    Pair inference records with dataset ground truth.

    Args:
        predictions: InferenceRecords
        dataset: a loaded Dataset
        shapes: instance id -> predicted canonical shape
        use_symmetry: quotient rotation errors by the category symmetry axis
    """
    entries = {e.instance_id: e for e in dataset.entries()}
    jobs = []
    for record in predictions:
        if record.instance_id not in entries:
            raise ValueError(f"prediction for unknown instance {record.instance_id!r}")
        entry = entries[record.instance_id]
        instance = dataset.load(entry)
        jobs.append(dict(
            instance_id=entry.instance_id,
            category=entry.category,
            gt_pose=entry.pose,
            gt_scale=entry.scale,
            canonical_extents=entry.canonical_extents,
            pred_pose=Pose(rotation=record.quaternion, translation=record.translation_m),
            pred_scale=record.scale,
            pred_canonical_extents=record.canonical_extents,
            pred_shape=shapes[record.instance_id],
            gt_shape=instance.canonical,
            symmetry_axis=dataset.symmetry_axis(entry.category) if use_symmetry else None,
        ))
    return jobs
