"""
Rotation Utilities
Quaternion conversions and the similarity transform used to pose canonical shapes
"""

from typing import Any, Optional

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .pointcloud import Pose, Scale, as_float_tensor


def quat_to_matrix(q: Any) -> torch.Tensor:
    """
    Convert unit quaternions (w, x, y, z) to rotation matrices.

    Args:
        q: (..., 4) quaternion(s); q and -q give the same matrix

    Returns:
        (..., 3, 3) rotation matrices
    """
    q = as_float_tensor(q, "quaternion", width=4)
    norm = torch.linalg.vector_norm(q, dim=-1, keepdim=True)
    if bool((norm == 0).any()):
        raise ValueError("zero quaternion has no rotation")
    if bool(((norm - 1.0).abs() > 1e-6).any()):
        raise ValueError("quaternion must have unit norm (tolerance 1e-6)")
    q = q / norm
    w, x, y, z = q.unbind(-1)
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=-1).reshape(q.shape[:-1] + (3, 3))


def normalize_quaternion(q: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Project raw 4-vectors to unit quaternions with w >= 0 (differentiable)."""
    q = q / torch.linalg.vector_norm(q, dim=-1, keepdim=True).clamp_min(eps)
    sign = torch.where(q[..., :1] < 0, -torch.ones_like(q[..., :1]), torch.ones_like(q[..., :1]))
    return q * sign


def matrix_to_quat(rotation: Any) -> np.ndarray:
    """Rotation matrix (..., 3, 3) to quaternion (w, x, y, z) with w >= 0."""
    rotation = np.asarray(rotation.detach().cpu() if isinstance(rotation, torch.Tensor) else rotation, dtype=np.float64)
    xyzw = Rotation.from_matrix(rotation).as_quat()
    wxyz = np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1)
    return np.where(wxyz[..., :1] < 0, -wxyz, wxyz)


def quat_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Hamilton product a * b of (..., 4) quaternions (w, x, y, z)."""
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], dim=-1)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation as a quaternion (w, x, y, z), w >= 0."""
    return matrix_to_quat(Rotation.random(random_state=rng).as_matrix())


def geodesic_angle(q_a: Any, q_b: Any) -> float:
    """Rotation angle in radians between two unit quaternions."""
    q_a = np.asarray(q_a, dtype=np.float64)
    q_b = np.asarray(q_b, dtype=np.float64)
    cos_half = min(1.0, abs(float(np.dot(q_a, q_b))))
    return 2.0 * float(np.arccos(cos_half))


def transform_points(points: torch.Tensor, rotation: torch.Tensor, translation: torch.Tensor,
                     scale: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Similarity transform s * R * x + t applied row-wise (differentiable, batched).

    Args:
        points: (..., N, 3)
        rotation: (..., 3, 3)
        translation: (..., 3)
        scale: (...) positive scale, or None for 1
    """
    posed = points @ rotation.transpose(-1, -2)
    if scale is not None:
        posed = posed * scale[..., None, None]
    return posed + translation[..., None, :]


def apply_pose(points: Any, pose: Pose, scale: Scale) -> torch.Tensor:
    """
    Pose a canonical point set: every row becomes scale.value * R * x + t.

    Args:
        points: N x 3 canonical points
        pose: rotation quaternion + translation
        scale: uniform scale (value > 0 is enforced by Scale)

    Returns:
        N x 3 posed points
    """
    points = as_float_tensor(points, "points", width=3)
    rotation = pose.rotation_matrix()
    translation = pose.translation_tensor()
    return transform_points(points, rotation, translation, torch.tensor(scale.value, dtype=torch.float64))
