"""
Point Cloud Types
Point clouds, rigid poses and scales shared by every other module
"""

from typing import Any, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, field_validator, model_validator


def as_float_tensor(values: Any, name: str = "input", width: Optional[int] = None) -> torch.Tensor:
    """
    Convert array-like input into a float64 tensor and check it is finite.

    Args:
        values: Array-like or tensor
        name: Argument name used in error messages
        width: Required size of the last axis, if any

    Returns:
        float64 tensor (autograd history is kept when the input already is a tensor)
    """
    if isinstance(values, torch.Tensor):
        tensor = values if values.dtype == torch.float64 else values.to(torch.float64)
    else:
        tensor = torch.as_tensor(np.asarray(values, dtype=np.float64))
    if width is not None and (tensor.ndim < 1 or tensor.shape[-1] != width):
        raise ValueError(f"{name} must have last dimension {width}, got shape {tuple(tensor.shape)}")
    if not bool(torch.isfinite(tensor).all()):
        raise ValueError(f"{name} contains non-finite values")
    return tensor


class PointCloud(BaseModel):
    """N points in meters with optional normals, colors and per-point features."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    coords: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None

    @field_validator("coords")
    @classmethod
    def _check_coords(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2 or value.shape[1] != 3:
            raise ValueError(f"coords must be N x 3, got {value.shape}")
        if not np.isfinite(value).all():
            raise ValueError("coords contain non-finite values")
        return value

    @field_validator("normals")
    @classmethod
    def _check_normals(cls, value: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if value is None:
            return None
        value = np.asarray(value, dtype=np.float64)
        norms = np.linalg.norm(value, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-6):
            raise ValueError("normals must be unit vectors (tolerance 1e-6)")
        return value

    @field_validator("colors")
    @classmethod
    def _check_colors(cls, value: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if value is None:
            return None
        value = np.asarray(value, dtype=np.float64)
        if value.min(initial=0.0) < 0.0 or value.max(initial=0.0) > 1.0:
            raise ValueError("colors must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def _check_rows(self) -> "PointCloud":
        n = self.coords.shape[0]
        for label, channel in (("normals", self.normals), ("colors", self.colors), ("features", self.features)):
            if channel is not None and (channel.ndim != 2 or channel.shape[0] != n):
                raise ValueError(f"{label} must have {n} rows, got shape {channel.shape}")
        if self.normals is not None and self.normals.shape[1] != 3:
            raise ValueError("normals must be N x 3")
        if self.colors is not None and self.colors.shape[1] != 3:
            raise ValueError("colors must be N x 3")
        return self

    @property
    def n_points(self) -> int:
        return int(self.coords.shape[0])

    @property
    def feature_width(self) -> int:
        return 0 if self.features is None else int(self.features.shape[1])

    def coords_tensor(self) -> torch.Tensor:
        return torch.as_tensor(self.coords, dtype=torch.float64)

    def with_coords(self, coords: np.ndarray) -> "PointCloud":
        return PointCloud(coords=coords, normals=self.normals, colors=self.colors, features=self.features)


class Pose(BaseModel):
    """Rigid pose: unit quaternion (w, x, y, z) with w >= 0 and a translation in meters."""

    model_config = ConfigDict(frozen=True)

    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator("rotation")
    @classmethod
    def _canonical_quaternion(cls, value: Tuple[float, float, float, float]) -> Tuple[float, float, float, float]:
        q = np.asarray(value, dtype=np.float64)
        if not np.isfinite(q).all():
            raise ValueError("rotation quaternion contains non-finite values")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion must have unit norm, got {norm}")
        q = q / norm
        if q[0] < 0:
            q = -q
        return tuple(float(v) for v in q)

    @field_validator("translation")
    @classmethod
    def _finite_translation(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if not np.isfinite(np.asarray(value, dtype=np.float64)).all():
            raise ValueError("translation contains non-finite values")
        return tuple(float(v) for v in value)

    def quaternion_tensor(self) -> torch.Tensor:
        return torch.tensor(self.rotation, dtype=torch.float64)

    def translation_tensor(self) -> torch.Tensor:
        return torch.tensor(self.translation, dtype=torch.float64)

    def rotation_matrix(self) -> torch.Tensor:
        from .rotations import quat_to_matrix
        return quat_to_matrix(self.quaternion_tensor())

    @classmethod
    def from_matrix(cls, rotation: Any, translation: Any) -> "Pose":
        from .rotations import matrix_to_quat
        q = matrix_to_quat(rotation)
        return cls(rotation=tuple(float(v) for v in q), translation=tuple(float(v) for v in np.asarray(translation, dtype=np.float64)))


class Scale(BaseModel):
    """Uniform scale multiplier of the canonical shape; extents are derived in meters."""

    model_config = ConfigDict(frozen=True)

    value: float = 1.0
    canonical_extents: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    @field_validator("value")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not np.isfinite(value) or value <= 0:
            raise ValueError(f"scale value must be positive, got {value}")
        return float(value)

    @field_validator("canonical_extents")
    @classmethod
    def _positive_extents(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any((not np.isfinite(v)) or v <= 0 for v in value):
            raise ValueError(f"canonical extents must be positive, got {value}")
        return tuple(float(v) for v in value)

    @property
    def extents(self) -> Tuple[float, float, float]:
        return tuple(self.value * e for e in self.canonical_extents)
