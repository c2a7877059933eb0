"""
Pose and Size Hypothesis Heads
Decoders that emit one (pose, size) hypothesis per object and group element,
and the Chamfer-based selection of the best hypothesis pair
"""

import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, model_validator
from torch import nn

from ..geometry.group import RotationGroup
from ..geometry.neighbors import batched_chamfer, chamfer
from ..geometry.pointcloud import Pose, Scale, as_float_tensor
from ..geometry.rotations import normalize_quaternion, quat_multiply, quat_to_matrix
from .layers import ZeroConv, make_activation

IDENTITY_QUATERNION = (1.0, 0.0, 0.0, 0.0)


class HypothesisSet(BaseModel):
    """
    K objects x |G| hypotheses.

    rotations K x G x 4 unit quaternions (w >= 0), translations K x G x 3, sizes K x G (> 0).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rotations: torch.Tensor
    translations: torch.Tensor
    sizes: torch.Tensor

    @model_validator(mode="after")
    def _check(self) -> "HypothesisSet":
        k, g = self.sizes.shape
        if self.rotations.shape != (k, g, 4) or self.translations.shape != (k, g, 3):
            raise ValueError(
                f"hypothesis shapes disagree: rotations {tuple(self.rotations.shape)}, "
                f"translations {tuple(self.translations.shape)}, sizes {tuple(self.sizes.shape)}"
            )
        norms = torch.linalg.vector_norm(self.rotations.detach(), dim=-1)
        if bool(((norms - 1.0).abs() > 1e-6).any()):
            raise ValueError("hypothesis quaternions must have unit norm")
        if not bool((self.sizes.detach() > 0).all()):
            raise ValueError("hypothesis sizes must be positive")
        return self

    @property
    def objects(self) -> int:
        return int(self.sizes.shape[0])

    @property
    def group_size(self) -> int:
        return int(self.sizes.shape[1])

    def pose(self, k: int, i: int) -> Pose:
        q = self.rotations[k, i].detach()
        return Pose(
            rotation=tuple(float(v) for v in q / torch.linalg.vector_norm(q)),
            translation=tuple(float(v) for v in self.translations[k, i].detach()),
        )

    def scale(self, k: int, j: int, canonical_extents: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> Scale:
        return Scale(value=float(self.sizes[k, j].detach()), canonical_extents=canonical_extents)

    def detach(self) -> "HypothesisSet":
        return HypothesisSet(rotations=self.rotations.detach(), translations=self.translations.detach(),
                             sizes=self.sizes.detach())


# ----------------------------------------------------------------------------
# Decoders
# ----------------------------------------------------------------------------

class PoseDecoder(nn.Module):
    """
    Maps the group feature maps of all encoder stages to raw pose hypotheses.

    Per stage a linear map over the point axis (n_l -> K) is shared by every channel
    and group element; the stages are max-pooled feature-wise, and a perceptron
    emits 7 raw values (quaternion residual, translation offset) per object and group element.
    """

    def __init__(self, d: int, stage_points: Sequence[int], objects: int = 1, activation: str = "relu"):
        super().__init__()
        if objects < 1:
            raise ValueError("objects must be >= 1")
        self.d = d
        self.stage_points = tuple(stage_points)
        self.point_maps = nn.ModuleList([nn.Linear(n, objects) for n in self.stage_points])
        self.mlp = nn.Sequential(nn.Linear(d, d), make_activation(activation), nn.Linear(d, 7))

    def forward(self, group_maps: Sequence[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            group_maps: one n_l x d x |G| map per stage

        Returns:
            (raw K x |G| x 7, pose features K x |G| x d)
        """
        if len(group_maps) != len(self.point_maps):
            raise ValueError(f"pose decoder needs {len(self.point_maps)} stage maps, got {len(group_maps)}")
        pooled = None
        for stage, (layer, fmap) in enumerate(zip(self.point_maps, group_maps)):
            if fmap.ndim != 3 or fmap.shape[0] != layer.in_features or fmap.shape[1] != self.d:
                raise ValueError(
                    f"stage {stage + 1} map has shape {tuple(fmap.shape)}, expected ({layer.in_features}, {self.d}, G)"
                )
            mapped = torch.einsum("ndg,kn->kdg", fmap, layer.weight) + layer.bias[:, None, None]
            pooled = mapped if pooled is None else torch.maximum(pooled, mapped)
        features = pooled.permute(0, 2, 1)
        return self.mlp(features), features


def anchor_hypotheses(raw: torch.Tensor, group: RotationGroup, origin: torch.Tensor,
                      spread: float = 1.0) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Compose raw outputs with their group anchors.

    Rotation i is G_i * q_i with q_i = normalize(raw[:4] + identity); translation i is
    origin + spread * G_i delta_i.

    Returns:
        (rotations K x G x 4, translations K x G x 3)
    """
    if raw.ndim != 3 or raw.shape[1] != group.size or raw.shape[2] != 7:
        raise ValueError(f"raw hypotheses must be K x {group.size} x 7, got {tuple(raw.shape)}")
    identity = torch.tensor(IDENTITY_QUATERNION, dtype=raw.dtype)
    local = normalize_quaternion(raw[..., :4] + identity)
    anchors = group.quaternions().to(raw.dtype)
    rotations = normalize_quaternion(quat_multiply(anchors[None].expand_as(local), local))
    offsets = torch.einsum("gij,kgj->kgi", group.elements.to(raw.dtype), raw[..., 4:])
    return rotations, origin + spread * offsets


def decode_pose_hypotheses(decoder: PoseDecoder, group_maps: Sequence[torch.Tensor], group: RotationGroup,
                           origin: torch.Tensor, spread: float = 1.0) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(rotations K x G x 4, translations K x G x 3, pose features K x G x d)."""
    raw, features = decoder(group_maps)
    rotations, translations = anchor_hypotheses(raw, group, origin, spread)
    return rotations, translations, features


class SizeDecoder(nn.Module):
    """
    Size branch: F_4 concatenated with its zero-conv conditioned counterpart, three
    perceptron stages, a point-axis map to K objects, plus the pose-branch features.

    Sizes are exp(output) times the reference scale, so they are always positive.
    """

    def __init__(self, d: int, n_points: int, objects: int = 1, latent_width: Optional[int] = None,
                 activation: str = "relu"):
        super().__init__()
        self.d = d
        self.n_points = n_points
        self.latent_width = 2 * d if latent_width is None else latent_width
        self.condition = ZeroConv(d + self.latent_width, d)
        self.stages = nn.Sequential(
            nn.Linear(2 * d, d), make_activation(activation),
            nn.Linear(d, d), make_activation(activation),
            nn.Linear(d, d), make_activation(activation),
        )
        self.point_map = nn.Linear(n_points, objects)
        self.mlp = nn.Sequential(nn.Linear(d, d), make_activation(activation), nn.Linear(d, 1))

    def conditioned(self, features: torch.Tensor, latent: Optional[torch.Tensor]) -> torch.Tensor:
        """Zero-conv conditioned F_4; exactly zero when no latent is given."""
        if latent is None:
            return torch.zeros_like(features)
        if latent.shape[-1] != self.latent_width:
            raise ValueError(f"latent width {latent.shape[-1]} != {self.latent_width}")
        return self.condition(torch.cat([features, latent.expand(features.shape[0], -1)], dim=-1))

    def forward(self, features: torch.Tensor, latent: Optional[torch.Tensor], pose_features: torch.Tensor,
                scale_ref: float = 1.0) -> torch.Tensor:
        """
        Args:
            features: F_4, n_4 x d
            latent: condition latent f (width latent_width), or None for the unconditioned decode
            pose_features: K x |G| x d from the pose decoder
            scale_ref: reference scale multiplied into every size

        Returns:
            K x |G| positive sizes
        """
        if features.shape != (self.n_points, self.d):
            raise ValueError(f"F_4 has shape {tuple(features.shape)}, expected ({self.n_points}, {self.d})")
        if pose_features.shape[-1] != self.d:
            raise ValueError(f"pose features width {pose_features.shape[-1]} != {self.d}")
        hidden = self.stages(torch.cat([features, self.conditioned(features, latent)], dim=-1))
        base = torch.einsum("nd,kn->kd", hidden, self.point_map.weight) + self.point_map.bias[:, None]
        out = self.mlp(base[:, None, :] + pose_features).squeeze(-1)
        return torch.exp(out + math.log(scale_ref))


# ----------------------------------------------------------------------------
# Hypothesis selection
# ----------------------------------------------------------------------------

class SelectionResult(NamedTuple):
    pose: Pose
    scale: Scale
    shape: torch.Tensor  # posed canonical shape
    chamfer: float
    indices: Tuple[int, int]  # (pose i*, size j*)


def canonical_extents(points: torch.Tensor) -> Tuple[float, float, float]:
    """Axis-aligned extents of a canonical shape (floored at 1e-9)."""
    span = points.detach().max(dim=0).values - points.detach().min(dim=0).values
    return tuple(float(v) for v in span.clamp_min(1e-9))


def hypothesis_matrices(rotations: torch.Tensor) -> torch.Tensor:
    """Rotation matrices of hypothesis quaternions, renormalized; shared by every selection path."""
    return quat_to_matrix(rotations)


def pose_hypothesis(canon: torch.Tensor, matrix: torch.Tensor, translation: torch.Tensor,
                    size: torch.Tensor) -> torch.Tensor:
    """size * R canon + t; a vector of sizes gives one posed copy per size."""
    return (canon @ matrix.T) * size[..., None, None] + translation


def hypothesis_distances(rotations: torch.Tensor, translations: torch.Tensor, sizes: torch.Tensor,
                         canon: torch.Tensor, observed: torch.Tensor) -> torch.Tensor:
    """G x G summed Chamfer distances; entry (i, j) poses canon with rotation/translation i and size j."""
    if observed.shape[0] == 0 or canon.shape[0] == 0:
        raise ValueError("hypothesis selection needs non-empty canonical and observed clouds")
    matrices = hypothesis_matrices(rotations)
    rows = [batched_chamfer(pose_hypothesis(canon, matrices[i], translations[i], sizes), observed)
            for i in range(rotations.shape[0])]
    return torch.stack(rows)


def _check_objects(hyps: HypothesisSet, canon: Sequence, observed: Sequence) -> None:
    if len(canon) != hyps.objects or len(observed) != hyps.objects:
        raise ValueError(
            f"{hyps.objects} objects in the hypothesis set, {len(canon)} canonical shapes, {len(observed)} observations"
        )


def select_best(hyps: HypothesisSet, canon: Sequence[torch.Tensor],
                observed: Sequence[torch.Tensor]) -> List[SelectionResult]:
    """
    Pose every canonical shape under all |G| x |G| (pose, size) pairs and keep the pair
    closest to the observation. Ties go to the smallest i, then the smallest j.
    """
    _check_objects(hyps, canon, observed)
    results = []
    with torch.no_grad():
        for k in range(hyps.objects):
            shape = as_float_tensor(canon[k], "canonical shape", width=3)
            cloud = as_float_tensor(observed[k], "observed cloud", width=3)
            distances = hypothesis_distances(hyps.rotations[k], hyps.translations[k], hyps.sizes[k], shape, cloud)
            flat = int(np.argmin(distances.numpy().ravel()))
            i, j = divmod(flat, hyps.group_size)
            posed = pose_hypothesis(shape, hypothesis_matrices(hyps.rotations[k, i]), hyps.translations[k, i],
                                    hyps.sizes[k, j])
            results.append(SelectionResult(hyps.pose(k, i), hyps.scale(k, j, canonical_extents(shape)), posed,
                                           float(distances[i, j]), (i, j)))
    return results


def scan_hypotheses(hyps: HypothesisSet, canon: torch.Tensor, observed: torch.Tensor, k: int = 0) -> Tuple[int, int, float]:
    """Reference exhaustive scan over every (i, j) pair, one Chamfer evaluation at a time."""
    canon = as_float_tensor(canon, "canonical shape", width=3)
    matrices = hypothesis_matrices(hyps.rotations[k].detach())
    best = (0, 0, math.inf)
    for i in range(hyps.group_size):
        for j in range(hyps.group_size):
            posed = pose_hypothesis(canon, matrices[i], hyps.translations[k, i].detach(), hyps.sizes[k, j].detach())
            value = float(chamfer(posed, observed))
            if value < best[2]:
                best = (i, j, value)
    return best


def hypothesis_loss(hyps: HypothesisSet, canon: Sequence[torch.Tensor], observed: Sequence[torch.Tensor]) -> torch.Tensor:
    """
    Winner-take-all selection loss: the best pair is picked without gradient, then its
    Chamfer distance, divided by N + M, is differentiated. Summed over objects.
    """
    _check_objects(hyps, canon, observed)
    total = torch.zeros((), dtype=torch.float64)
    for k in range(hyps.objects):
        with torch.no_grad():
            distances = hypothesis_distances(hyps.rotations[k].detach(), hyps.translations[k].detach(),
                                             hyps.sizes[k].detach(), canon[k].detach(), observed[k])
            i, j = divmod(int(np.argmin(distances.numpy().ravel())), hyps.group_size)
        posed = pose_hypothesis(canon[k], hypothesis_matrices(hyps.rotations[k, i]), hyps.translations[k, i],
                                hyps.sizes[k, j])
        total = total + chamfer(posed, observed[k]) / (canon[k].shape[0] + observed[k].shape[0])
    return total
