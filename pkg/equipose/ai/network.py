"""
Assembled Networks
Prior-aware pyramid encoders, the ORT-Deconv decoder, the diffusion denoiser with its
trainable control copy, the observation encoder and the complete pose/size model
"""

import copy
from typing import List, NamedTuple, Optional, Sequence, Tuple

import torch
from torch import nn

from ..geometry.group import RotationGroup, get_group, trivial_group
from ..geometry.neighbors import farthest_point_sample, knn
from ..models import ModelConfig
from .diffusion import TemporalEmbedding
from .heads import HypothesisSet, PoseDecoder, SizeDecoder, decode_pose_hypotheses
from .layers import ORTBlock, ORTOutput, SE3Block, ZeroConv, base_radius, interpolate_features, make_activation, single_domain
from .sampling import shape_guided_sample

STAGES = 4
DESCRIPTOR_WIDTH = 5


def stage_sizes(n: int, stages: int = STAGES) -> List[int]:
    """Point counts after each halving: n/2, n/4, ... (floored)."""
    sizes = []
    for _ in range(stages):
        n //= 2
        sizes.append(n)
    return sizes


def stage_radius(base: float, level: int, growth: float) -> float:
    """Neighborhood radius of pyramid level l: r0 for levels 0 and 1, growing by `growth` per level after."""
    return base * growth ** max(level - 1, 0)


def cloud_rms(points: torch.Tensor) -> float:
    centered = points - points.mean(dim=0)
    return max(float(torch.sqrt((centered ** 2).sum(dim=1).mean())), 1e-12)


def resample_indices(points: torch.Tensor, n: int) -> torch.Tensor:
    """Indices bringing a cloud to exactly n rows: farthest-point when larger, cyclic repetition when smaller."""
    count = points.shape[0]
    if count == 0:
        raise ValueError("cannot resample an empty cloud")
    if count >= n:
        return torch.sort(farthest_point_sample(points, n)).values
    return torch.arange(n, dtype=torch.long) % count


def resample_observed(points: torch.Tensor, n: int, colors: Optional[torch.Tensor] = None):
    index = resample_indices(points, n)
    return points[index], None if colors is None else colors[index]


# ----------------------------------------------------------------------------
# Stems
# ----------------------------------------------------------------------------

class PointStem(nn.Module):
    """Per-point perceptron over raw coordinates (the denoiser's input features)."""

    def __init__(self, d: int, activation: str = "relu"):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(3, d), make_activation(activation), nn.Linear(d, d))

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        return self.mlp(points)


class InvariantStem(nn.Module):
    """
    Per-point perceptron over rigid- and scale-invariant descriptors:
    centroid distance and mean k-NN distance (both relative to the cloud's RMS radius), plus colors.
    """

    def __init__(self, d: int, activation: str = "relu", neighbors: int = 8):
        super().__init__()
        self.neighbors = neighbors
        self.mlp = nn.Sequential(nn.Linear(DESCRIPTOR_WIDTH, d), make_activation(activation), nn.Linear(d, d))

    @staticmethod
    def neighbor_index(points: torch.Tensor, k: int) -> torch.Tensor:
        """
        n x k nearest neighbors of every point, the point itself excluded by index.

        Coincident copies of a point count as neighbors, so self need not be the first hit.
        """
        n = points.shape[0]
        index = knn(points, points, k + 1)
        keep = index != torch.arange(n)[:, None]
        # self is missing from the k + 1 hits when more than k copies coincide
        keep = keep & (torch.cumsum(keep.long(), dim=1) <= k)
        return index[keep].reshape(n, k)

    def descriptors(self, points: torch.Tensor, colors: Optional[torch.Tensor] = None) -> torch.Tensor:
        n = points.shape[0]
        if n == 0:
            raise ValueError("stem input cloud is empty")
        with torch.no_grad():
            rms = cloud_rms(points)
            radial = torch.linalg.vector_norm(points - points.mean(dim=0), dim=1) / rms
            k = min(self.neighbors, n - 1)
            if k > 0:
                index = self.neighbor_index(points, k)
                local = torch.linalg.vector_norm(points[index] - points[:, None, :], dim=-1).mean(dim=1) / rms
            else:
                local = torch.zeros(n, dtype=points.dtype)
        colors = torch.zeros(n, 3, dtype=points.dtype) if colors is None else colors
        return torch.cat([radial[:, None], local[:, None], colors], dim=1)

    def forward(self, points: torch.Tensor, colors: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.mlp(self.descriptors(points, colors))


# ----------------------------------------------------------------------------
# Encoder
# ----------------------------------------------------------------------------

class EncoderOutput(NamedTuple):
    points: List[torch.Tensor]  # P_1..P_4
    features: List[torch.Tensor]  # fused F_1..F_4
    group_maps: List[torch.Tensor]  # F^(1)..F^(4), n_l x d x |G|
    selections: List[torch.Tensor]  # indices kept at each halving
    prior_features: torch.Tensor
    radii: List[float]


class EncoderStage(nn.Module):
    """One pyramid stage: halve the cloud, then run the ORT block at that resolution."""

    def __init__(self, config: ModelConfig, group: RotationGroup, sampling: str):
        super().__init__()
        self.sampling = sampling
        self.score_reduction = config.score_reduction
        self.ort = ORTBlock(
            config.feature_dim, config.heads, group, config.kernel_size, config.k_seed,
            config.max_neighbors, config.influence_ratio, config.activation, config.ablations,
        )

    def forward(self, points: torch.Tensor, features: torch.Tensor, prior_points: torch.Tensor,
                prior_features: torch.Tensor, radius: float, selection: Optional[torch.Tensor] = None,
                seed: int = 0) -> Tuple[torch.Tensor, torch.Tensor, ORTOutput]:
        if selection is None:
            selection = shape_guided_sample(features.detach(), prior_features.detach(), self.score_reduction,
                                            self.sampling, points, seed)
        kept = points[selection]
        return selection, kept, self.ort(kept, features[selection], prior_points, prior_features, radius)


class PyramidEncoder(nn.Module):
    """Four encoder stages; parameters are not shared across stages."""

    def __init__(self, config: ModelConfig, group: RotationGroup, sampling: str):
        super().__init__()
        self.radius_growth = config.radius_growth
        self.stages = nn.ModuleList([EncoderStage(config, group, sampling) for _ in range(STAGES)])

    def forward(self, points: torch.Tensor, features: torch.Tensor, prior_points: torch.Tensor,
                prior_features: torch.Tensor, base: float, selections: Optional[Sequence[torch.Tensor]] = None,
                seed: int = 0) -> EncoderOutput:
        out = EncoderOutput([], [], [], [], prior_features, [])
        for level, stage in enumerate(self.stages, start=1):
            radius = stage_radius(base, level, self.radius_growth)
            given = None if selections is None else selections[level - 1]
            selection, points, result = stage(points, features, prior_points, prior_features, radius, given, seed)
            features, prior_features = result.features, result.prior_features
            out.points.append(points)
            out.features.append(features)
            out.group_maps.append(result.group_map)
            out.selections.append(selection)
            out.radii.append(radius)
        return out._replace(prior_features=prior_features)


def build_encoder(config: ModelConfig) -> "ObservationEncoder":
    """Invariant stem followed by the four shape-guided ORT stages over (P_0, P_r)."""
    return ObservationEncoder(config, get_group(config.group))


# ----------------------------------------------------------------------------
# Decoder
# ----------------------------------------------------------------------------

class ORTDeconv(nn.Module):
    """Interpolate coarse features up one level, merge with the skip, then a group-free SE(3) block."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.feature_dim
        self.max_neighbors = config.max_neighbors
        self.merge = nn.Linear(2 * d, d)
        self.se3 = SE3Block(d, trivial_group(), config.kernel_size, config.influence_ratio,
                            config.activation, config.ablations, kinds=(4,))
        self.activation = make_activation(config.activation)

    def forward(self, fine_points: torch.Tensor, skip: torch.Tensor, coarse_points: torch.Tensor,
                coarse_features: torch.Tensor, radius: float) -> torch.Tensor:
        if skip.shape[0] != fine_points.shape[0]:
            raise ValueError(f"skip has {skip.shape[0]} rows for {fine_points.shape[0]} points")
        if skip.shape[1] != coarse_features.shape[1]:
            raise ValueError(f"skip width {skip.shape[1]} != coarse width {coarse_features.shape[1]}")
        merged = self.merge(torch.cat([interpolate_features(fine_points, coarse_points, coarse_features), skip], dim=1))
        out, _ = self.se3({4: single_domain(fine_points, radius, self.max_neighbors)}, merged)
        return merged + self.activation(out[..., 0])


class PyramidDecoder(nn.Module):
    """Four ORT-Deconv blocks from level 4 back to the full resolution."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.radius_growth = config.radius_growth
        self.blocks = nn.ModuleList([ORTDeconv(config) for _ in range(STAGES)])

    def forward(self, points: Sequence[torch.Tensor], skips: Sequence[torch.Tensor], base: float) -> torch.Tensor:
        """
        Args:
            points: P_0..P_4
            skips: S_0..S_4 (S_0 is the stem output at full resolution)
            base: level-0 radius
        """
        if len(points) != STAGES + 1 or len(skips) != STAGES + 1:
            raise ValueError(f"decoder needs {STAGES + 1} levels of points and skips")
        h = skips[STAGES]
        for block, level in zip(self.blocks, range(STAGES, 0, -1)):
            h = block(points[level - 1], skips[level - 1], points[level], h,
                      stage_radius(base, level - 1, self.radius_growth))
        return h


def build_decoder(config: ModelConfig) -> PyramidDecoder:
    return PyramidDecoder(config)


# ----------------------------------------------------------------------------
# Denoiser
# ----------------------------------------------------------------------------

class Denoiser(nn.Module):
    """
    Noise predictor eps(x_t, f, P_r, t).

    Base: point stem + temporal embedding, farthest-point pyramid of ORT stages over
    (x_t, P_r), ORT-Deconv decoder and a shared perceptron head. After enable_control()
    a trainable copy of the encoder stages receives f through a zero conv and adds its
    stage outputs to the skips through four more zero convs.
    """

    CONTROL_PREFIXES = ("control.", "control_input.", "control_outputs.")

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.feature_dim
        self.config = config
        self.stem = PointStem(d, config.activation)
        self.temporal = TemporalEmbedding(d, make_activation(config.activation))
        self.encoder = PyramidEncoder(config, get_group(config.group), "fps")
        self.decoder = build_decoder(config)
        self.head = nn.Sequential(nn.Linear(2 * d + 3, d), make_activation(config.activation), nn.Linear(d, 3))
        self.control: Optional[PyramidEncoder] = None
        self.control_input: Optional[ZeroConv] = None
        self.control_outputs: Optional[nn.ModuleList] = None

    @property
    def has_control(self) -> bool:
        return self.control is not None

    def enable_control(self, latent_width: int) -> None:
        """Clone the encoder stages into a trainable copy wired in through zero convs."""
        if self.control is not None:
            return
        d = self.config.feature_dim
        self.control = copy.deepcopy(self.encoder)
        for parameter in self.control.parameters():
            parameter.requires_grad_(True)
        self.control_input = ZeroConv(latent_width, d)
        self.control_outputs = nn.ModuleList([ZeroConv(d, d) for _ in range(STAGES)])

    def forward(self, xt: torch.Tensor, latent: Optional[torch.Tensor], prior: torch.Tensor, t: int) -> torch.Tensor:
        if xt.ndim != 2 or xt.shape[1] != 3:
            raise ValueError(f"x_t must be N x 3, got {tuple(xt.shape)}")
        temb = self.temporal(t)
        h0 = self.stem(xt) + temb
        hr = self.stem(prior) + temb
        base = base_radius(xt, self.config.base_radius_quantile) * self.config.radius_scale
        encoded = self.encoder(xt, h0, prior, hr, base)
        skips = list(encoded.features)
        if self.control is not None and latent is not None:
            control_in = h0 + self.control_input(latent).expand_as(h0)
            copied = self.control(xt, control_in, prior, hr, base, selections=encoded.selections)
            skips = [s + zero(c) for s, zero, c in zip(skips, self.control_outputs, copied.features)]
        h = self.decoder([xt] + encoded.points, [h0] + skips, base)
        return self.head(torch.cat([h, xt, temb.expand(xt.shape[0], -1)], dim=1))


# ----------------------------------------------------------------------------
# Observation encoder and the full model
# ----------------------------------------------------------------------------

class ObservationEncoder(nn.Module):
    """Invariant stem and shape-guided pyramid over the observed cloud and the category prior."""

    def __init__(self, config: ModelConfig, group: RotationGroup):
        super().__init__()
        self.config = config
        self.stem = InvariantStem(config.feature_dim, config.activation)
        self.encoder = PyramidEncoder(config, group, config.sampling)

    def forward(self, observed: torch.Tensor, prior: torch.Tensor, colors: Optional[torch.Tensor] = None,
                seed: int = 0) -> EncoderOutput:
        base = base_radius(observed, self.config.base_radius_quantile) * self.config.radius_scale
        return self.encoder(observed, self.stem(observed, colors), prior, self.stem(prior), base, seed=seed)

    def latent(self, observed: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
        if observed.shape[0] == 0 or prior.shape[0] == 0:
            raise ValueError("condition latent needs non-empty observed and prior clouds")
        return torch.cat([self.stem(observed).max(dim=0).values, self.stem(prior).max(dim=0).values])


def compute_condition_latent(observed: torch.Tensor, prior: torch.Tensor, model: "EquiPoseModel") -> torch.Tensor:
    """f: max-pooled stem features of P_0 and of P_r, concatenated (width 2d)."""
    return model.observer.latent(observed, prior)


class EquiPoseModel(nn.Module):
    """Denoiser, observation encoder and the pose/size hypothesis decoders."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.feature_dim
        self.config = config
        self.group = get_group(config.group)
        self.latent_width = 2 * d
        self.phase = "pretrain"
        self.denoiser = Denoiser(config)
        self.observer = build_encoder(config)
        sizes = stage_sizes(config.n_observed)
        self.pose_decoder = PoseDecoder(d, sizes, objects=1, activation=config.activation)
        self.size_decoder = SizeDecoder(d, sizes[-1], objects=1, latent_width=self.latent_width,
                                        activation=config.activation)

    def condition_latent(self, observed: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
        return compute_condition_latent(observed, prior, self)

    def denoise(self, xt: torch.Tensor, latent: Optional[torch.Tensor], prior: torch.Tensor, t: int) -> torch.Tensor:
        return self.denoiser(xt, latent if self.phase == "refine" else None, prior, t)

    def decode_hypotheses(self, observed: torch.Tensor, prior: torch.Tensor, latent: Optional[torch.Tensor] = None,
                          colors: Optional[torch.Tensor] = None) -> HypothesisSet:
        """
        One (pose, size) hypothesis per group element for the observed object.

        Args:
            observed: N_0 x 3 observed cloud (camera frame)
            prior: N_r x 3 canonical category prior
            latent: condition latent f; ignored during pretraining
            colors: optional N_0 x 3 colors

        Returns:
            HypothesisSet with one object
        """
        if observed.shape[0] != self.config.n_observed:
            raise ValueError(f"observed cloud has {observed.shape[0]} points, expected {self.config.n_observed}")
        encoded = self.observer(observed, prior, colors)
        rms = cloud_rms(observed)
        rotations, translations, pose_features = decode_pose_hypotheses(
            self.pose_decoder, encoded.group_maps, self.group, observed.mean(dim=0), rms)
        scale_ref = rms / cloud_rms(prior)
        sizes = self.size_decoder(encoded.features[-1], latent if self.phase == "refine" else None,
                                  pose_features, scale_ref)
        return HypothesisSet(rotations=rotations, translations=translations, sizes=sizes)

    def frozen_names(self) -> List[str]:
        """Parameters locked during refinement: the denoiser base (its control branch excluded)."""
        if self.phase != "refine":
            return []
        return [
            name for name, _ in self.named_parameters()
            if name.startswith("denoiser.") and not name[len("denoiser."):].startswith(Denoiser.CONTROL_PREFIXES)
        ]

    def freeze_base(self) -> None:
        frozen = set(self.frozen_names())
        for name, parameter in self.named_parameters():
            parameter.requires_grad_(name not in frozen)

    def enter_refine(self) -> None:
        """Switch to the refinement phase: add the control copy, then lock the denoiser base."""
        self.denoiser.enable_control(self.latent_width)
        self.phase = "refine"
        self.freeze_base()


def build_model(config: ModelConfig, seed: int = 0) -> EquiPoseModel:
    """Seeded construction: equal (config, seed) pairs give bitwise-equal initial parameters."""
    torch.manual_seed(seed)
    return EquiPoseModel(config)