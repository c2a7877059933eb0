import hashlib
import json
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .geometry.pointcloud import Pose

GroupName = Literal["icosahedral", "tetrahedral"]
SamplingMode = Literal["sgs", "sfd", "sfs", "fps", "random", "uniform"]
Category = Literal["box", "cylinder", "bottle"]


# Run Configuration Models
class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    use_radial_conv: bool = True
    use_graph_conv: bool = True
    use_group_conv: bool = True
    use_seed_points: bool = True


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    feature_dim: int = 32  # d
    heads: int = 4
    group: GroupName = "icosahedral"
    n_points: int = 128  # moving points N
    n_observed: int = 128  # N_0
    kernel_size: int = 16  # K kernel points, center included
    k_seed: int = 3
    max_neighbors: int = 16
    base_radius_quantile: float = 0.1
    radius_growth: float = 2.0
    radius_scale: float = 1.0
    influence_ratio: float = 0.5  # sigma_infl / r
    score_reduction: Literal["mean", "max"] = "mean"
    sampling: SamplingMode = "sgs"
    activation: Literal["relu", "silu"] = "relu"
    ablations: AblationConfig = Field(default_factory=AblationConfig)

    @field_validator("feature_dim")
    @classmethod
    def _even_feature_dim(cls, value: int) -> int:
        if value % 2 != 0:
            raise ValueError(f"feature_dim must be even for the sinusoidal timestep features, got {value}")
        return value

    @model_validator(mode="after")
    def _check_dims(self) -> "ModelConfig":
        if self.feature_dim < 1 or self.heads < 1:
            raise ValueError("feature_dim and heads must be positive")
        if self.feature_dim % self.heads != 0:
            raise ValueError(f"feature_dim {self.feature_dim} is not divisible by heads {self.heads}")
        if self.n_points < 32 or self.n_observed < 32:
            raise ValueError("n_points and n_observed must be >= 32 (four halving stages)")
        if self.kernel_size < 2:
            raise ValueError("kernel_size must be >= 2 (center plus at least one radial kernel)")
        if self.k_seed < 1 or self.max_neighbors < 1:
            raise ValueError("k_seed and max_neighbors must be >= 1")
        if not 0.0 < self.base_radius_quantile < 1.0:
            raise ValueError("base_radius_quantile must lie in (0, 1)")
        if self.radius_growth <= 0 or self.radius_scale <= 0 or self.influence_ratio <= 0:
            raise ValueError("radius_growth, radius_scale and influence_ratio must be positive")
        return self


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T: int = 20
    beta1: float = 1e-4
    betaT: float = 0.05
    kind: Literal["linear"] = "linear"
    reverse_noise: Literal["sigma", "posterior_std"] = "sigma"

    @model_validator(mode="after")
    def _check_bounds(self) -> "ScheduleConfig":
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if not 0.0 < self.beta1 <= self.betaT < 1.0:
            raise ValueError(f"need 0 < beta1 <= betaT < 1, got beta1={self.beta1}, betaT={self.betaT}")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = 1e-3
    decay_factor: float = 0.7
    decay_epochs: int = 40
    batch_size: int = 8
    steps_per_phase: int = 500
    checkpoint_every: int = 100
    epoch_size: int = 0  # samples per epoch; 0 = dataset size
    loss_norm: Literal["squared", "l2"] = "squared"
    hypothesis_weight: float = 1.0
    deterministic: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def _check_positive(self) -> "TrainConfig":
        if self.learning_rate <= 0 or self.batch_size < 1 or self.steps_per_phase < 1:
            raise ValueError("learning_rate, batch_size and steps_per_phase must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_epochs < 1 or self.checkpoint_every < 1 or self.epoch_size < 0:
            raise ValueError("decay_epochs and checkpoint_every must be >= 1, epoch_size >= 0")
        if self.hypothesis_weight < 0:
            raise ValueError("hypothesis_weight must be >= 0")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


# Dataset Models
class SynthSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    categories: List[Category] = Field(default_factory=lambda: ["box", "cylinder", "bottle"])
    instances_per_category: int = 8
    n_points: int = 128
    noise: float = 0.0
    full_visibility: bool = False
    scale_range: Tuple[float, float] = (0.1, 0.3)
    translation_range: float = 0.5
    test_fraction: float = 0.25
    seed: int = 0

    @model_validator(mode="after")
    def _check_spec(self) -> "SynthSpec":
        if not self.categories or len(set(self.categories)) != len(self.categories):
            raise ValueError("categories must be a non-empty list without duplicates")
        if self.instances_per_category < 1:
            raise ValueError("instances_per_category must be >= 1")
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if self.noise < 0 or self.translation_range < 0:
            raise ValueError("noise and translation_range must be >= 0")
        low, high = self.scale_range
        if not 0 < low <= high:
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {self.scale_range}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        return self


class InstanceEntry(BaseModel):
    instance_id: str
    category: Category
    split: Literal["train", "test"]
    canonical_file: str
    observed_file: str
    pose: Pose
    scale: float
    canonical_extents: Tuple[float, float, float]


class DatasetManifest(BaseModel):
    format: Literal["equipose-synth-1"] = "equipose-synth-1"
    spec: SynthSpec
    priors: Dict[str, str]
    symmetry: Dict[str, Optional[Tuple[float, float, float]]]
    instances: List[InstanceEntry]


# Evaluation Models
class OrientedBox(BaseModel):
    model_config = ConfigDict(frozen=True)

    pose: Pose = Field(default_factory=Pose)
    extents: Tuple[float, float, float]

    @field_validator("extents")
    @classmethod
    def _positive_extents(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(not (v > 0) for v in value):
            raise ValueError(f"box extents must be positive, got {value}")
        return value


class EvalRecord(BaseModel):
    instance_id: str
    category: str
    gt_pose: Pose
    gt_scale: float
    gt_extents: Tuple[float, float, float]
    pred_pose: Pose
    pred_scale: float
    pred_extents: Tuple[float, float, float]
    rotation_error_deg: float = Field(ge=0)
    translation_error_cm: float = Field(ge=0)
    iou: float = Field(ge=0, le=1)
    cd: float = Field(ge=0)
    symmetry: Optional[str] = None


class InferenceRecord(BaseModel):
    instance_id: str
    category: str
    quaternion: Tuple[float, float, float, float]
    translation_m: Tuple[float, float, float]
    scale: float
    chamfer: float
    hypothesis_indices: Tuple[int, int]
    canonical_extents: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    shape_file: Optional[str] = None


# API Models
class IoURequest(BaseModel):
    a: OrientedBox
    b: OrientedBox


class PoseErrorRequest(BaseModel):
    pred: Pose
    gt: Pose
    symmetry_axis: Optional[Tuple[float, float, float]] = None


class ChamferRequest(BaseModel):
    a: List[Tuple[float, float, float]]
    b: List[Tuple[float, float, float]]


class InferObject(BaseModel):
    instance_id: str = "object-0"
    category: str = "unknown"
    observed: List[Tuple[float, float, float]]
    prior: List[Tuple[float, float, float]]


class InferRequest(BaseModel):
    objects: List[InferObject]
    seed: int = 0
    include_shape: bool = False


class InferenceBatch(BaseModel):
    records: List[InferenceRecord]
