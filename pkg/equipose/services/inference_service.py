"""
Inference Service
Shape sampling, hypothesis decoding and selection for every observed object
"""

from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import torch

from ..ai.diffusion import DiffusionSchedule, make_rng, sample_shape, schedule_from_config
from ..ai.heads import SelectionResult, canonical_extents, select_best
from ..ai.network import EquiPoseModel, resample_observed
from ..config import EQUIPOSE_CHECKPOINT
from ..database.checkpoint_store import restore_model
from ..database.cloud_io import read_epc, write_epc
from ..database.dataset_store import Dataset
from ..database.file_store import atomic_write_text
from ..geometry.pointcloud import PointCloud, as_float_tensor
from ..models import InferenceBatch, InferenceRecord

PREDICTIONS_FILE = "predictions.json"
SHAPES_DIR = "shapes"


class ObjectInput(NamedTuple):
    instance_id: str
    category: str
    observed: torch.Tensor  # camera-frame partial cloud, any size
    prior: torch.Tensor  # canonical category prior
    colors: Optional[torch.Tensor] = None


class ObjectResult(NamedTuple):
    shape: torch.Tensor  # canonical reconstruction, N x 3
    selection: SelectionResult
    record: InferenceRecord


def infer_object(model: EquiPoseModel, obj: ObjectInput, schedule: DiffusionSchedule, seed: int,
                 ordinal: int, noise_mode: str = "sigma") -> ObjectResult:
    """
    Sample a canonical shape, decode the |G| x |G| hypotheses and keep the best pair.

    Each object draws from its own Philox stream (seed, ordinal + 1), so results do not
    depend on which other objects share the call.
    """
    config = model.config
    observed_full = as_float_tensor(obj.observed, "observed cloud", width=3)
    prior = as_float_tensor(obj.prior, "prior", width=3)
    if observed_full.shape[0] == 0 or prior.shape[0] == 0:
        raise ValueError(f"object {obj.instance_id!r} has an empty observed or prior cloud")
    observed, colors = resample_observed(observed_full, config.n_observed, obj.colors)
    prior, _ = resample_observed(prior, config.n_points)
    rng = make_rng(seed, ordinal + 1)
    with torch.no_grad():
        latent = model.condition_latent(observed, prior) if model.phase == "refine" else None
        shape = sample_shape(model.denoise, latent, prior, config.n_points, schedule, rng, noise_mode)
        hyps = model.decode_hypotheses(observed, prior, latent, colors)
    selection = select_best(hyps, [shape], [observed_full])[0]
    record = InferenceRecord(
        instance_id=obj.instance_id,
        category=obj.category,
        quaternion=selection.pose.rotation,
        translation_m=selection.pose.translation,
        scale=selection.scale.value,
        chamfer=selection.chamfer,
        hypothesis_indices=selection.indices,
        canonical_extents=canonical_extents(shape),
    )
    return ObjectResult(shape, selection, record)


def infer(model: EquiPoseModel, objects: Sequence[ObjectInput], schedule: DiffusionSchedule,
          seed: int = 0, noise_mode: str = "sigma") -> List[ObjectResult]:
    """One (shape, pose, scale) result per input object, in input order."""
    model.eval()
    return [infer_object(model, obj, schedule, seed, k, noise_mode) for k, obj in enumerate(objects)]


def dataset_objects(dataset: Dataset, split: Optional[str] = "test") -> List[ObjectInput]:
    return [
        ObjectInput(inst.entry.instance_id, inst.entry.category, inst.observed, inst.prior, inst.colors)
        for inst in dataset.instances(split)
    ]


def write_predictions(results: Sequence[ObjectResult], out_dir: Union[str, Path]) -> List[InferenceRecord]:
    """Write shapes/<id>.epc and predictions.json; records reference their shape file."""
    out_dir = Path(out_dir)
    records = []
    for result in results:
        relative = f"{SHAPES_DIR}/{result.record.instance_id}.epc"
        write_epc(out_dir / relative, PointCloud(coords=result.shape.numpy()))
        records.append(result.record.model_copy(update={"shape_file": relative}))
    atomic_write_text(out_dir / PREDICTIONS_FILE,
                      InferenceBatch(records=records).model_dump_json(indent=2) + "\n")
    return records


def read_predictions(out_dir: Union[str, Path]) -> Tuple[List[InferenceRecord], Dict[str, torch.Tensor]]:
    """Records of a predictions directory and the canonical shapes they reference."""
    out_dir = Path(out_dir)
    path = out_dir / PREDICTIONS_FILE
    if not path.exists():
        raise FileNotFoundError(f"no predictions at {path}")
    records = InferenceBatch.model_validate_json(path.read_text(encoding="utf-8")).records
    shapes = {}
    for record in records:
        if record.shape_file is None:
            raise ValueError(f"prediction {record.instance_id!r} has no shape file")
        shapes[record.instance_id] = read_epc(out_dir / record.shape_file).coords_tensor()
    return records, shapes


def run_inference(checkpoint: Union[str, Path], dataset: Dataset, out_dir: Union[str, Path],
                  seed: int = 0, split: Optional[str] = "test") -> List[InferenceRecord]:
    """Restore a checkpoint, infer every instance of a dataset split and write the predictions."""
    try:
        model, manifest = restore_model(checkpoint)
        config = manifest.run_config()
        results = infer(model, dataset_objects(dataset, split), schedule_from_config(config.schedule), seed,
                        config.schedule.reverse_noise)
        records = write_predictions(results, out_dir)
        print(f"SUCCESS: [INFER] {len(records)} objects written to {out_dir}")
        return records
    except Exception as e:
        print(f"ERROR: [INFER] inference failed: {e}")
        raise


class InferenceService:
    """Checkpoint-backed inference for the HTTP surface."""

    def __init__(self, checkpoint: Union[str, Path]):
        self.checkpoint = Path(checkpoint)
        self.model, self.manifest = restore_model(self.checkpoint)
        config = self.manifest.run_config()
        self.schedule = schedule_from_config(config.schedule)
        self.noise_mode = config.schedule.reverse_noise
        print(f"SUCCESS: [INFER] model loaded from {self.checkpoint} ({self.manifest.phase})")

    def run(self, objects: Sequence[ObjectInput], seed: int = 0) -> List[ObjectResult]:
        return infer(self.model, objects, self.schedule, seed, self.noise_mode)

    def describe(self) -> Dict[str, Any]:
        return {"checkpoint": str(self.checkpoint), "phase": self.manifest.phase, "step": self.manifest.step}


# Global instance
_inference_service: Optional[InferenceService] = None


def get_inference_service() -> Optional[InferenceService]:
    """Service for EQUIPOSE_CHECKPOINT, loaded on first use; None when no checkpoint is configured."""
    global _inference_service
    if _inference_service is None:
        if not EQUIPOSE_CHECKPOINT or not Path(EQUIPOSE_CHECKPOINT).exists():
            return None
        _inference_service = InferenceService(EQUIPOSE_CHECKPOINT)
    return _inference_service
