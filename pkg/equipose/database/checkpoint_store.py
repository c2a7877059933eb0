"""
Checkpoint Store
Named-tensor container (little-endian f64) with a JSON manifest, saved as one atomic directory
"""

import json
from pathlib import Path
from typing import Dict, List, Literal, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field

from ..ai.network import EquiPoseModel, build_model
from ..models import RunConfig
from .file_store import staged_directory

TENSORS_FILE = "tensors.bin"
MANIFEST_FILE = "manifest.json"


class TensorEntry(BaseModel):
    name: str
    shape: List[int]
    offset: int  # in bytes
    count: int


class CheckpointManifest(BaseModel):
    format: Literal["equipose-ckpt-1"] = "equipose-ckpt-1"
    phase: Literal["pretrain", "refine"]
    step: int = Field(ge=0)
    config_hash: str
    config: dict
    frozen: List[str]
    tensors: List[TensorEntry]

    def run_config(self) -> RunConfig:
        return RunConfig.model_validate(self.config)


def encode_tensors(tensors: Dict[str, torch.Tensor]) -> Tuple[bytes, List[TensorEntry]]:
    entries = []
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        array = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f8")
        entries.append(TensorEntry(name=name, shape=list(array.shape), offset=offset, count=int(array.size)))
        chunks.append(array.tobytes())
        offset += array.nbytes
    return b"".join(chunks), entries


def decode_tensors(data: bytes, entries: List[TensorEntry]) -> Dict[str, torch.Tensor]:
    tensors = {}
    for entry in entries:
        end = entry.offset + 8 * entry.count
        if end > len(data):
            raise ValueError(f"tensor {entry.name!r} runs past the end of {TENSORS_FILE}")
        array = np.frombuffer(data, dtype="<f8", count=entry.count, offset=entry.offset)
        tensors[entry.name] = torch.from_numpy(array.astype(np.float64).reshape(entry.shape))
    return tensors


def save_checkpoint(directory: Union[str, Path], model: EquiPoseModel, config: RunConfig, step: int) -> Path:
    """
    Write model parameters and buffers with their manifest.

    The directory is staged and swapped in as a whole, so a reader never sees a
    half-written checkpoint.
    """
    directory = Path(directory)
    try:
        payload, entries = encode_tensors(model.state_dict())
        manifest = CheckpointManifest(
            phase=model.phase,
            step=step,
            config_hash=config.config_hash(),
            config=config.model_dump(mode="json"),
            frozen=model.frozen_names(),
            tensors=entries,
        )
        with staged_directory(directory) as staging:
            (staging / TENSORS_FILE).write_bytes(payload)
            (staging / MANIFEST_FILE).write_text(
                json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"SUCCESS: [CHECKPOINT] saved {manifest.phase} step {step} to {directory}")
        return directory
    except Exception as e:
        print(f"ERROR: [CHECKPOINT] failed to save {directory}: {e}")
        raise


def read_manifest(directory: Union[str, Path]) -> CheckpointManifest:
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    return CheckpointManifest.model_validate_json(path.read_text(encoding="utf-8"))


def load_checkpoint(directory: Union[str, Path]) -> Tuple[CheckpointManifest, Dict[str, torch.Tensor]]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    tensors = decode_tensors((directory / TENSORS_FILE).read_bytes(), manifest.tensors)
    return manifest, tensors


def restore_model(directory: Union[str, Path]) -> Tuple[EquiPoseModel, CheckpointManifest]:
    """Rebuild the model described by a checkpoint and load its tensors (strict name and shape match)."""
    try:
        manifest, tensors = load_checkpoint(directory)
        config = manifest.run_config()
        model = build_model(config.model, config.train.seed)
        if manifest.phase == "refine":
            model.enter_refine()
        expected = model.state_dict()
        for name, tensor in tensors.items():
            if name in expected and tuple(expected[name].shape) != tuple(tensor.shape):
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {tuple(tensor.shape)}, model expects {tuple(expected[name].shape)}"
                )
        model.load_state_dict(tensors, strict=True)
        print(f"SUCCESS: [CHECKPOINT] restored {manifest.phase} step {manifest.step} from {directory}")
        return model, manifest
    except Exception as e:
        print(f"ERROR: [CHECKPOINT] failed to restore {directory}: {e}")
        raise
