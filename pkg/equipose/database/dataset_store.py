"""
Dataset Store
Synthetic category datasets on disk: manifest.json, per-category priors and per-instance EPC1 clouds
"""

import json
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import torch

from ..geometry.pointcloud import PointCloud
from ..models import DatasetManifest, InstanceEntry
from .cloud_io import read_epc, write_epc
from .file_store import staged_directory

MANIFEST_FILE = "manifest.json"


class DatasetInstance(NamedTuple):
    entry: InstanceEntry
    canonical: torch.Tensor  # N x 3 ground-truth shape, canonical frame
    observed: torch.Tensor  # M x 3 partial cloud, camera frame
    colors: Optional[torch.Tensor]
    prior: torch.Tensor  # category prior P_r


class Dataset:
    """Read-only view of a dataset directory."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        path = self.root / MANIFEST_FILE
        if not path.exists():
            raise FileNotFoundError(f"no dataset manifest at {path}")
        self.manifest = DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
        self.priors: Dict[str, torch.Tensor] = {
            category: read_epc(self.root / relative).coords_tensor()
            for category, relative in self.manifest.priors.items()
        }
        self._cache: Dict[str, DatasetInstance] = {}

    def __len__(self) -> int:
        return len(self.manifest.instances)

    def symmetry_axis(self, category: str) -> Optional[Tuple[float, float, float]]:
        return self.manifest.symmetry.get(category)

    def entries(self, split: Optional[str] = None) -> List[InstanceEntry]:
        return [e for e in self.manifest.instances if split is None or e.split == split]

    def load(self, entry: InstanceEntry) -> DatasetInstance:
        if entry.instance_id not in self._cache:
            canonical = read_epc(self.root / entry.canonical_file)
            observed = read_epc(self.root / entry.observed_file)
            colors = None if observed.colors is None else torch.as_tensor(observed.colors)
            self._cache[entry.instance_id] = DatasetInstance(
                entry, canonical.coords_tensor(), observed.coords_tensor(), colors, self.priors[entry.category])
        return self._cache[entry.instance_id]

    def instances(self, split: Optional[str] = None) -> List[DatasetInstance]:
        return [self.load(entry) for entry in self.entries(split)]


def write_dataset(
    root: Union[str, Path],
    manifest: DatasetManifest,
    priors: Dict[str, PointCloud],
    clouds: Dict[str, Tuple[PointCloud, PointCloud]],
) -> Path:
    """
    Write a dataset directory in one atomic swap.

    Args:
        root: dataset directory (replaced when it exists)
        manifest: dataset manifest; file paths are relative to root
        priors: category -> prior cloud
        clouds: instance id -> (canonical cloud, observed cloud)
    """
    root = Path(root)
    with staged_directory(root) as staging:
        for category, relative in manifest.priors.items():
            write_epc(staging / relative, priors[category])
        for entry in manifest.instances:
            canonical, observed = clouds[entry.instance_id]
            write_epc(staging / entry.canonical_file, canonical)
            write_epc(staging / entry.observed_file, observed)
        (staging / MANIFEST_FILE).write_text(
            json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return root


def load_dataset(root: Union[str, Path]) -> Dataset:
    try:
        dataset = Dataset(root)
        print(f"SUCCESS: [DATASET] loaded {len(dataset)} instances from {root}")
        return dataset
    except Exception as e:
        print(f"ERROR: [DATASET] failed to load {root}: {e}")
        raise
