"""
Synthetic Category Dataset
Procedural boxes, cylinders and bottles with random proportions, poses and partial views
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.spatial import ConvexHull

from ..ai.diffusion import make_rng
from ..database.dataset_store import write_dataset
from ..geometry.pointcloud import PointCloud, Pose
from ..geometry.rotations import quat_to_matrix, random_rotation
from ..models import DatasetManifest, InstanceEntry, SynthSpec

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SYMMETRY_AXES: Dict[str, Optional[Tuple[float, float, float]]] = {
    "box": None,
    "cylinder": (0.0, 1.0, 0.0),
    "bottle": (0.0, 1.0, 0.0),
}
# Spherical-flip radius factor of hidden point removal (R = factor * max distance)
HPR_RADIUS_FACTOR = 100.0


# ----------------------------------------------------------------------------
# Parametric families
# ----------------------------------------------------------------------------

def parameter_grid(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Fixed low-discrepancy (u, v) samples in [0, 1)^2; the same n points for every instance."""
    i = np.arange(n, dtype=np.float64)
    return np.mod(i * GOLDEN, 1.0), (i + 0.5) / n


def box_points(half_extents: np.ndarray, n: int) -> np.ndarray:
    """Fibonacci-sphere directions projected radially onto the box surface."""
    u, v = parameter_grid(n)
    theta = 2.0 * math.pi * u
    z = 1.0 - 2.0 * v
    ring = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    directions = np.stack([ring * np.cos(theta), z, ring * np.sin(theta)], axis=1)
    reach = np.max(np.abs(directions) / half_extents, axis=1, keepdims=True)
    return directions / reach


def revolution_points(profile: np.ndarray, n: int) -> np.ndarray:
    """
    Surface of revolution about +y.

    profile: K x 2 polyline of (radius, height) from the bottom pole to the top pole;
    v runs along its arc length, u around the axis.
    """
    u, v = parameter_grid(n)
    segments = np.diff(profile, axis=0)
    lengths = np.linalg.norm(segments, axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    arc = v * cumulative[-1]
    index = np.clip(np.searchsorted(cumulative, arc, side="right") - 1, 0, len(segments) - 1)
    fraction = (arc - cumulative[index]) / np.where(lengths[index] > 0, lengths[index], 1.0)
    radius_height = profile[index] + fraction[:, None] * segments[index]
    theta = 2.0 * math.pi * u
    radius = radius_height[:, 0]
    return np.stack([radius * np.cos(theta), radius_height[:, 1], radius * np.sin(theta)], axis=1)


def normalize_shape(points: np.ndarray) -> np.ndarray:
    """Center on the bounding-box center and scale to unit bounding-box diagonal."""
    low, high = points.min(axis=0), points.max(axis=0)
    diagonal = float(np.linalg.norm(high - low))
    if diagonal <= 0:
        raise ValueError("degenerate shape with zero bounding-box diagonal")
    return (points - (low + high) / 2.0) / diagonal


def category_shape(category: str, rng: np.random.Generator, n: int) -> np.ndarray:
    """One normalized canonical instance; draws its proportions from rng."""
    if category == "box":
        half = rng.uniform(0.5, 1.0, size=3)
        return normalize_shape(box_points(half, n))
    if category == "cylinder":
        radius, height = rng.uniform(0.3, 0.6), rng.uniform(0.8, 1.6)
        profile = np.array([[0.0, -height / 2], [radius, -height / 2], [radius, height / 2], [0.0, height / 2]])
        return normalize_shape(revolution_points(profile, n))
    if category == "bottle":
        radius, height = rng.uniform(0.3, 0.5), rng.uniform(1.2, 1.8)
        neck, shoulder = radius * rng.uniform(0.3, 0.5), rng.uniform(0.1, 0.3) * height
        profile = np.array([
            [0.0, -height / 2], [radius, -height / 2], [radius, shoulder],
            [neck, shoulder + 0.15 * height], [neck, height / 2], [0.0, height / 2],
        ])
        return normalize_shape(revolution_points(profile, n))
    raise ValueError(f"unknown category {category!r}")


# ----------------------------------------------------------------------------
# Observation
# ----------------------------------------------------------------------------

def hidden_point_removal(points: np.ndarray, viewpoint: np.ndarray) -> np.ndarray:
    """Indices of points visible from viewpoint (spherical flip + convex hull), ascending."""
    offsets = points - viewpoint
    norms = np.linalg.norm(offsets, axis=1, keepdims=True)
    radius = HPR_RADIUS_FACTOR * float(norms.max())
    flipped = offsets + 2.0 * (radius - norms) * offsets / np.where(norms > 0, norms, 1.0)
    hull = ConvexHull(np.vstack([flipped, np.zeros((1, 3))]))
    return np.array(sorted(int(v) for v in hull.vertices if v < len(points)), dtype=np.int64)


def observe(canonical: np.ndarray, pose: Pose, scale: float, rng: np.random.Generator,
            noise: float, full_visibility: bool) -> np.ndarray:
    """Pose the canonical cloud, keep the part visible from a random viewpoint, add Gaussian noise."""
    rotation = quat_to_matrix(pose.rotation).numpy()
    posed = scale * canonical @ rotation.T + np.asarray(pose.translation)
    direction = rng.standard_normal(3)
    direction /= max(float(np.linalg.norm(direction)), 1e-12)
    if not full_visibility:
        viewpoint = np.asarray(pose.translation) + 3.0 * scale * direction
        posed = posed[hidden_point_removal(posed, viewpoint)]
    if noise > 0:
        posed = posed + noise * rng.standard_normal(posed.shape)
    return posed


def split_counts(count: int, test_fraction: float) -> int:
    """Number of test instances among count (rounded half up)."""
    return int(math.floor(count * test_fraction + 0.5))


# ----------------------------------------------------------------------------
# Generation
# ----------------------------------------------------------------------------

def generate(spec: SynthSpec) -> Tuple[DatasetManifest, Dict[str, PointCloud], Dict[str, Tuple[PointCloud, PointCloud]]]:
    """
    Build the whole dataset in memory. Instance k of category c uses the
    Philox stream (seed, ordinal + 1), so every instance is reproducible on its own.
    Each category prior averages only its train-split shapes.

    Returns:
        (manifest, priors by category, (canonical, observed) clouds by instance id)
    """
    instances: List[InstanceEntry] = []
    priors: Dict[str, PointCloud] = {}
    clouds: Dict[str, Tuple[PointCloud, PointCloud]] = {}
    ordinal = 0
    for category in spec.categories:
        shapes = []
        # at least one train instance per category feeds the prior
        n_test = min(split_counts(spec.instances_per_category, spec.test_fraction), spec.instances_per_category - 1)
        for k in range(spec.instances_per_category):
            ordinal += 1
            rng = make_rng(spec.seed, ordinal)
            canonical = category_shape(category, rng, spec.n_points)
            pose = Pose(rotation=tuple(float(v) for v in random_rotation(rng)),
                        translation=tuple(float(v) for v in rng.uniform(-spec.translation_range,
                                                                        spec.translation_range, size=3)))
            scale = float(rng.uniform(*spec.scale_range))
            observed = observe(canonical, pose, scale, rng, spec.noise, spec.full_visibility)
            instance_id = f"{category}-{k:04d}"
            split = "test" if k >= spec.instances_per_category - n_test else "train"
            extents = canonical.max(axis=0) - canonical.min(axis=0)
            instances.append(InstanceEntry(
                instance_id=instance_id,
                category=category,
                split=split,
                canonical_file=f"instances/{instance_id}_canonical.epc",
                observed_file=f"instances/{instance_id}_observed.epc",
                pose=pose,
                scale=scale,
                canonical_extents=tuple(float(max(e, 1e-9)) for e in extents),
            ))
            clouds[instance_id] = (PointCloud(coords=canonical), PointCloud(coords=observed))
            if split == "train":
                shapes.append(canonical)
        priors[category] = PointCloud(coords=np.mean(np.stack(shapes), axis=0))

    manifest = DatasetManifest(
        spec=spec,
        priors={category: f"priors/{category}.epc" for category in spec.categories},
        symmetry={category: SYMMETRY_AXES[category] for category in spec.categories},
        instances=instances,
    )
    return manifest, priors, clouds


def synth_dataset(spec: SynthSpec, root: Union[str, Path]) -> DatasetManifest:
    """Generate a dataset and write it to root (replacing any previous content)."""
    try:
        manifest, priors, clouds = generate(spec)
        write_dataset(root, manifest, priors, clouds)
        print(f"SUCCESS: [DATASET] wrote {len(manifest.instances)} instances "
              f"({', '.join(spec.categories)}) to {root}")
        return manifest
    except Exception as e:
        print(f"ERROR: [DATASET] generation failed: {e}")
        raise
