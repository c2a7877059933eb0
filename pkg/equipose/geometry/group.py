"""
Discrete Rotation Groups
The icosahedral group (and smaller groups for fast runs) that indexes the group axis of feature maps
"""

from functools import lru_cache
from typing import List

import numpy as np
import torch
from scipy.spatial.transform import Rotation


class RotationGroup:
    """
    Finite rotation group with identity at index 0.

    Attributes:
        name: group label
        elements: |G| x 3 x 3 float64 rotation matrices
        cayley: |G| x |G| long table, cayley[a, b] = index of elements[a] @ elements[b]
        inverse: |G| long table, elements[inverse[a]] = elements[a]^T
    """

    def __init__(self, name: str, matrices: np.ndarray):
        self.name = name
        matrices = np.asarray(matrices, dtype=np.float64)
        angles = np.arccos(np.clip((np.trace(matrices, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0))
        identity = int(np.argmin(angles))
        if angles[identity] > 1e-9:
            raise ValueError(f"group {name} does not contain the identity")
        order = [identity] + [i for i in range(len(matrices)) if i != identity]
        matrices = matrices[order]
        matrices[0] = np.eye(3)

        products = np.einsum("aij,bjk->abik", matrices, matrices)
        distance = np.abs(products[:, :, None] - matrices[None, None]).max(axis=(-1, -2))
        cayley = distance.argmin(axis=-1)
        if distance.min(axis=-1).max() > 1e-8:
            raise ValueError(f"group {name} is not closed under composition")
        for table in (cayley, cayley.T):
            if not all(len(set(row)) == len(row) for row in table):
                raise ValueError(f"group {name} composition table is not a Latin square")

        self.elements = torch.as_tensor(matrices)
        self.cayley = torch.as_tensor(cayley, dtype=torch.long)
        self.inverse = torch.as_tensor(np.argmin(cayley, axis=1), dtype=torch.long)
        self.angles = torch.as_tensor(np.arccos(np.clip((np.trace(matrices, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)))

    @property
    def size(self) -> int:
        return int(self.elements.shape[0])

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"RotationGroup(name={self.name!r}, size={self.size})"

    def left_translation(self, h: int) -> torch.Tensor:
        """
        Group-axis permutation induced by rotating the input by element h.

        For an equivariant map, out(rotated input)[..., g] == out(input)[..., perm[g]].
        """
        return self.cayley[self.inverse[h]]

    def minimal_angle(self) -> float:
        nonzero = self.angles[1:]
        return float(nonzero.min()) if nonzero.numel() else 0.0

    def neighborhood(self) -> List[int]:
        """Elements within the smallest nonzero rotation angle of the identity (identity first)."""
        if self.size == 1:
            return [0]
        limit = self.minimal_angle() + 1e-9
        return [0] + [i for i in range(1, self.size) if float(self.angles[i]) <= limit]

    def quaternions(self) -> torch.Tensor:
        """Elements as (w, x, y, z) quaternions with w >= 0."""
        from .rotations import matrix_to_quat
        return torch.as_tensor(matrix_to_quat(self.elements.numpy()))


@lru_cache(maxsize=None)
def icosahedral_group() -> RotationGroup:
    """The 60 rotations of the icosahedron, identity first, fixed ordering."""
    return RotationGroup("icosahedral", Rotation.create_group("I").as_matrix())


@lru_cache(maxsize=None)
def tetrahedral_group() -> RotationGroup:
    """The 12 rotations of the tetrahedron, identity first."""
    return RotationGroup("tetrahedral", Rotation.create_group("T").as_matrix())


@lru_cache(maxsize=None)
def trivial_group() -> RotationGroup:
    return RotationGroup("trivial", np.eye(3)[None])


def get_group(name: str) -> RotationGroup:
    groups = {
        "icosahedral": icosahedral_group,
        "tetrahedral": tetrahedral_group,
        "trivial": trivial_group,
    }
    if name not in groups:
        raise ValueError(f"unknown rotation group {name!r}; expected one of {sorted(groups)}")
    return groups[name]()
