"""
Neighbor Queries
k-nearest neighbors, radius balls, farthest-point sampling and the summed Chamfer distance
"""

from typing import Any, Tuple

import torch

from .pointcloud import as_float_tensor

# Query rows processed per block in brute-force scans
QUERY_BLOCK = 1024


def pairwise_sq_dists(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Exact squared Euclidean distances between rows of a (M x d) and b (N x d)."""
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)


def knn(query: Any, reference: Any, k: int) -> torch.Tensor:
    """
    Indices of the k nearest reference rows for every query row.

    Rows are ordered by ascending distance, ties broken by the smaller index.

    Args:
        query: M x d
        reference: N x d (same width as query)
        k: neighbors per row, k <= N

    Returns:
        M x k long tensor
    """
    query = as_float_tensor(query, "query")
    reference = as_float_tensor(reference, "reference")
    if query.ndim != 2 or reference.ndim != 2 or query.shape[1] != reference.shape[1]:
        raise ValueError(f"query and reference widths differ: {tuple(query.shape)} vs {tuple(reference.shape)}")
    if k < 0 or k > reference.shape[0]:
        raise ValueError(f"k={k} exceeds reference size {reference.shape[0]}")
    blocks = []
    with torch.no_grad():
        for start in range(0, query.shape[0], QUERY_BLOCK):
            d = pairwise_sq_dists(query[start:start + QUERY_BLOCK], reference)
            blocks.append(torch.sort(d, dim=1, stable=True).indices[:, :k])
    if not blocks:
        return torch.zeros((0, k), dtype=torch.long)
    return torch.cat(blocks, dim=0)


def ball_query(centers: torch.Tensor, support: torch.Tensor, radius: float,
               max_neighbors: int = 0, exclude_self: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Support points within radius of every center, nearest first, ties by index.

    Args:
        centers: M x 3
        support: N x 3
        radius: ball radius (inclusive)
        max_neighbors: cap on neighbors per center (0 = no cap)
        exclude_self: drop support index i for center i (centers and support are the same set)

    Returns:
        (indices M x H long, mask M x H bool); padded slots have index 0 and mask False
    """
    with torch.no_grad():
        d = pairwise_sq_dists(centers, support)
        inside = d <= radius * radius
        if exclude_self:
            eye = torch.eye(centers.shape[0], support.shape[0], dtype=torch.bool)
            inside = inside & ~eye
        counts = inside.sum(dim=1)
        width = int(counts.max()) if counts.numel() else 0
        if max_neighbors > 0:
            width = min(width, max_neighbors)
        if width == 0:
            empty = torch.zeros((centers.shape[0], 0), dtype=torch.long)
            return empty, empty.bool()
        masked = torch.where(inside, d, torch.full_like(d, float("inf")))
        order = torch.sort(masked, dim=1, stable=True).indices[:, :width]
        mask = torch.gather(inside, 1, order)
        indices = torch.where(mask, order, torch.zeros_like(order))
    return indices, mask


def farthest_point_sample(points: torch.Tensor, m: int) -> torch.Tensor:
    """Deterministic farthest-point sampling starting at index 0; returns m indices."""
    n = points.shape[0]
    if m > n:
        raise ValueError(f"cannot sample {m} points from {n}")
    with torch.no_grad():
        selected = torch.zeros(m, dtype=torch.long)
        min_d = torch.full((n,), float("inf"), dtype=points.dtype)
        current = 0
        for i in range(m):
            selected[i] = current
            min_d = torch.minimum(min_d, ((points - points[current]) ** 2).sum(-1))
            current = int(torch.argmax(min_d))
    return selected


def chamfer(a: Any, b: Any) -> torch.Tensor:
    """
    Summed squared Chamfer distance between two point sets.

    sum_{x in A} min_{y in B} |x - y|^2 + sum_{y in B} min_{x in A} |x - y|^2
    """
    a = as_float_tensor(a, "A")
    b = as_float_tensor(b, "B")
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer requires two non-empty point sets")
    d = pairwise_sq_dists(a, b)
    return d.min(dim=1).values.sum() + d.min(dim=0).values.sum()


def batched_chamfer(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Summed Chamfer distance for every leading index: a (..., N, 3), b (M, 3) -> (...)."""
    d = ((a[..., :, None, :] - b[None, :, :]) ** 2).sum(-1)
    return d.min(dim=-1).values.sum(-1) + d.min(dim=-2).values.sum(-1)
