"""
Shape-Guided Sampling
Halves an observed point set using feature distance and attention similarity to the shape prior
"""

import math
from typing import Optional

import numpy as np
import torch

from ..geometry.neighbors import farthest_point_sample, pairwise_sq_dists

SAMPLING_MODES = ("sgs", "sfd", "sfs", "fps", "random", "uniform")


def _check_widths(features: torch.Tensor, prior_features: torch.Tensor) -> None:
    if features.ndim != 2 or prior_features.ndim != 2 or features.shape[1] != prior_features.shape[1]:
        raise ValueError(
            f"feature widths differ: {tuple(features.shape)} vs prior {tuple(prior_features.shape)}"
        )


def sgs_distance_matrix(features: torch.Tensor, prior_features: torch.Tensor) -> torch.Tensor:
    """D[i][j] = ||f_i - f_j^(r)||_2 between observed and prior feature rows."""
    _check_widths(features, prior_features)
    return pairwise_sq_dists(features, prior_features).clamp_min(0.0).sqrt()


def sgs_aggregate(distances: torch.Tensor) -> torch.Tensor:
    """Overall distance of each observed point to the whole prior: nu_i = sum_j D[i][j]."""
    return distances.sum(dim=1)


def sgs_similarity(features: torch.Tensor, prior_features: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """
    Softmax similarity of every observed point to the prior.

    The dot-product score of a point against all prior rows is reduced to a scalar
    by averaging (or taking the maximum), then normalized over the observed points.
    """
    _check_widths(features, prior_features)
    scores = features @ prior_features.T
    if reduction == "mean":
        score = scores.mean(dim=1)
    elif reduction == "max":
        score = scores.max(dim=1).values
    else:
        raise ValueError(f"unknown score reduction {reduction!r}")
    return torch.softmax(score, dim=0)


def _ascending(values: torch.Tensor) -> torch.Tensor:
    return torch.sort(values, stable=True).indices


def shape_guided_sample(
    features: torch.Tensor,
    prior_features: torch.Tensor,
    reduction: str = "mean",
    mode: str = "sgs",
    points: Optional[torch.Tensor] = None,
    seed: int = 0,
) -> torch.Tensor:
    """
    Select floor(n/2) observed points, returned as ascending indices.

    Args:
        features: n x d observed features
        prior_features: N_r x d prior features
        reduction: score reduction used by the similarity criterion
        mode: "sgs" (both criteria), "sfd" (distance only), "sfs" (similarity only),
              "fps", "random" or "uniform"
        points: n x 3 coordinates, required by "fps"
        seed: stream key for "random"

    Returns:
        long tensor of floor(n/2) sorted, distinct indices
    """
    n = features.shape[0]
    if n < 4:
        raise ValueError(f"shape-guided sampling needs at least 4 points, got {n}")
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}; expected one of {SAMPLING_MODES}")
    half = n // 2

    with torch.no_grad():
        if mode == "fps":
            if points is None:
                raise ValueError("fps sampling requires point coordinates")
            chosen = farthest_point_sample(points, half)
        elif mode == "random":
            rng = np.random.Generator(np.random.Philox(key=seed))
            chosen = torch.as_tensor(rng.permutation(n)[:half], dtype=torch.long)
        elif mode == "uniform":
            chosen = torch.arange(0, 2 * half, 2, dtype=torch.long)
        elif mode == "sfd":
            nu = sgs_aggregate(sgs_distance_matrix(features, prior_features))
            chosen = _ascending(nu)[:half]
        elif mode == "sfs":
            alpha = sgs_similarity(features, prior_features, reduction)
            chosen = _ascending(-alpha)[:half]
        else:
            quarter = math.ceil(n / 4)
            nu = sgs_aggregate(sgs_distance_matrix(features, prior_features))
            by_distance = _ascending(nu)[:quarter]
            alpha = sgs_similarity(features, prior_features, reduction)
            taken = torch.zeros(n, dtype=torch.bool)
            taken[by_distance] = True
            by_similarity = [int(i) for i in _ascending(-alpha) if not taken[i]][: half - quarter]
            chosen = torch.cat([by_distance, torch.as_tensor(by_similarity, dtype=torch.long)])
    return torch.sort(chosen).values
