"""
Self-Test Service
Quick invariant suite behind `equipose selftest`: group structure, equivariance, scale
invariance, diffusion statistics, ELBO identities, selection, metrics, zero-init
equivalence and gradient checking
"""

import math
import time
from typing import Callable, List, Tuple

import numpy as np
import torch
from pydantic import BaseModel
from torch import nn

from ..ai.diffusion import make_rng, make_schedule
from ..ai.elbo import GaussianReverseModel, elbo_rewrite_gap, elbo_terms, monte_carlo_elbo
from ..ai.heads import HypothesisSet, scan_hypotheses, select_best
from ..ai.layers import GroupConv, ScaleInvariantGraphConv, SE3Layer, gather_neighborhood, graph_conv_inputs, single_domain
from ..ai.network import build_model
from ..geometry.group import RotationGroup, get_group
from ..geometry.pointcloud import Pose
from ..geometry.rotations import random_rotation
from ..models import ModelConfig, OrientedBox
from .evaluation_service import iou3d, pose_error
from .gradcheck_service import grad_check


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str
    seconds: float


# ----------------------------------------------------------------------------
# Shared fixtures
# ----------------------------------------------------------------------------

def random_hypothesis_set(rng: np.random.Generator, objects: int = 1, group_size: int = 60) -> HypothesisSet:
    """Uniform rotations, Gaussian translations and sizes in [0.5, 2)."""
    rotations = torch.as_tensor(np.stack([
        np.stack([random_rotation(rng) for _ in range(group_size)]) for _ in range(objects)
    ]))
    translations = torch.as_tensor(rng.standard_normal((objects, group_size, 3)))
    sizes = torch.as_tensor(rng.uniform(0.5, 2.0, size=(objects, group_size)))
    return HypothesisSet(rotations=rotations, translations=translations, sizes=sizes)


def equivariance_error(layer: nn.Module, group: RotationGroup, points: torch.Tensor, features: torch.Tensor,
                       radius: float, h: int, kernel_size: int) -> float:
    """max |out(R_h x)[..., g] - out(x)[..., h^-1 g]| for an SE(3) layer on one domain."""
    rotated = points @ group.elements[h].T
    with torch.no_grad():
        base = layer(gather_neighborhood(single_domain(points, radius), features, features, kernel_size), group)
        moved = layer(gather_neighborhood(single_domain(rotated, radius), features, features, kernel_size), group)
    return float((moved - base[..., group.left_translation(h)]).abs().max())


# ----------------------------------------------------------------------------
# Checks; each returns (passed, detail)
# ----------------------------------------------------------------------------

def check_group_tables() -> Tuple[bool, str]:
    details = []
    for name, size in (("icosahedral", 60), ("tetrahedral", 12)):
        group = get_group(name)
        rows_ok = all(sorted(row.tolist()) == list(range(size)) for row in group.cayley)
        inverse_ok = all(int(group.cayley[g, group.inverse[g]]) == 0 for g in range(size))
        if group.size != size or not rows_ok or not inverse_ok:
            return False, f"{name} group table is inconsistent"
        details.append(f"{name}={size}")
    return True, ", ".join(details)


def check_equivariance(seeds: int = 3) -> Tuple[bool, str]:
    group = get_group("icosahedral")
    worst = 0.0
    for seed in range(seeds):
        rng = make_rng(seed, 11)
        torch.manual_seed(seed)
        points = torch.as_tensor(rng.standard_normal((64, 3)))
        features = torch.as_tensor(rng.standard_normal((64, 4)))
        layer = SE3Layer(4, 4, kernel_size=8, activation="silu")
        h = int(rng.integers(1, group.size))
        worst = max(worst, equivariance_error(layer, group, points, features, 1.0, h, 8))

        conv = GroupConv(4, 4, group)
        x = torch.as_tensor(rng.standard_normal((8, 4, group.size)))
        perm = group.left_translation(h)
        with torch.no_grad():
            worst = max(worst, float((conv(x[..., perm]) - conv(x)[..., perm]).abs().max()))
    return worst <= 1e-6, f"max error {worst:.2e}"


def check_scale_invariance() -> Tuple[bool, str]:
    rng = make_rng(3, 12)
    torch.manual_seed(3)
    group = get_group("tetrahedral")
    points = torch.as_tensor(rng.standard_normal((48, 3)))
    features = torch.as_tensor(rng.standard_normal((48, 4)))
    conv = ScaleInvariantGraphConv(4, 4, activation="silu")

    def run(scale: float) -> torch.Tensor:
        hood = gather_neighborhood(single_domain(scale * points, scale * 1.2), features, features, 8)
        kernel_features, directions, edges, mask = graph_conv_inputs(hood, group)
        with torch.no_grad():
            return conv(features, kernel_features, directions, edges, mask)

    reference = run(1.0)
    worst = max(float(((run(lam) - reference).abs().max()) / reference.abs().max()) for lam in (0.5, 2.0, 10.0))
    return worst <= 1e-9, f"max relative change {worst:.2e}"


def check_schedule() -> Tuple[bool, str]:
    schedule = make_schedule(100, 1e-4, 0.05)
    product = 1.0
    for t in range(1, 101):
        product *= 1.0 - schedule.beta(t)
    gap = abs(schedule.alpha_bar(100) - product)
    return gap <= 1e-12, f"alpha_bar(100)={schedule.alpha_bar(100):.6f}, gap {gap:.1e}"


def check_elbo(samples: int = 20000) -> Tuple[bool, str]:
    schedule = make_schedule(5, 0.05, 0.3)
    model = GaussianReverseModel.from_schedule(schedule, shift=0.1, inflate=1.3)
    x0 = torch.tensor([0.7, -0.4], dtype=torch.float64)
    gap = float(elbo_rewrite_gap(x0, model, schedule, 256, make_rng(5, 1)).abs().max())
    closed = elbo_terms(x0, model, schedule)["total"]
    mean, se = monte_carlo_elbo(x0, model, schedule, samples, make_rng(5, 2))
    passed = gap <= 1e-8 and abs(mean - closed) <= 4.0 * se
    return passed, f"closed {closed:.5f}, monte carlo {mean:.5f} +/- {se:.5f}, rewrite gap {gap:.1e}"


def check_selection(trials: int = 20) -> Tuple[bool, str]:
    rng = make_rng(9, 13)
    for trial in range(trials):
        hyps = random_hypothesis_set(rng, 1, 12)
        canon = torch.as_tensor(rng.standard_normal((16, 3)))
        observed = torch.as_tensor(rng.standard_normal((20, 3)))
        chosen = select_best(hyps, [canon], [observed])[0].indices
        i, j, _ = scan_hypotheses(hyps, canon, observed)
        if chosen != (i, j):
            return False, f"trial {trial}: vectorized {chosen} vs scan {(i, j)}"
    return True, f"{trials} random sets agree"


def check_metrics() -> Tuple[bool, str]:
    cube = OrientedBox(extents=(1.0, 1.0, 1.0))
    shifted = OrientedBox(pose=Pose(translation=(0.5, 0.0, 0.0)), extents=(1.0, 1.0, 1.0))
    third = abs(iou3d(cube, shifted) - 1.0 / 3.0)
    quarter = Pose(rotation=(math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)))
    plain, _ = pose_error(quarter, Pose())
    symmetric, _ = pose_error(quarter, Pose(), symmetry_axis=(0.0, 0.0, 1.0))
    passed = third <= 1e-12 and abs(plain - 90.0) <= 1e-9 and symmetric <= 1e-6 and iou3d(cube, cube) == 1.0
    return passed, f"1/3 overlap error {third:.1e}, quarter turn {plain:.6f} deg, symmetric {symmetric:.1e} deg"


def check_zero_init() -> Tuple[bool, str]:
    config = ModelConfig(feature_dim=8, heads=2, group="tetrahedral", n_points=32, n_observed=32,
                         kernel_size=8, max_neighbors=8)
    model = build_model(config, seed=1)
    rng = make_rng(1, 14)
    inputs = [
        (torch.as_tensor(rng.standard_normal((32, 3))), torch.as_tensor(rng.standard_normal((32, 3))) * 0.3,
         int(rng.integers(1, 21)))
        for _ in range(3)
    ]
    with torch.no_grad():
        before = [model.denoise(xt, None, prior, t) for xt, prior, t in inputs]
        model.enter_refine()
        latents = [model.condition_latent(prior, prior) for _, prior, _ in inputs]
        after = [model.denoise(xt, f, prior, t) for (xt, prior, t), f in zip(inputs, latents)]
    equal = all(torch.equal(a, b) for a, b in zip(before, after))
    return equal, "refined output bitwise equal to pretrained" if equal else "refined output differs"


def check_gradients() -> Tuple[bool, str]:
    torch.manual_seed(2)
    layer = nn.Linear(5, 3)
    x = torch.as_tensor(make_rng(2, 15).standard_normal((7, 5)))
    report = grad_check(layer, lambda: (layer(x) ** 2).sum(), samples_per_tensor=0)
    return report.max_rel_error <= 1e-8, f"linear layer max relative error {report.max_rel_error:.1e}"


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("group_tables", check_group_tables),
    ("se3_equivariance", check_equivariance),
    ("scale_invariance", check_scale_invariance),
    ("diffusion_schedule", check_schedule),
    ("elbo_decomposition", check_elbo),
    ("hypothesis_selection", check_selection),
    ("metrics", check_metrics),
    ("zero_init_equivalence", check_zero_init),
    ("gradient_check", check_gradients),
]


def run_selftest() -> List[CheckResult]:
    """Run every check; an exception inside a check counts as a failure of that check."""
    results = []
    for name, check in CHECKS:
        started = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        result = CheckResult(name=name, passed=passed, detail=detail, seconds=time.perf_counter() - started)
        status = "SUCCESS" if passed else "ERROR"
        print(f"{status}: [SELFTEST] {name}: {detail}")
        results.append(result)
    return results
