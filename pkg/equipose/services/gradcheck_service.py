"""
Gradient Check Service
Compares autograd gradients of every named parameter tensor with central finite differences
"""

from typing import Callable, Dict, List, Optional

import numpy as np
import torch
from pydantic import BaseModel
from torch import nn

from ..ai.diffusion import loss_pretrain, make_rng, schedule_from_config
from ..ai.heads import hypothesis_loss
from ..ai.network import EquiPoseModel, resample_observed
from ..models import RunConfig, SynthSpec
from .synth_dataset import generate

# Denominator floor of the normwise relative error
ERROR_FLOOR = 1e-6

GradientHook = Callable[[str, torch.Tensor], torch.Tensor]


class TensorCheck(BaseModel):
    name: str
    checked: int
    max_abs_error: float
    max_rel_error: float
    passed: bool


class GradCheckReport(BaseModel):
    step: float
    tol: float
    tensors: List[TensorCheck]

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tensors)

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    def failures(self) -> List[TensorCheck]:
        return [t for t in self.tensors if not t.passed]


def grad_check(
    model: nn.Module,
    loss_fn: Callable[[], torch.Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    samples_per_tensor: int = 0,
    seed: int = 0,
    corrupt: Optional[GradientHook] = None,
) -> GradCheckReport:
    """
    Central-difference check of every trainable parameter tensor.

    The loss is divided by max(|L|, 1) at the starting point for both gradients, and
    each tensor's error is ||g_analytic - g_numeric||_inf / max(||g_analytic||_inf,
    ||g_numeric||_inf, 1e-6) over the checked entries.

    Args:
        model: module whose parameters are perturbed in place (restored afterwards)
        loss_fn: closure recomputing the scalar loss; must be deterministic
        step: finite-difference step h
        tol: maximum accepted relative error per tensor
        samples_per_tensor: entries checked per tensor (0 = every entry)
        seed: Philox seed choosing the sampled entries
        corrupt: optional hook applied to each analytic gradient before comparison

    Returns:
        GradCheckReport; failing tensors are report entries, nothing is raised
    """
    if torch.get_default_dtype() != torch.float64:
        raise ValueError("gradient checking requires double precision")
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    model.zero_grad()
    loss = loss_fn()
    scale = max(abs(float(loss.detach())), 1.0)
    analytic: Dict[str, torch.Tensor] = {}
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    for (name, p), g in zip(named, grads):
        g = torch.zeros_like(p) if g is None else g.detach()
        analytic[name] = (g if corrupt is None else corrupt(name, g)) / scale

    rng = make_rng(seed, 0)
    checks = []
    with torch.no_grad():
        for name, p in named:
            flat = p.view(-1)
            count = flat.numel()
            if samples_per_tensor and samples_per_tensor < count:
                entries = np.sort(rng.choice(count, size=samples_per_tensor, replace=False))
            else:
                entries = np.arange(count)
            numeric = torch.empty(len(entries), dtype=p.dtype)
            for slot, index in enumerate(entries):
                original = flat[index].item()
                flat[index] = original + step
                upper = float(loss_fn())
                flat[index] = original - step
                lower = float(loss_fn())
                flat[index] = original
                numeric[slot] = (upper - lower) / (2.0 * step * scale)
            exact = analytic[name].reshape(-1)[torch.as_tensor(entries, dtype=torch.long)]
            abs_error = float((exact - numeric).abs().max()) if len(entries) else 0.0
            size = max(float(exact.abs().max()) if len(entries) else 0.0,
                       float(numeric.abs().max()) if len(entries) else 0.0, ERROR_FLOOR)
            rel_error = abs_error / size
            checks.append(TensorCheck(name=name, checked=len(entries), max_abs_error=abs_error,
                                      max_rel_error=rel_error, passed=rel_error <= tol))
    report = GradCheckReport(step=step, tol=tol, tensors=checks)
    status = "SUCCESS" if report.passed else "WARNING"
    print(f"{status}: [GRADCHECK] {len(checks)} tensors, max relative error {report.max_rel_error:.3e}")
    return report


def toy_loss(model: EquiPoseModel, config: RunConfig, seed: int = 0) -> Callable[[], torch.Tensor]:
    """
    Deterministic pretraining loss on one synthetic instance: the same (t, eps) draws and
    the same cloud on every call.
    """
    spec = SynthSpec(categories=["box"], instances_per_category=1, n_points=config.model.n_points,
                     full_visibility=True, test_fraction=0.0, seed=seed)
    manifest, priors, clouds = generate(spec)
    canonical, observed = clouds[manifest.instances[0].instance_id]
    x0 = canonical.coords_tensor()
    prior, _ = resample_observed(priors["box"].coords_tensor(), config.model.n_points)
    observed, _ = resample_observed(observed.coords_tensor(), config.model.n_observed)
    schedule = schedule_from_config(config.schedule)

    def closure() -> torch.Tensor:
        rng = make_rng(seed, 7)
        loss = loss_pretrain([(x0, prior)], lambda xt, p, t: model.denoise(xt, None, p, t), schedule, rng,
                             config.train.loss_norm)
        hyps = model.decode_hypotheses(observed, prior, None, None)
        return loss + config.train.hypothesis_weight * hypothesis_loss(hyps, [x0], [observed])

    return closure
