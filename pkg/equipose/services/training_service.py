"""
Training Service
Two-phase training: prior-conditioned pretraining, then refinement through the
zero-initialized control branch with the denoiser base locked
"""

import json
import math
import time
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import StepLR

from ..ai.diffusion import DiffusionSchedule, loss_pretrain, loss_refine, make_rng, schedule_from_config
from ..ai.heads import hypothesis_loss
from ..ai.network import EquiPoseModel, build_model, resample_observed
from ..config import apply_runtime_settings
from ..database.checkpoint_store import restore_model, save_checkpoint
from ..database.dataset_store import Dataset
from ..models import RunConfig, TrainConfig

LOG_FILE = "train_log.ndjson"
PHASE_STREAMS = {"pretrain": 101, "refine": 102}


class TrainingSample(NamedTuple):
    instance_id: str
    x0: torch.Tensor  # canonical target, N x 3
    observed: torch.Tensor  # N_0 x 3
    colors: Optional[torch.Tensor]
    prior: torch.Tensor  # N x 3


class TrainResult(NamedTuple):
    model: EquiPoseModel
    losses: List[float]
    checkpoint: Path


def prepare_samples(dataset: Dataset, config: RunConfig, split: Optional[str] = "train") -> List[TrainingSample]:
    """Dataset instances brought to the model's point counts."""
    samples = []
    for instance in dataset.instances(split):
        x0, _ = resample_observed(instance.canonical, config.model.n_points)
        prior, _ = resample_observed(instance.prior, config.model.n_points)
        observed, colors = resample_observed(instance.observed, config.model.n_observed, instance.colors)
        samples.append(TrainingSample(instance.entry.instance_id, x0, observed, colors, prior))
    if not samples:
        raise ValueError(f"dataset split {split!r} has no instances")
    return samples


def make_optimizer(parameters, train: TrainConfig, dataset_size: int) -> Tuple[Adam, StepLR]:
    """
    Adam with a step decay of decay_factor every decay_epochs epochs.

    The scheduler is stepped once per optimizer step, so an epoch is
    ceil(epoch_size / batch_size) steps (epoch_size 0 means the dataset size).
    """
    epoch_size = train.epoch_size or dataset_size
    steps_per_epoch = max(1, math.ceil(epoch_size / train.batch_size))
    optimizer = Adam(parameters, lr=train.learning_rate)
    scheduler = StepLR(optimizer, step_size=train.decay_epochs * steps_per_epoch, gamma=train.decay_factor)
    return optimizer, scheduler


def phase_loss(model: EquiPoseModel, batch: Sequence[TrainingSample], schedule: DiffusionSchedule,
               rng: np.random.Generator, train: TrainConfig) -> torch.Tensor:
    """Denoising loss of the current phase plus the weighted hypothesis-selection loss."""
    if model.phase == "refine":
        latents = [model.condition_latent(s.observed, s.prior) for s in batch]
        loss = loss_refine([(s.x0, f, s.prior) for s, f in zip(batch, latents)], model.denoise, schedule, rng,
                           train.loss_norm)
    else:
        latents = [None] * len(batch)
        loss = loss_pretrain([(s.x0, s.prior) for s in batch],
                             lambda xt, prior, t: model.denoise(xt, None, prior, t), schedule, rng, train.loss_norm)
    if train.hypothesis_weight > 0:
        for sample, latent in zip(batch, latents):
            hyps = model.decode_hypotheses(sample.observed, sample.prior, latent, sample.colors)
            loss = loss + train.hypothesis_weight * hypothesis_loss(hyps, [sample.x0], [sample.observed])
    return loss


def _append_log(path: Path, entry: dict) -> None:
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(json.dumps(entry, sort_keys=True) + "\n")


def run_phase(model: EquiPoseModel, samples: Sequence[TrainingSample], config: RunConfig,
              out_dir: Union[str, Path]) -> TrainResult:
    """
    Optimize the trainable parameters of model for steps_per_phase steps.

    Raises:
        RuntimeError: when the loss becomes non-finite
    """
    train = config.train
    phase = model.phase
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOG_FILE
    checkpoint_dir = out_dir / phase
    schedule = schedule_from_config(config.schedule)
    rng = make_rng(train.seed, PHASE_STREAMS[phase])
    optimizer, scheduler = make_optimizer([p for p in model.parameters() if p.requires_grad], train, len(samples))

    model.train()
    losses: List[float] = []
    last_finite = None
    for step in range(1, train.steps_per_phase + 1):
        started = time.perf_counter()
        batch = [samples[int(i)] for i in rng.integers(0, len(samples), size=train.batch_size)]
        optimizer.zero_grad()
        loss = phase_loss(model, batch, schedule, rng, train)
        value = float(loss.detach())
        if not math.isfinite(value):
            print(f"ERROR: [TRAIN] {phase} diverged at step {step}")
            raise RuntimeError(
                f"non-finite {phase} loss at step {step} (last finite loss: {last_finite})"
            )
        loss.backward()
        lr = optimizer.param_groups[0]["lr"]
        optimizer.step()
        scheduler.step()
        last_finite = value
        losses.append(value)
        _append_log(log_path, {
            "step": step, "phase": phase, "loss": value, "lr": lr,
            "wall_ms": round(1000.0 * (time.perf_counter() - started), 3),
        })
        if step % train.checkpoint_every == 0 or step == train.steps_per_phase:
            save_checkpoint(checkpoint_dir, model, config, step)
    print(f"SUCCESS: [TRAIN] {phase} finished {train.steps_per_phase} steps, final loss {losses[-1]:.6g}")
    return TrainResult(model, losses, checkpoint_dir)


def pretrain(dataset: Dataset, config: RunConfig, out_dir: Union[str, Path]) -> TrainResult:
    """Phase one: train every parameter on the prior-conditioned denoising and selection losses."""
    try:
        apply_runtime_settings(config.train.deterministic)
        model = build_model(config.model, config.train.seed)
        return run_phase(model, prepare_samples(dataset, config), config, out_dir)
    except Exception as e:
        print(f"ERROR: [TRAIN] pretrain failed: {e}")
        raise


def check_control_copy(model: EquiPoseModel) -> None:
    """Every trainable-copy tensor must match the shape of the encoder tensor it was cloned from."""
    base = dict(model.denoiser.encoder.named_parameters())
    copy = dict(model.denoiser.control.named_parameters())
    if base.keys() != copy.keys():
        raise ValueError("trainable copy does not mirror the encoder parameter names")
    for name, parameter in base.items():
        if parameter.shape != copy[name].shape:
            raise ValueError(f"copy tensor {name!r} has shape {tuple(copy[name].shape)}, base has {tuple(parameter.shape)}")


def start_refine(base: Union[EquiPoseModel, str, Path], config: Optional[RunConfig] = None) -> EquiPoseModel:
    """Load (or take) a pretrained model and switch it to the refinement phase."""
    model = restore_model(base)[0] if isinstance(base, (str, Path)) else base
    if config is not None and model.config != config.model:
        raise ValueError("refinement model config differs from the pretrained model config")
    if model.phase != "pretrain":
        raise ValueError(f"refinement starts from a pretrained model, got phase {model.phase!r}")
    model.enter_refine()
    check_control_copy(model)
    return model


def refine(base: Union[EquiPoseModel, str, Path], dataset: Dataset, config: RunConfig,
           out_dir: Union[str, Path]) -> TrainResult:
    """Phase two: lock the denoiser base and train the control copy, zero convs, observer and heads."""
    try:
        apply_runtime_settings(config.train.deterministic)
        model = start_refine(base, config)
        return run_phase(model, prepare_samples(dataset, config), config, out_dir)
    except Exception as e:
        print(f"ERROR: [TRAIN] refine failed: {e}")
        raise
