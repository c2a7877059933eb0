"""
Prior-Conditioned Point Diffusion
Linear noise schedule, forward corruption, reverse sampling, temporal embedding and the training losses
"""

import math
from typing import Callable, Iterable, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict
from torch import nn

from ..models import ScheduleConfig

# denoiser(x_t, prior, t) and conditioned denoiser(x_t, f, prior, t)
PretrainDenoiser = Callable[[torch.Tensor, torch.Tensor, int], torch.Tensor]
RefineDenoiser = Callable[[torch.Tensor, Optional[torch.Tensor], torch.Tensor, int], torch.Tensor]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Portable counter-based generator; (seed, stream) fully determines every draw."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    return np.random.Generator(np.random.Philox(key=seed + (stream << 64)))


def standard_normal(rng: np.random.Generator, shape: Tuple[int, ...]) -> torch.Tensor:
    return torch.as_tensor(rng.standard_normal(shape), dtype=torch.float64)


class DiffusionSchedule(BaseModel):
    """
    beta_t, alpha_t, alpha_bar_t and sigma_t for t = 1..T, stored zero-based.

    sigma_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t with alpha_bar_0 = 1.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    T: int
    beta1: float
    betaT: float
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    sigmas: torch.Tensor

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep t={t} outside 1..{self.T}")

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t, with alpha_bar_0 = 1."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[t - 1])

    def to_json(self) -> dict:
        return {"T": self.T, "beta1": self.beta1, "betaT": self.betaT, "kind": "linear"}


def make_schedule(T: int, beta1: float, betaT: float) -> DiffusionSchedule:
    """
    Linear beta schedule from beta1 to betaT over T steps.

    Args:
        T: number of steps, T >= 2
        beta1: first beta, 0 < beta1 <= betaT
        betaT: last beta, betaT < 1

    Returns:
        DiffusionSchedule
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0.0 < beta1 <= betaT < 1.0:
        raise ValueError(f"need 0 < beta1 <= betaT < 1, got beta1={beta1}, betaT={betaT}")
    betas = torch.linspace(beta1, betaT, T, dtype=torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    previous = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bars[:-1]])
    sigmas = (1.0 - previous) / (1.0 - alpha_bars) * betas
    return DiffusionSchedule(T=T, beta1=beta1, betaT=betaT, betas=betas, alphas=alphas,
                             alpha_bars=alpha_bars, sigmas=sigmas)


def schedule_from_config(config: ScheduleConfig) -> DiffusionSchedule:
    return make_schedule(config.T, config.beta1, config.betaT)


def forward_sample(x0: torch.Tensor, t: int, eps: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps (moving points only)."""
    schedule.check_t(t)
    alpha_bar = schedule.alpha_bar(t)
    return math.sqrt(alpha_bar) * x0 + math.sqrt(1.0 - alpha_bar) * eps


def reverse_step(
    xt: torch.Tensor,
    t: int,
    eps_pred: torch.Tensor,
    z: Optional[torch.Tensor],
    schedule: DiffusionSchedule,
    noise_mode: str = "sigma",
) -> torch.Tensor:
    """
    One ancestral step x_t -> x_{t-1}.

    x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_t) + sigma_t z

    The noise term is dropped at t = 1. noise_mode "posterior_std" uses sqrt(sigma_t).
    """
    schedule.check_t(t)
    beta = schedule.beta(t)
    mean = (xt - beta / math.sqrt(1.0 - schedule.alpha_bar(t)) * eps_pred) / math.sqrt(schedule.alpha(t))
    if t == 1 or z is None:
        return mean
    if noise_mode == "sigma":
        scale = schedule.sigma(t)
    elif noise_mode == "posterior_std":
        scale = math.sqrt(schedule.sigma(t))
    else:
        raise ValueError(f"unknown reverse noise mode {noise_mode!r}")
    return mean + scale * z


def posterior_mean_variance(x0: torch.Tensor, xt: torch.Tensor, t: int,
                            schedule: DiffusionSchedule) -> Tuple[torch.Tensor, float]:
    """Mean and variance of q(x_{t-1} | x_t, x_0)."""
    schedule.check_t(t)
    alpha_bar = schedule.alpha_bar(t)
    previous = schedule.alpha_bar(t - 1)
    beta = schedule.beta(t)
    mean = (math.sqrt(previous) * beta / (1.0 - alpha_bar)) * x0 \
        + (math.sqrt(schedule.alpha(t)) * (1.0 - previous) / (1.0 - alpha_bar)) * xt
    variance = (1.0 - previous) / (1.0 - alpha_bar) * beta
    return mean, variance


def raw_temporal_features(t: int, d: int) -> torch.Tensor:
    """(sin w_1 t, cos w_1 t, ..., sin w_{d/2} t, cos w_{d/2} t) with w_i = 1 / 10^(i/d)."""
    if d <= 0 or d % 2 != 0:
        raise ValueError(f"temporal embedding width must be even and positive, got {d}")
    i = torch.arange(1, d // 2 + 1, dtype=torch.float64)
    angles = float(t) / torch.pow(10.0, i / d)
    return torch.stack([torch.sin(angles), torch.cos(angles)], dim=1).reshape(d)


class TemporalEmbedding(nn.Module):
    """Sinusoidal timestep features followed by a learned perceptron."""

    def __init__(self, d: int, activation: nn.Module):
        super().__init__()
        if d % 2 != 0:
            raise ValueError(f"temporal embedding width must be even, got {d}")
        self.d = d
        self.mlp = nn.Sequential(nn.Linear(d, d), activation, nn.Linear(d, d))

    def forward(self, t: int) -> torch.Tensor:
        return self.mlp(raw_temporal_features(t, self.d))


def temporal_embedding(t: int, d: int, embedding: Optional[TemporalEmbedding] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """(post-perceptron embedding, raw features); without a module the raw features are returned twice."""
    raw = raw_temporal_features(t, d)
    return (embedding(t) if embedding is not None else raw), raw


def point_norm(residual: torch.Tensor, norm: str = "squared") -> torch.Tensor:
    """Sum over points of ||residual_i||^2 ("squared") or ||residual_i|| ("l2")."""
    if norm == "squared":
        return (residual ** 2).sum()
    if norm == "l2":
        return torch.linalg.vector_norm(residual, dim=-1).sum()
    raise ValueError(f"unknown loss norm {norm!r}")


def draw_training_noise(rng: np.random.Generator, schedule: DiffusionSchedule,
                        n_points: int) -> Tuple[int, torch.Tensor]:
    """t ~ Uniform{1..T} and eps ~ N(0, I), drawn in that order."""
    t = int(rng.integers(1, schedule.T + 1))
    return t, standard_normal(rng, (n_points, 3))


def loss_pretrain(
    batch: Iterable[Tuple[torch.Tensor, torch.Tensor]],
    denoiser: PretrainDenoiser,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    norm: str = "squared",
) -> torch.Tensor:
    """
    Prior-conditioned denoising loss summed over a batch of (x0, P_r) pairs.

    Returns:
        scalar tensor; call backward() for parameter gradients
    """
    total = torch.zeros((), dtype=torch.float64)
    for x0, prior in batch:
        t, eps = draw_training_noise(rng, schedule, x0.shape[0])
        xt = forward_sample(x0, t, eps, schedule)
        total = total + point_norm(eps - denoiser(xt, prior, t), norm)
    return total


def loss_refine(
    batch: Iterable[Tuple[torch.Tensor, Optional[torch.Tensor], torch.Tensor]],
    denoiser: RefineDenoiser,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    norm: str = "squared",
) -> torch.Tensor:
    """Denoising loss conditioned on the latent f, summed over a batch of (x0, f, P_r)."""
    total = torch.zeros((), dtype=torch.float64)
    for x0, f, prior in batch:
        t, eps = draw_training_noise(rng, schedule, x0.shape[0])
        xt = forward_sample(x0, t, eps, schedule)
        total = total + point_norm(eps - denoiser(xt, f, prior, t), norm)
    return total


def sample_shape(
    denoiser: RefineDenoiser,
    f: Optional[torch.Tensor],
    prior: torch.Tensor,
    n_points: int,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    noise_mode: str = "sigma",
    on_step: Optional[Callable[[int, torch.Tensor], None]] = None,
) -> torch.Tensor:
    """
    Ancestral sampling t = T..1 from x_T ~ N(0, I) with the prior held fixed.

    Draw order: x_T, then z for t = T..2.
    """
    x = standard_normal(rng, (n_points, 3))
    with torch.no_grad():
        for t in range(schedule.T, 0, -1):
            z = standard_normal(rng, (n_points, 3)) if t > 1 else None
            x = reverse_step(x, t, denoiser(x, f, prior, t), z, schedule, noise_mode)
            if on_step is not None:
                on_step(t - 1, x)
    return x
