"""
ELBO Verification Harness
Closed-form KL decomposition of the diffusion bound for a linear-Gaussian reverse model,
with Monte-Carlo and per-sample checks of every rewriting step
"""

import math
from typing import Dict, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, model_validator

from .diffusion import DiffusionSchedule, posterior_mean_variance

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_kl(mean_q, var_q, mean_p, var_p) -> torch.Tensor:
    """
    Elementwise KL(N(mean_q, var_q) || N(mean_p, var_p)).

    Raises:
        ValueError: when any variance is not positive
    """
    mean_q, var_q, mean_p, var_p = (torch.as_tensor(v, dtype=torch.float64) for v in (mean_q, var_q, mean_p, var_p))
    if bool((var_q <= 0).any()) or bool((var_p <= 0).any()):
        raise ValueError("Gaussian variances must be positive")
    return 0.5 * (torch.log(var_p / var_q) + (var_q + (mean_q - mean_p) ** 2) / var_p - 1.0)


def gaussian_log_density(x: torch.Tensor, mean: torch.Tensor, var) -> torch.Tensor:
    """log N(x; mean, var I) summed over the last axis."""
    var = torch.as_tensor(var, dtype=torch.float64)
    return (-0.5 * (LOG_2PI + torch.log(var) + (x - mean) ** 2 / var)).sum(dim=-1)


class GaussianReverseModel(BaseModel):
    """
    p(x_T) = N(0, I) and p(x_{t-1} | x_t) = N(a_t x_t + b_t, v_t I) for t = 1..T.

    Index 0 of every array holds t = 1.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scale: torch.Tensor  # a_t
    shift: torch.Tensor  # b_t
    variance: torch.Tensor  # v_t

    @model_validator(mode="after")
    def _check(self) -> "GaussianReverseModel":
        if not (self.scale.shape == self.shift.shape == self.variance.shape):
            raise ValueError("scale, shift and variance must share one length")
        if bool((self.variance <= 0).any()):
            raise ValueError("reverse-model variances must be positive")
        return self

    @property
    def T(self) -> int:
        return int(self.scale.shape[0])

    def mean(self, xt: torch.Tensor, t: int) -> torch.Tensor:
        return self.scale[t - 1] * xt + self.shift[t - 1]

    @classmethod
    def from_schedule(cls, schedule: DiffusionSchedule, shift: float = 0.0, inflate: float = 1.0) -> "GaussianReverseModel":
        """Reverse model with the posterior's x_t coefficient, a constant shift and inflated variances."""
        scale, variance = [], []
        for t in range(1, schedule.T + 1):
            previous = schedule.alpha_bar(t - 1)
            scale.append(math.sqrt(schedule.alpha(t)) * (1.0 - previous) / (1.0 - schedule.alpha_bar(t)))
            variance.append(inflate * max(schedule.sigma(t), schedule.beta(1)))
        scale_t = torch.tensor(scale, dtype=torch.float64)
        return cls(scale=scale_t, shift=torch.full_like(scale_t, shift), variance=torch.tensor(variance, dtype=torch.float64))


def _posterior_coefficients(t: int, schedule: DiffusionSchedule) -> Tuple[float, float, float]:
    """q(x_{t-1} | x_t, x_0) = N(c0 x_0 + c1 x_t, var)."""
    alpha_bar = schedule.alpha_bar(t)
    previous = schedule.alpha_bar(t - 1)
    beta = schedule.beta(t)
    c0 = math.sqrt(previous) * beta / (1.0 - alpha_bar)
    c1 = math.sqrt(schedule.alpha(t)) * (1.0 - previous) / (1.0 - alpha_bar)
    return c0, c1, (1.0 - previous) / (1.0 - alpha_bar) * beta


def elbo_terms(x0: torch.Tensor, model: GaussianReverseModel, schedule: DiffusionSchedule) -> Dict[str, object]:
    """
    Closed-form terms of the negative ELBO (an upper bound on -log p(x_0)).

    L_T = KL(q(x_T|x_0) || p(x_T)); L_{t-1} = E_q KL(q(x_{t-1}|x_t,x_0) || p(x_{t-1}|x_t)) for t >= 2;
    L_0 = -E_q log p(x_0|x_1). The expectations over x_t are taken analytically.

    Returns:
        {"L_T": float, "L_t": list of T-1 floats (t = 2..T), "L_0": float, "total": float}
    """
    if model.T != schedule.T:
        raise ValueError(f"reverse model has {model.T} steps, schedule has {schedule.T}")
    x0 = torch.as_tensor(x0, dtype=torch.float64)
    alpha_bar_T = schedule.alpha_bar(schedule.T)
    l_T = float(gaussian_kl(math.sqrt(alpha_bar_T) * x0, 1.0 - alpha_bar_T, torch.zeros_like(x0), 1.0).sum())

    l_t = []
    for t in range(2, schedule.T + 1):
        c0, c1, post_var = _posterior_coefficients(t, schedule)
        a, b, v = float(model.scale[t - 1]), float(model.shift[t - 1]), float(model.variance[t - 1])
        alpha_bar = schedule.alpha_bar(t)
        # mean gap c0 x0 + (c1 - a) x_t - b with x_t ~ q(x_t | x_0)
        gap_mean = c0 * x0 + (c1 - a) * math.sqrt(alpha_bar) * x0 - b
        gap_var = (c1 - a) ** 2 * (1.0 - alpha_bar)
        per_dim = 0.5 * (math.log(v / post_var) + (post_var + gap_mean ** 2 + gap_var) / v - 1.0)
        l_t.append(float(per_dim.sum()))

    a1, b1, v1 = float(model.scale[0]), float(model.shift[0]), float(model.variance[0])
    alpha_bar_1 = schedule.alpha_bar(1)
    residual_mean = x0 - a1 * math.sqrt(alpha_bar_1) * x0 - b1
    residual_var = a1 ** 2 * (1.0 - alpha_bar_1)
    l_0 = float((0.5 * (LOG_2PI + math.log(v1) + (residual_mean ** 2 + residual_var) / v1)).sum())
    return {"L_T": l_T, "L_t": l_t, "L_0": l_0, "total": l_T + sum(l_t) + l_0}


def forward_trajectories(x0: torch.Tensor, schedule: DiffusionSchedule, n: int,
                         rng: np.random.Generator) -> torch.Tensor:
    """n samples of x_1..x_T from the forward Markov chain: n x T x D (index 0 is t = 1)."""
    x0 = torch.as_tensor(x0, dtype=torch.float64)
    noise = torch.as_tensor(rng.standard_normal((schedule.T, n, x0.shape[-1])), dtype=torch.float64)
    states = []
    x = x0.expand(n, -1)
    for t in range(1, schedule.T + 1):
        x = math.sqrt(schedule.alpha(t)) * x + math.sqrt(schedule.beta(t)) * noise[t - 1]
        states.append(x)
    return torch.stack(states, dim=1)


def _chain_integrand(x0: torch.Tensor, path: torch.Tensor, model: GaussianReverseModel,
                     schedule: DiffusionSchedule) -> torch.Tensor:
    """log q(x_{1:T} | x_0) - log p(x_{0:T}) per sample, written with the forward Markov factors."""
    previous = x0.expand(path.shape[0], -1)
    log_q = torch.zeros(path.shape[0], dtype=torch.float64)
    for t in range(1, schedule.T + 1):
        current = path[:, t - 1]
        log_q = log_q + gaussian_log_density(current, math.sqrt(schedule.alpha(t)) * previous, schedule.beta(t))
        previous = current
    log_p = gaussian_log_density(path[:, -1], torch.zeros_like(path[:, -1]), 1.0)
    for t in range(schedule.T, 1, -1):
        log_p = log_p + gaussian_log_density(path[:, t - 2], model.mean(path[:, t - 1], t), model.variance[t - 1])
    log_p = log_p + gaussian_log_density(x0.expand(path.shape[0], -1), model.mean(path[:, 0], 1), model.variance[0])
    return log_q - log_p


def _rewritten_integrand(x0: torch.Tensor, path: torch.Tensor, model: GaussianReverseModel,
                         schedule: DiffusionSchedule) -> torch.Tensor:
    """The same integrand after conditioning every forward factor on x_0 (posterior form)."""
    n = path.shape[0]
    x0n = x0.expand(n, -1)
    alpha_bar_T = schedule.alpha_bar(schedule.T)
    total = gaussian_log_density(path[:, -1], math.sqrt(alpha_bar_T) * x0n, 1.0 - alpha_bar_T) \
        - gaussian_log_density(path[:, -1], torch.zeros_like(x0n), 1.0)
    for t in range(2, schedule.T + 1):
        mean, var = posterior_mean_variance(x0n, path[:, t - 1], t, schedule)
        total = total + gaussian_log_density(path[:, t - 2], mean, var) \
            - gaussian_log_density(path[:, t - 2], model.mean(path[:, t - 1], t), model.variance[t - 1])
    return total - gaussian_log_density(x0n, model.mean(path[:, 0], 1), model.variance[0])


def monte_carlo_elbo(x0: torch.Tensor, model: GaussianReverseModel, schedule: DiffusionSchedule,
                     n: int, rng: np.random.Generator) -> Tuple[float, float]:
    """Monte-Carlo estimate of the negative ELBO: (mean, standard error) over n forward trajectories."""
    x0 = torch.as_tensor(x0, dtype=torch.float64)
    values = _chain_integrand(x0, forward_trajectories(x0, schedule, n, rng), model, schedule)
    return float(values.mean()), float(values.std(unbiased=True) / math.sqrt(n))


def elbo_rewrite_gap(x0: torch.Tensor, model: GaussianReverseModel, schedule: DiffusionSchedule,
                     n: int, rng: np.random.Generator) -> torch.Tensor:
    """Per-sample difference between the chain integrand and its posterior-rewritten form (zero up to rounding)."""
    x0 = torch.as_tensor(x0, dtype=torch.float64)
    path = forward_trajectories(x0, schedule, n, rng)
    return _chain_integrand(x0, path, model, schedule) - _rewritten_integrand(x0, path, model, schedule)
