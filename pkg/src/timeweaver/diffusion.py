"""Noise schedules, forward corruption, the conditional training loss and
ancestral sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


class NumericError(RuntimeError):
    """A loss or activation became non-finite."""


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        # alpha_bar_0 = 1 by convention
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"diffusion step {t} outside [1, {self.T}]")

    def torch_coeffs(self, dtype=torch.float32) -> dict[str, torch.Tensor]:
        """Schedule arrays indexed by t (entry 0 is the t=0 convention)."""
        ab = np.concatenate([[1.0], self.alpha_bars])
        return {
            "sqrt_ab": torch.tensor(np.sqrt(ab), dtype=dtype),
            "sqrt_1mab": torch.tensor(np.sqrt(1.0 - ab), dtype=dtype),
        }


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or len(betas) < 1:
        raise ValueError("betas must be a non-empty vector")
    if not ((betas > 0) & (betas < 1)).all():
        raise ValueError("every beta must lie in (0, 1)")
    if (np.diff(betas) < 0).any():
        raise ValueError("betas must be non-decreasing")
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


def linear_schedule(beta1: float = 1e-4, betaT: float = 0.1, T: int = 200) -> NoiseSchedule:
    if not 0 < beta1 <= betaT < 1:
        raise ValueError("need 0 < beta1 <= betaT < 1")
    if T < 2:
        raise ValueError("need at least 2 diffusion steps")
    return schedule_from_betas(np.linspace(beta1, betaT, T))


def forward_step(x_prev, t: int, schedule: NoiseSchedule, eps):
    """One Markov corruption step q(x_t | x_{t-1})."""
    schedule.check_step(t)
    if x_prev.shape != eps.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != series shape {tuple(x_prev.shape)}")
    beta = schedule.beta(t)
    return math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * eps


def closed_form_forward(x0, t, schedule: NoiseSchedule, eps):
    """Corrupt ``x0`` directly to step ``t`` (int, or one step per batch row)."""
    if x0.shape != eps.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != series shape {tuple(x0.shape)}")
    if isinstance(t, (int, np.integer)):
        if not 0 <= t <= schedule.T:
            raise ValueError(f"diffusion step {t} outside [0, {schedule.T}]")
        ab = schedule.alpha_bar(int(t))
        return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    coeffs = schedule.torch_coeffs(x0.dtype)
    t = t.long()
    if t.min() < 0 or t.max() > schedule.T:
        raise ValueError(f"diffusion steps must lie in [0, {schedule.T}]")
    shape = (-1,) + (1,) * (x0.dim() - 1)
    return coeffs["sqrt_ab"][t].view(shape) * x0 + coeffs["sqrt_1mab"][t].view(shape) * eps


def reverse_step(x_t, t: int, eps_hat, schedule: NoiseSchedule, noise=None):
    """Ancestral step x_t -> x_{t-1} with reverse variance beta_t.

    ``noise`` is ignored at t = 1, where no stochastic term is added.
    """
    schedule.check_step(t)
    beta = schedule.beta(t)
    mean = (x_t - (beta / math.sqrt(1.0 - schedule.alpha_bar(t))) * eps_hat) / math.sqrt(1.0 - beta)
    if t == 1 or noise is None:
        return mean
    return mean + math.sqrt(beta) * noise


def sample_steps(n: int, T: int, generator: torch.Generator | None = None) -> torch.Tensor:
    """t ~ U{1..T}, drawn independently per batch element."""
    return torch.randint(1, T + 1, (n,), generator=generator)


def training_loss(model, schedule: NoiseSchedule, x0, categorical, continuous, t, eps) -> torch.Tensor:
    """Mean squared error between the injected noise and the model's estimate.

    Gradients flow into every trainable part of ``model`` (tokenizers, fusion
    attention and denoiser) via ``loss.backward()``.
    """
    x_t = closed_form_forward(x0, t, schedule, eps)
    eps_hat = model(x_t, t, categorical, continuous)
    per_sample = ((eps - eps_hat) ** 2).flatten(1).mean(dim=1)
    bad = torch.nonzero(~torch.isfinite(per_sample.detach()))
    if bad.numel():
        raise NumericError(f"non-finite loss at batch index {int(bad[0, 0])}")
    return per_sample.mean()


def loss_and_grads(model, schedule, x0, categorical, continuous, t, eps):
    """Loss value plus a ``{name: gradient}`` dict for every trainable parameter."""
    model.zero_grad(set_to_none=True)
    loss = training_loss(model, schedule, x0, categorical, continuous, t, eps)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
        if p.requires_grad
    }
    return loss.detach(), grads


@torch.no_grad()
def sample(model, categorical, continuous, schedule: NoiseSchedule, seed: int, n_channels: int | None = None):
    """Generate one series per metadata row by running all T reverse steps.

    The metadata embedding is computed once and reused at every step.
    """
    categorical = torch.tensor(np.asarray(categorical)) if not torch.is_tensor(categorical) else categorical
    continuous = torch.tensor(np.asarray(continuous)) if not torch.is_tensor(continuous) else continuous
    dtype = next(model.parameters()).dtype
    continuous = continuous.to(dtype)
    n, length = categorical.shape[:2]
    n_channels = n_channels or model.config.n_channels
    gen = torch.Generator().manual_seed(int(seed))
    z = model.encode(categorical, continuous)
    x = torch.randn((n, length, n_channels), generator=gen, dtype=dtype)
    for t in range(schedule.T, 0, -1):
        steps = torch.full((n,), t, dtype=torch.long)
        eps_hat = model.denoise(x, steps, z)
        noise = torch.randn(x.shape, generator=gen, dtype=dtype) if t > 1 else None
        x = reverse_step(x, t, eps_hat, schedule, noise)
    return x
