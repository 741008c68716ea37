"""DDPM noise schedule and deterministic spaced (DDIM-style) sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ValidationError


@dataclass
class NoiseSchedule:
    """Linear-beta DDPM schedule with cached cumulative products."""

    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    beta: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValidationError("schedule needs at least one step")
        beta = np.linspace(self.beta_start, self.beta_end, self.timesteps, dtype=np.float64)
        if beta.min() <= 0.0 or beta.max() >= 1.0:
            raise ValidationError("beta must lie strictly inside (0,1)")
        alpha_bar = np.cumprod(1.0 - beta)
        if np.any(np.diff(alpha_bar) >= 0):
            raise ValidationError("alpha_bar must be strictly decreasing")
        self.beta = beta
        self.alpha_bar = alpha_bar

    def _check_t(self, t: int):
        if not 0 <= t < self.timesteps:
            raise ValidationError(f"step {t} outside [0,{self.timesteps})")

    def add_noise(self, z0: torch.Tensor, t, eps: torch.Tensor) -> torch.Tensor:
        """z_t = sqrt(ab_t) z0 + sqrt(1-ab_t) eps; t may be an int or a batch."""
        if isinstance(t, int):
            self._check_t(t)
            ab = float(self.alpha_bar[t])
            return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
        ab = torch.as_tensor(self.alpha_bar, device=z0.device, dtype=z0.dtype)[t]
        ab = ab.view(-1, *([1] * (z0.ndim - 1)))
        return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps

    def predict_z0(self, z_t: torch.Tensor, t: int, eps: torch.Tensor) -> torch.Tensor:
        """Closed-form z0 recovery given the true (or predicted) noise."""
        self._check_t(t)
        ab = float(self.alpha_bar[t])
        return (z_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)

    def spaced_steps(self, steps: int) -> list[int]:
        if not 1 <= steps <= self.timesteps:
            raise ValidationError("sampler steps must lie in [1, T]")
        # Evenly spaced, descending from T-1; ends at t=0 whenever there
        # is more than one step (steps=1 predicts z0 straight from T-1).
        ts = np.linspace(self.timesteps - 1, 0, steps)
        return [int(round(t)) for t in ts]


def sample(
    denoiser,
    schedule: NoiseSchedule,
    shape,
    steps: int,
    seed: int,
    conditioner=None,
    device="cpu",
    dtype=torch.float32,
) -> torch.Tensor:
    """Deterministic DDIM (eta=0) over evenly spaced steps.

    `denoiser(z_t, t, residuals)` predicts the noise; `conditioner(z_t, t)`
    returns per-scale control residuals (or None).
    """
    gen = torch.Generator(device="cpu").manual_seed(int(seed))
    z = torch.randn(shape, generator=gen, dtype=dtype).to(device)
    ts = schedule.spaced_steps(steps)
    with torch.no_grad():
        for i, t in enumerate(ts):
            residuals = conditioner(z, t) if conditioner is not None else None
            eps = denoiser(z, t, residuals)
            z0 = schedule.predict_z0(z, t, eps)
            if i + 1 < len(ts):
                t_prev = ts[i + 1]
                ab_prev = float(schedule.alpha_bar[t_prev])
                z = np.sqrt(ab_prev) * z0 + np.sqrt(1.0 - ab_prev) * eps
            else:
                z = z0
    return z
