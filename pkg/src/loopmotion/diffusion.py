"""DDPM machinery for clean-signal-prediction models.

The denoiser predicts the clean signal x0 at every step; sampling follows the
standard posterior q(x_{t-1} | x_t, x0) with the lower-bound variance choice.
Step indices run t = 1..T (t = 0 is clean data), so schedule arrays of length
T are indexed with t - 1 and alpha_bars has T + 1 entries with alpha_bars[0] = 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, NumericError, ShapeError


@dataclass
class NoisyPrediction:
    """A partially noised prediction window and its step index."""

    x_t: torch.Tensor  # (N_g, F)
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ShapeError("step index must be >= 0")
        if not torch.all(torch.isfinite(self.x_t)):
            raise NumericError("non-finite noisy prediction")


@dataclass
class DiffusionSchedule:
    steps: int
    kind: str
    betas: np.ndarray        # (T,)
    alphas: np.ndarray       # (T,)
    alpha_bars: np.ndarray   # (T + 1,), alpha_bars[0] = 1

    def __post_init__(self):
        if self.alpha_bars[0] < 1.0 - 1e-6:
            raise ConfigError("alpha_bar at t=0 must be 1 (clean data)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ConfigError("alpha_bar must decrease strictly")
        if not np.all(np.isfinite(self.betas)):
            raise ConfigError("non-finite schedule")
        # posterior q(x_{t-1} | x_t, x0) coefficients, index t-1
        ab, ab_prev = self.alpha_bars[1:], self.alpha_bars[:-1]
        self.posterior_coef_x0 = np.sqrt(ab_prev) * self.betas / (1.0 - ab)
        self.posterior_coef_xt = np.sqrt(self.alphas) * (1.0 - ab_prev) / (1.0 - ab)
        self.posterior_var = (1.0 - ab_prev) / (1.0 - ab) * self.betas

    def describe(self) -> dict:
        return {"steps": self.steps, "kind": self.kind}


def make_schedule(steps: int, kind: str = "cosine") -> DiffusionSchedule:
    """Noise schedule with T steps; cosine is the default."""
    if steps < 1:
        raise ConfigError(f"step count must be >= 1, got {steps}")
    t = np.arange(steps + 1, dtype=np.float64)
    if kind == "cosine":
        s = 0.008
        f = np.cos((t / steps + s) / (1 + s) * np.pi / 2.0) ** 2
        alpha_bars = f / f[0]
    elif kind == "linear":
        # linear decay of the signal level; stays well-defined for tiny T
        # (the classic linear-beta schedule assumes T around 1000)
        alpha_bars = 1.0 - (t / steps) * (1.0 - 1e-4)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    alpha_bars = np.clip(alpha_bars, 1e-8, 1.0)
    alphas = alpha_bars[1:] / alpha_bars[:-1]
    betas = 1.0 - alphas
    return DiffusionSchedule(steps, kind, betas, alphas, alpha_bars)


def q_sample(schedule: DiffusionSchedule, x0: torch.Tensor, t, noise: torch.Tensor) -> torch.Tensor:
    """Forward noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise.

    t is an int or a (...,) long tensor matching x0's leading batch dims.
    """
    if noise.shape != x0.shape:
        raise ShapeError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    ab = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype, device=x0.device)
    t = torch.as_tensor(t, dtype=torch.long, device=x0.device)
    if torch.any(t < 1) or torch.any(t > schedule.steps):
        raise ShapeError("t out of range [1, T]")
    ab_t = ab[t].reshape(t.shape + (1,) * (x0.dim() - t.dim()))
    return torch.sqrt(ab_t) * x0 + torch.sqrt(1.0 - ab_t) * noise


def cfg_combine(cond_out: torch.Tensor, uncond_out: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free guidance: uncond + scale * (cond - uncond)."""
    if cond_out.shape != uncond_out.shape:
        raise ShapeError("guidance operand shapes differ")
    return uncond_out + scale * (cond_out - uncond_out)


def sample_loop(schedule: DiffusionSchedule, denoiser, prefix, cond, *, shape,
                generator: torch.Generator, guidance: float = 1.0, null_cond=None,
                dtype=torch.float32) -> torch.Tensor:
    """Iterative posterior sampling; returns the final clean prediction.

    denoiser(prefix, x_t, t, cond) -> x0_hat. With guidance != 1 the denoiser
    also runs under null_cond and the two outputs are extrapolated. The loop
    is deterministic given the generator state.
    """
    x = torch.randn(shape, generator=generator, dtype=dtype)
    for t in range(schedule.steps, 0, -1):
        x0_hat = denoiser(prefix, x, t, cond)
        if guidance != 1.0:
            if null_cond is None:
                raise ShapeError("guidance != 1 requires a null condition")
            x0_hat = cfg_combine(x0_hat, denoiser(prefix, x, t, null_cond), guidance)
        if not torch.all(torch.isfinite(x0_hat)):
            raise NumericError(f"denoiser produced non-finite output at step {t}")
        if x0_hat.shape != x.shape:
            raise ShapeError("denoiser output shape differs from x_t")
        if t == 1:
            return x0_hat
        mean = (schedule.posterior_coef_x0[t - 1] * x0_hat
                + schedule.posterior_coef_xt[t - 1] * x)
        sigma = float(np.sqrt(schedule.posterior_var[t - 1]))
        x = mean + sigma * torch.randn(shape, generator=generator, dtype=dtype)
    return x  # unreachable for steps >= 1; keeps type checkers content
