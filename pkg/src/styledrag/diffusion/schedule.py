"""Discrete noise schedule for the denoising-diffusion backbone."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError

__all__ = ["NoiseSchedule", "build_schedule", "DEFAULT_T", "DEFAULT_BETA_START", "DEFAULT_BETA_END"]

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step betas with derived alphas and cumulative products.

    alpha_bars is strictly decreasing and every entry lies in (0, 1).
    """

    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.betas.shape != (self.num_steps,):
            raise ParameterError("betas length must equal num_steps")
        if not (np.all(self.betas > 0) and np.all(self.betas < 1)):
            raise ParameterError("betas must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ParameterError("alpha_bars must be strictly decreasing")

    def step_from_unit(self, u: float) -> int:
        """Map continuous time in [0, 1) to a discrete step index."""
        return min(int(u * self.num_steps), self.num_steps - 1)


def build_schedule(num_steps: int = DEFAULT_T,
                   beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linear beta schedule, endpoints inclusive."""
    if num_steps < 1:
        raise ParameterError(f"num_steps must be >= 1, got {num_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(num_steps=num_steps, betas=betas, alphas=alphas,
                         alpha_bars=alpha_bars)
