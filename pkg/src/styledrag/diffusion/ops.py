"""Forward noising, the denoising loss, and the deterministic sampler."""

from __future__ import annotations

import math

import torch

from ..errors import ParameterError, ShapeError
from ..seeding import torch_generator
from .schedule import NoiseSchedule
from .unet import AdapterInjection, predict_noise

__all__ = ["forward_diffuse", "denoising_loss", "denoising_loss_batch", "sample"]


def _check_step(t: int, schedule: NoiseSchedule):
    if not 0 <= int(t) < schedule.num_steps:
        raise ParameterError(f"step {t} outside [0, {schedule.num_steps})")


def forward_diffuse(x0: torch.Tensor, t: int, eps: torch.Tensor,
                    schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    _check_step(t, schedule)
    if eps.shape != x0.shape:
        raise ShapeError(f"noise shape {tuple(eps.shape)} != image shape {tuple(x0.shape)}")
    ab = float(schedule.alpha_bars[int(t)])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def denoising_loss(model, x0: torch.Tensor, ctx: torch.Tensor,
                   schedule: NoiseSchedule, rng_seed: int, flag=None) -> torch.Tensor:
    """One-draw noise-prediction MSE, deterministic per rng_seed.

    Draws t uniformly over steps and eps standard normal, then returns
    the elementwise mean of (eps - model prediction)^2 as a scalar
    tensor (differentiable when model parameters require grad).
    """
    gen = torch_generator(rng_seed)
    t = int(torch.randint(schedule.num_steps, (1,), generator=gen).item())
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    x_t = forward_diffuse(x0, t, eps, schedule)
    pred = predict_noise(model, x_t, t, ctx, flag=flag)
    return ((eps - pred) ** 2).mean()


def denoising_loss_batch(model, x0: torch.Tensor, ctx: torch.Tensor,
                         schedule: NoiseSchedule, gen: torch.Generator,
                         flag: torch.Tensor | None = None,
                         cond: torch.Tensor | None = None) -> torch.Tensor:
    """Batched training objective with per-sample (t, eps) draws.

    `cond` holds extra conditioning channels concatenated to the noisy
    input (image-conditional models); `flag` selects per-sample learned
    flag embeddings.
    """
    b = x0.shape[0]
    t = torch.randint(schedule.num_steps, (b,), generator=gen)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    ab = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype)[t][:, None, None, None]
    x_t = torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
    if cond is not None:
        x_t = torch.cat([x_t, cond], dim=1)
    pred = model(x_t, t, ctx, flag=flag)
    return ((eps - pred) ** 2).mean()


def sample(model, ctx: torch.Tensor, schedule: NoiseSchedule, steps: int = 50,
           guidance_scale: float = 1.0, seed: int = 0,
           uncond_ctx: torch.Tensor | None = None,
           shape: tuple = (3, 64, 64),
           adapter: AdapterInjection | None = None,
           cond: torch.Tensor | None = None, flag=None) -> torch.Tensor:
    """Deterministic DDIM-style ancestral loop; pure in (params, seed).

    guidance_scale 1 short-circuits to the conditional branch so the
    identity "scale 1 == pure conditional trajectory" holds bit-exactly.
    Output is clipped to model-space bounds [-1, 1].
    """
    if steps < 1 or steps > schedule.num_steps:
        raise ParameterError(f"steps must be in [1, {schedule.num_steps}], got {steps}")
    if guidance_scale < 0:
        raise ParameterError(f"guidance_scale must be >= 0, got {guidance_scale}")
    use_guidance = guidance_scale != 1.0 and uncond_ctx is not None
    ts = torch.linspace(schedule.num_steps - 1, 0, steps).round().long().tolist()
    gen = torch_generator(seed)
    x = torch.randn((1,) + tuple(shape), generator=gen)
    cond_b = cond[None] if cond is not None and cond.ndim == 3 else cond

    def eps_at(x_t, t):
        inp = torch.cat([x_t, cond_b], dim=1) if cond_b is not None else x_t
        e = predict_noise(model, inp, t, ctx, flag=flag, adapter=adapter)
        if use_guidance:
            eu = predict_noise(model, inp, t, uncond_ctx, flag=flag)
            e = eu + guidance_scale * (e - eu)
        return e

    with torch.no_grad():
        for i, t in enumerate(ts):
            ab_t = float(schedule.alpha_bars[t])
            eps = eps_at(x, t)
            x0 = (x - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
            x0 = x0.clamp(-1.0, 1.0)
            if i + 1 < len(ts):
                ab_s = float(schedule.alpha_bars[ts[i + 1]])
                x = math.sqrt(ab_s) * x0 + math.sqrt(1.0 - ab_s) * eps
            else:
                x = x0
    return x[0].clamp(-1.0, 1.0)
