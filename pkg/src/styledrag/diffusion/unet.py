"""Compact conditional UNet denoiser.

Pixel-space backbone sized for 64 px experiments: two down/up levels,
cross-attention at every resolution, FiLM-style time conditioning, and
an optional decoupled adapter path on each cross-attention block (used
for style injection).  The architecture descriptor fully determines
every tensor shape, so checkpoints can be validated structurally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigurationError, ShapeError

__all__ = ["ArchSpec", "UNet", "AdapterInjection", "predict_noise"]


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor; serialized into checkpoint headers."""

    in_channels: int = 3
    out_channels: int = 3
    image_size: int = 64
    base_width: int = 32
    channel_mults: tuple = (1, 2)
    d_ctx: int = 64
    time_dim: int = 128
    num_heads: int = 2
    cross_attention: bool = True
    num_flags: int = 0
    version: str = "toy-unet-v1"

    @property
    def block_names(self) -> tuple:
        n = len(self.channel_mults)
        return tuple([f"down.{i}" for i in range(n)] + ["mid"]
                     + [f"up.{i}" for i in range(n)])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        d["channel_mults"] = tuple(d["channel_mults"])
        return cls(**d)


@dataclass
class AdapterInjection:
    """Per-block extra context tokens applied through the decoupled path."""

    tokens: dict = field(default_factory=dict)  # block name -> (B, K, d_ctx)
    scale: float = 1.0


def _group_norm(channels: int) -> nn.GroupNorm:
    groups = 8
    while channels % groups:
        groups //= 2
    return nn.GroupNorm(max(groups, 1), channels)


def _timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    ang = t[:, None].to(freqs.dtype) * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int):
        super().__init__()
        self.norm1 = _group_norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, cout)
        self.norm2 = _group_norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Pixel-to-context attention with an optional decoupled extra path.

    Key/value projections carry no bias so an all-zero extra context
    contributes exactly nothing; the extra path's output is added before
    the shared output projection, weighted by its scale.
    """

    def __init__(self, channels: int, d_ctx: int, num_heads: int):
        super().__init__()
        if channels % num_heads:
            raise ConfigurationError(f"channels {channels} not divisible by heads {num_heads}")
        self.heads = num_heads
        self.norm = _group_norm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(d_ctx, channels, bias=False)
        self.to_v = nn.Linear(d_ctx, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def _attend(self, q, k, v):
        b, n, c = q.shape
        h = self.heads
        q = q.reshape(b, n, h, c // h).transpose(1, 2)
        k = k.reshape(b, k.shape[1], h, c // h).transpose(1, 2)
        v = v.reshape(b, v.shape[1], h, c // h).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v)
        return out.transpose(1, 2).reshape(b, n, c)

    def forward(self, x, ctx, extra_ctx=None, extra_scale: float = 1.0):
        b, c, hgt, wid = x.shape
        q_in = self.norm(x).reshape(b, c, hgt * wid).transpose(1, 2)
        q = self.to_q(q_in)
        attn = self._attend(q, self.to_k(ctx), self.to_v(ctx))
        if extra_ctx is not None and extra_scale != 0.0:
            attn = attn + extra_scale * self._attend(
                q, self.to_k(extra_ctx), self.to_v(extra_ctx))
        out = self.to_out(attn).transpose(1, 2).reshape(b, c, hgt, wid)
        return x + out


class UNet(nn.Module):
    def __init__(self, arch: ArchSpec, seed: int = 0):
        super().__init__()
        self.arch = arch
        widths = [arch.base_width * m for m in arch.channel_mults]
        td = arch.time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(arch.base_width, td), nn.SiLU(), nn.Linear(td, td))
        self.flag_embed = nn.Embedding(arch.num_flags, td) if arch.num_flags else None
        self.conv_in = nn.Conv2d(arch.in_channels, widths[0], 3, padding=1)

        def attn(c):
            return CrossAttention(c, arch.d_ctx, arch.num_heads) if arch.cross_attention else None

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = widths[0]
        for w in widths:
            self.down_res.append(ResBlock(prev, w, td))
            self.down_attn.append(attn(w) or nn.Identity())
            self.downsample.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
            prev = w
        self.mid_res1 = ResBlock(prev, prev, td)
        self.mid_attn = attn(prev) or nn.Identity()
        self.mid_res2 = ResBlock(prev, prev, td)
        self.up_conv = nn.ModuleList()
        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        for w, w_skip in zip(reversed(widths), reversed(widths)):
            self.up_conv.append(nn.Conv2d(prev, w, 3, padding=1))
            self.up_res.append(ResBlock(w + w_skip, w, td))
            self.up_attn.append(attn(w) or nn.Identity())
            prev = w
        self.norm_out = _group_norm(widths[0])
        self.conv_out = nn.Conv2d(widths[0], arch.out_channels, 3, padding=1)
        self._init_weights(seed)

    def _init_weights(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                if p.ndim >= 2:
                    fan_in = p[0].numel()
                    bound = math.sqrt(3.0 / fan_in)
                    p.uniform_(-bound, bound, generator=gen)
                else:
                    p.zero_()
            for m in self.modules():
                if isinstance(m, nn.GroupNorm):
                    m.weight.fill_(1.0)
            # stabilized init: residual contributions and the output head start at zero
            for m in self.modules():
                if isinstance(m, ResBlock):
                    m.conv2.weight.zero_()
                if isinstance(m, CrossAttention):
                    m.to_out.weight.zero_()
            self.conv_out.weight.zero_()
            self.conv_out.bias.zero_()

    def _adapter_args(self, adapter: AdapterInjection | None, name: str):
        if adapter is None or name not in adapter.tokens or adapter.scale == 0.0:
            return {}
        return {"extra_ctx": adapter.tokens[name], "extra_scale": adapter.scale}

    def forward(self, x: torch.Tensor, t: torch.Tensor, ctx: torch.Tensor | None = None,
                flag: torch.Tensor | None = None,
                adapter: AdapterInjection | None = None) -> torch.Tensor:
        if x.shape[1] != self.arch.in_channels:
            raise ShapeError(f"expected {self.arch.in_channels} input channels, got {x.shape[1]}")
        if self.arch.cross_attention:
            if ctx is None:
                raise ShapeError("model uses cross-attention but no context was given")
            if ctx.shape[-1] != self.arch.d_ctx:
                raise ShapeError(f"context dim {ctx.shape[-1]} != d_ctx {self.arch.d_ctx}")
        if adapter is not None:
            unknown = set(adapter.tokens) - set(self.arch.block_names)
            if unknown:
                raise ConfigurationError(f"adapter targets unknown blocks: {sorted(unknown)}")
        temb = self.time_mlp(_timestep_embedding(t.to(x.dtype), self.arch.base_width))
        if flag is not None:
            if self.flag_embed is None:
                raise ConfigurationError("model has no flag embedding")
            temb = temb + self.flag_embed(flag)

        def run_attn(mod, h, name):
            if isinstance(mod, nn.Identity):
                return mod(h)
            return mod(h, ctx, **self._adapter_args(adapter, name))

        h = self.conv_in(x)
        skips = []
        for i, (res, at, down) in enumerate(zip(self.down_res, self.down_attn, self.downsample)):
            h = run_attn(at, res(h, temb), f"down.{i}")
            skips.append(h)
            h = down(h)
        h = self.mid_res2(run_attn(self.mid_attn, self.mid_res1(h, temb), "mid"), temb)
        for i, (conv, res, at) in enumerate(zip(self.up_conv, self.up_res, self.up_attn)):
            h = conv(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = res(torch.cat([h, skips[-(i + 1)]], dim=1), temb)
            h = run_attn(at, h, f"up.{i}")
        return self.conv_out(F.silu(self.norm_out(h)))


def predict_noise(model, x_t: torch.Tensor, t, ctx: torch.Tensor | None,
                  flag=None, adapter: AdapterInjection | None = None) -> torch.Tensor:
    """Single-image or batched noise prediction; pure in (params, inputs).

    Accepts (C, H, W) or (B, C, H, W) inputs and broadcasts scalar step
    indices and unbatched contexts accordingly.
    """
    single = x_t.ndim == 3
    xb = x_t[None] if single else x_t
    b = xb.shape[0]
    tb = torch.as_tensor(t, dtype=torch.long).reshape(-1)
    if tb.numel() == 1:
        tb = tb.expand(b)
    cb = None
    if ctx is not None:
        cb = ctx[None] if ctx.ndim == 2 else ctx
        if cb.shape[0] == 1 and b > 1:
            cb = cb.expand(b, -1, -1)
    fb = None
    if flag is not None:
        fb = torch.as_tensor(flag, dtype=torch.long).reshape(-1)
        if fb.numel() == 1:
            fb = fb.expand(b)
    eps = model(xb, tb, cb, flag=fb, adapter=adapter)
    return eps[0] if single else eps
