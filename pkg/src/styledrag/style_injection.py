"""Style embedding and adapter injection into the denoiser's attention.

A frozen image encoder maps the target image to a style vector; a small
frozen projection turns that vector into extra key/value context tokens
for a selected subset of attention blocks.  The extra tokens travel
through the decoupled attention path, so scale 0 and all-zero tokens
reproduce the non-injected trajectory bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .diffusion import (AdapterInjection, ModelBundle, encode_checkpoint,
                        decode_checkpoint, denoising_loss_batch, sample)
from .errors import ConfigurationError, ParameterError, ShapeError
from .images import from_model, to_model, validate_image
from .personalization import PersonalizedModel
from .seeding import torch_generator

__all__ = ["StyleEncoder", "StyleEmbedding", "StyleAdapter", "AdapterTrainConfig",
           "embed_style", "inject_generate", "train_adapter", "DEFAULT_STYLE_DIM"]

DEFAULT_STYLE_DIM = 128


class StyleEncoder:
    """Frozen image-embedding network with optional L2 normalization."""

    def __init__(self, embedder, normalize: bool = True):
        self.embedder = embedder
        self.normalize = normalize
        self.version = getattr(embedder, "version", "unversioned")
        self.dim = getattr(embedder, "out_dim", getattr(embedder, "dim", None))

    def __call__(self, img: np.ndarray) -> np.ndarray:
        vec = np.asarray(self.embedder.embed_array(img), dtype=np.float32)
        if self.normalize:
            n = float(np.linalg.norm(vec))
            if n > 0:
                vec = vec / n
        return vec


@dataclass(frozen=True)
class StyleEmbedding:
    vector: np.ndarray
    source_id: str = ""
    encoder_version: str = "unversioned"

    def __post_init__(self):
        if not np.isfinite(self.vector).all():
            raise ShapeError("style embedding contains non-finite values")


def embed_style(enc: StyleEncoder, image: np.ndarray, source_id: str = "") -> StyleEmbedding:
    """Deterministic style embedding of an RGB image."""
    validate_image(image, "style image")
    return StyleEmbedding(vector=enc(image), source_id=source_id,
                          encoder_version=enc.version)


class StyleAdapter(nn.Module):
    """Frozen per-block projection: style vector -> K extra context tokens.

    Projections start at zero, so an untrained adapter is exactly a
    no-op regardless of scale.
    """

    def __init__(self, d_style: int = DEFAULT_STYLE_DIM, d_ctx: int = 64,
                 tokens_per_block: int = 4, selector=("up.0",), scale_default: float = 1.0):
        super().__init__()
        self.d_style = d_style
        self.d_ctx = d_ctx
        self.tokens_per_block = tokens_per_block
        self.selector = tuple(selector)
        self.scale_default = scale_default
        self.trained = False
        self.proj = nn.ModuleDict()
        for name in self.selector:
            linear = nn.Linear(d_style, tokens_per_block * d_ctx)
            nn.init.zeros_(linear.weight)
            nn.init.zeros_(linear.bias)
            self.proj[self._key(name)] = linear

    @staticmethod
    def _key(block_name: str) -> str:
        # ModuleDict keys cannot contain dots
        return block_name.replace(".", "_")

    def tokens_for(self, e_t: StyleEmbedding, batch: int = 1) -> dict:
        v = torch.from_numpy(np.asarray(e_t.vector, dtype=np.float32))
        if v.shape != (self.d_style,):
            raise ShapeError(f"style vector dim {tuple(v.shape)} != ({self.d_style},)")
        out = {}
        for name in self.selector:
            tok = self.proj[self._key(name)](v).reshape(self.tokens_per_block, self.d_ctx)
            out[name] = tok[None].expand(batch, -1, -1)
        return out

    def injection(self, e_t: StyleEmbedding, scale: float, batch: int = 1) -> AdapterInjection:
        return AdapterInjection(tokens=self.tokens_for(e_t, batch), scale=scale)

    def check_compatible(self, arch) -> None:
        unknown = set(self.selector) - set(arch.block_names)
        if unknown:
            raise ConfigurationError(
                f"adapter selector names unknown blocks {sorted(unknown)}; "
                f"architecture has {list(arch.block_names)}")
        if self.d_ctx != arch.d_ctx:
            raise ConfigurationError(f"adapter d_ctx {self.d_ctx} != model d_ctx {arch.d_ctx}")

    def to_bytes(self) -> bytes:
        sections = {"adapter": {
            "d_style": self.d_style, "d_ctx": self.d_ctx,
            "tokens_per_block": self.tokens_per_block,
            "selector": list(self.selector), "scale_default": self.scale_default,
            "trained": self.trained,
        }}
        return encode_checkpoint(dict(self.state_dict()), None, sections)

    @classmethod
    def from_bytes(cls, data: bytes) -> "StyleAdapter":
        tensors, _, sections = decode_checkpoint(data)
        meta = sections["adapter"]
        adapter = cls(d_style=meta["d_style"], d_ctx=meta["d_ctx"],
                      tokens_per_block=meta["tokens_per_block"],
                      selector=meta["selector"], scale_default=meta["scale_default"])
        adapter.load_state_dict(tensors)
        adapter.trained = meta["trained"]
        adapter.freeze()
        return adapter

    def freeze(self):
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def inject_generate(pm: PersonalizedModel, e_t: StyleEmbedding, adapter: StyleAdapter,
                    prompt_suffix: str = "", scale: float = 1.0, seed: int = 0,
                    steps: int = 50, guidance_scale: float = 1.0,
                    class_noun: str | None = None) -> np.ndarray:
    """Sample from the personalized model with style tokens injected.

    The prompt is the personalization template plus an optional
    attribute-edit suffix.  Adapter tokens are added only in the
    selected blocks, weighted by scale; scale 0 reproduces the plain
    sampling trajectory bit-exactly.
    """
    adapter.check_compatible(pm.arch)
    if class_noun is None:
        class_noun = pm.ledger.config.get("class_noun")
    if class_noun is None:
        raise ConfigurationError("class_noun not given and not recorded in the training ledger")
    ctx = pm.encode_prompt(pm.prompt_for(class_noun, prompt_suffix)).detach()
    uncond = pm.null_context().detach() if guidance_scale != 1.0 else None
    injection = adapter.injection(e_t, scale) if scale != 0.0 else None
    with torch.no_grad():
        img = sample(pm.unet, ctx, pm.schedule, steps=steps,
                     guidance_scale=guidance_scale, seed=seed, uncond_ctx=uncond,
                     shape=(pm.arch.out_channels, pm.arch.image_size, pm.arch.image_size),
                     adapter=injection)
    return from_model(img)


@dataclass
class AdapterTrainConfig:
    steps: int = 400
    batch_size: int = 8
    lr: float = 2e-3
    seed: int = 0
    train_scale: float = 1.0


def train_adapter(enc: StyleEncoder, bundle: ModelBundle, style_dataset,
                  cfg: AdapterTrainConfig = AdapterTrainConfig(),
                  tokens_per_block: int = 4, selector=("up.0",)) -> StyleAdapter:
    """Pretrain the injection projection on (image, style-domain) pairs.

    The denoiser stays frozen; each step conditions on the image's own
    style embedding through the adapter path and minimizes the
    denoising loss, so the projection learns to carry style information
    the denoiser can exploit.  The adapter is frozen afterwards.
    """
    pairs = list(style_dataset)
    if not pairs:
        raise ParameterError("style dataset is empty")
    adapter = StyleAdapter(d_style=enc.dim, d_ctx=bundle.arch.d_ctx,
                           tokens_per_block=tokens_per_block, selector=selector)
    adapter.check_compatible(bundle.arch)
    if cfg.steps == 0:
        return adapter.freeze()

    images = [validate_image(img) for img, _domain in pairs]
    vecs = torch.stack([torch.from_numpy(enc(img)) for img in images])
    x0_all = torch.stack([to_model(img) for img in images])
    null_ctx = bundle.null_context().detach()
    for p in bundle.unet.parameters():
        p.requires_grad_(False)
    opt = torch.optim.Adam(adapter.parameters(), lr=cfg.lr)
    for step in range(cfg.steps):
        gen = torch_generator(cfg.seed, "adapter", step)
        idx = torch.randint(len(images), (cfg.batch_size,), generator=gen)
        x0 = x0_all[idx]
        ctx = null_ctx[None].expand(len(idx), -1, -1)
        tokens = {}
        for name in adapter.selector:
            flat = adapter.proj[adapter._key(name)](vecs[idx])
            tokens[name] = flat.reshape(len(idx), adapter.tokens_per_block, adapter.d_ctx)
        injection = AdapterInjection(tokens=tokens, scale=cfg.train_scale)

        def model_with_adapter(x_t, t, c, flag=None):
            return bundle.unet(x_t, t, c, flag=flag, adapter=injection)

        loss = denoising_loss_batch(model_with_adapter, x0, ctx, bundle.schedule, gen)
        opt.zero_grad()
        loss.backward()
        opt.step()
    adapter.trained = True
    return adapter.freeze()
