"""Joint weight-space and embedding-space subject learning.

A frozen base denoiser gets low-rank deltas on its attention
projections plus a pair of learned placeholder-token embeddings and a
trainable prompt encoder, all optimized together with the denoising
loss on a single plain-background subject image.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, asdict

import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import (ArchSpec, NoiseSchedule, UNet, TextEncoder, VOCAB,
                        build_schedule, denoising_loss_batch,
                        encode_checkpoint, decode_checkpoint)
from .errors import (ConfigurationError, InvariantError, NotFoundError,
                     ParameterError, ShapeError, TrainingDivergenceError)
from .images import to_model, validate_image
from .seeding import torch_generator

__all__ = ["LoraLinear", "TokenEmbeddingPair", "PersonalizeConfig", "PersonalizedModel",
           "attach_lora", "init_token_pair", "personalize", "checkpoint_at",
           "default_lora_targets"]


class LoraLinear(nn.Module):
    """Frozen linear plus a trainable low-rank delta alpha * (B @ A).

    B is zero-initialized, so the wrapped layer reproduces the base
    layer bit-exactly until trained.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float, gen: torch.Generator):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.alpha = alpha
        a = torch.empty(rank, base.in_features)
        a.uniform_(-1.0 / base.in_features ** 0.5, 1.0 / base.in_features ** 0.5, generator=gen)
        self.lora_a = nn.Parameter(a)
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))

    def forward(self, x):
        return self.base(x) + self.alpha * F.linear(F.linear(x, self.lora_a), self.lora_b)

    def effective_delta(self) -> torch.Tensor:
        return self.alpha * (self.lora_b @ self.lora_a)


class TokenEmbeddingPair(nn.Module):
    """Two learned token embeddings bound to the reserved placeholder ids."""

    def __init__(self, vectors: torch.Tensor, token_ids=VOCAB.placeholder_ids):
        super().__init__()
        if vectors.shape[0] != 2:
            raise ShapeError(f"expected 2 vectors, got {vectors.shape[0]}")
        self.embed = nn.Parameter(vectors.clone())
        self.token_ids = tuple(token_ids)

    @property
    def e1(self):
        return self.embed[0]

    @property
    def e2(self):
        return self.embed[1]


def init_token_pair(d: int, init_mode: str, text_encoder: TextEncoder,
                    seed: int = 0) -> TokenEmbeddingPair:
    """"rare-token" copies the two reserved rare rows; "gaussian" draws N(0, 0.02^2)."""
    if d != text_encoder.dim:
        raise ShapeError(f"token dim {d} != text encoder dim {text_encoder.dim}")
    if init_mode == "rare-token":
        rows = text_encoder.token_table.detach()[list(text_encoder.vocab.rare_ids)]
        return TokenEmbeddingPair(rows)
    if init_mode == "gaussian":
        gen = torch_generator(seed, "token-pair")
        return TokenEmbeddingPair(torch.randn(2, d, generator=gen) * 0.02)
    raise ParameterError(f"unknown init mode {init_mode!r}")


def default_lora_targets(unet: UNet) -> list:
    """Weight names of every attention projection (q, k, v, out)."""
    names = []
    for name, module in unet.named_modules():
        if name.endswith(("to_q", "to_k", "to_v", "to_out")) and isinstance(module, nn.Linear):
            names.append(name + ".weight")
    return sorted(names)


@dataclass
class PersonalizeConfig:
    iterations: int = 600
    batch_size: int = 1
    unet_lr: float = 1e-5
    unet_weight_decay: float = 0.3
    text_lr: float = 1e-3
    text_weight_decay: float = 0.1
    checkpoint_every: int = 100
    seed: int = 0
    cfg_drop_prob: float = 0.1
    class_noun: str = "disk"

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.unet_lr <= 0 or self.text_lr <= 0:
            raise ParameterError("learning rates must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch size must be >= 1")


@dataclass
class TrainingLedger:
    iterations_done: int = 0
    losses: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)   # iteration -> checkpoint bytes
    config: dict = field(default_factory=dict)


class PersonalizedModel:
    """Frozen base denoiser + trainable deltas, token pair, prompt encoder."""

    def __init__(self, unet: UNet, text_encoder: TextEncoder, tokens: TokenEmbeddingPair,
                 schedule: NoiseSchedule, rank: int, alpha: float, targets: list):
        self.unet = unet
        self.text_encoder = text_encoder
        self.tokens = tokens
        self.schedule = schedule
        self.rank = rank
        self.alpha = alpha
        self.targets = list(targets)
        self.ledger = TrainingLedger()
        self.opt_state: bytes | None = None
        self.base_checksum = self.frozen_checksum()

    @property
    def arch(self) -> ArchSpec:
        return self.unet.arch

    def frozen_params(self):
        return [(n, p) for n, p in self.unet.named_parameters() if not p.requires_grad]

    def frozen_checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.frozen_params():
            h.update(name.encode())
            h.update(p.detach().numpy().tobytes())
        return h.hexdigest()

    def trainable_parameters(self):
        lora = [p for p in self.unet.parameters() if p.requires_grad]
        text = list(self.text_encoder.parameters()) + list(self.tokens.parameters())
        return lora, text

    def prompt_for(self, class_noun: str, suffix: str = "") -> str:
        prompt = f"a <s1><s2> {class_noun}"
        return f"{prompt} {suffix}".strip()

    def encode_prompt(self, text: str) -> torch.Tensor:
        return self.text_encoder.encode_prompt(text, token_pair=self.tokens.embed)

    def null_context(self) -> torch.Tensor:
        return self.text_encoder.null_context()

    def predict_noise(self, x_t, t, ctx, adapter=None):
        from .diffusion import predict_noise
        return predict_noise(self.unet, x_t, t, ctx, adapter=adapter)

    # -- serialization -----------------------------------------------------

    def snapshot(self) -> bytes:
        tensors = {f"unet.{n}": v for n, v in self.unet.state_dict().items()}
        tensors.update({f"text.{n}": v for n, v in self.text_encoder.state_dict().items()})
        tensors.update({f"tokens.{n}": v for n, v in self.tokens.state_dict().items()})
        sections = {
            "kind": "personalized",
            "rank": self.rank,
            "alpha": self.alpha,
            "targets": self.targets,
            "ledger": {"iterations_done": self.ledger.iterations_done,
                       "losses": self.ledger.losses,
                       "checkpoint_iterations": sorted(self.ledger.checkpoints),
                       "config": self.ledger.config},
            "schedule": {"num_steps": self.schedule.num_steps,
                         "beta_start": float(self.schedule.betas[0]),
                         "beta_end": float(self.schedule.betas[-1])},
        }
        if self.opt_state is not None:
            opt_tensors, opt_meta = _decode_opt_state(self.opt_state)
            tensors.update({f"opt.{n}": v for n, v in opt_tensors.items()})
            sections["optimizer"] = opt_meta
        return encode_checkpoint(tensors, self.arch.to_dict(), sections)

    @classmethod
    def from_snapshot(cls, data: bytes) -> "PersonalizedModel":
        tensors, arch_dict, sections = decode_checkpoint(data)
        arch = ArchSpec.from_dict(arch_dict)
        base = UNet(arch)
        pm = attach_lora_bundle(base, TextEncoder(dim=arch.d_ctx),
                                rank=int(sections["rank"]), alpha=float(sections["alpha"]),
                                targets=list(sections["targets"]),
                                schedule=build_schedule(**sections["schedule"]))
        pm.unet.load_state_dict({n[5:]: v for n, v in tensors.items() if n.startswith("unet.")})
        pm.text_encoder.load_state_dict(
            {n[5:]: v for n, v in tensors.items() if n.startswith("text.")})
        pm.tokens.load_state_dict(
            {n[7:]: v for n, v in tensors.items() if n.startswith("tokens.")})
        for p in pm.unet.parameters():
            p.requires_grad_(False)
        for name, module in pm.unet.named_modules():
            if isinstance(module, LoraLinear):
                module.lora_a.requires_grad_(True)
                module.lora_b.requires_grad_(True)
        led = sections["ledger"]
        pm.ledger.iterations_done = led["iterations_done"]
        pm.ledger.losses = list(led["losses"])
        pm.ledger.config = dict(led["config"])
        opt_tensors = {n[4:]: v for n, v in tensors.items() if n.startswith("opt.")}
        if opt_tensors:
            pm.opt_state = _encode_opt_state(opt_tensors, sections["optimizer"])
        pm.base_checksum = pm.frozen_checksum()
        return pm


def _encode_opt_state(tensors: dict, meta: dict) -> bytes:
    return encode_checkpoint(tensors, None, {"meta": meta})


def _decode_opt_state(data: bytes):
    tensors, _, sections = decode_checkpoint(data)
    return tensors, sections["meta"]


def _opt_state_bytes(opt: torch.optim.Optimizer) -> bytes:
    sd = opt.state_dict()
    tensors, meta_state = {}, {}
    for idx, state in sd["state"].items():
        meta_state[str(idx)] = sorted(state.keys())
        for key, value in state.items():
            tensors[f"{idx}.{key}"] = value if isinstance(value, torch.Tensor) \
                else torch.tensor(float(value))
    meta = {"param_groups": sd["param_groups"], "state_keys": meta_state}
    return _encode_opt_state(tensors, meta)


def _load_opt_state(opt: torch.optim.Optimizer, data: bytes):
    tensors, meta = _decode_opt_state(data)
    state = {}
    for idx_str, keys in meta["state_keys"].items():
        entry = {}
        for key in keys:
            value = tensors[f"{idx_str}.{key}"]
            entry[key] = value.reshape(()) if key == "step" and value.ndim else value
        state[int(idx_str)] = entry
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def attach_lora_bundle(base_unet: UNet, text_encoder: TextEncoder, rank: int,
                       alpha: float, targets: list, schedule: NoiseSchedule,
                       tokens: TokenEmbeddingPair | None = None,
                       seed: int = 0) -> PersonalizedModel:
    """Internal constructor that wires an already-copied bundle."""
    if rank < 1:
        raise ParameterError(f"rank must be >= 1, got {rank}")
    if not targets:
        raise ConfigurationError("no LoRA targets given; nothing to train")
    param_names = {n for n, _ in base_unet.named_parameters()}
    unknown = [t for t in targets if t not in param_names]
    if unknown:
        raise ConfigurationError(f"unknown LoRA target tensors: {unknown}")
    for p in base_unet.parameters():
        p.requires_grad_(False)
    gen = torch_generator(seed, "lora-init")
    for target in targets:
        module_path = target.rsplit(".weight", 1)[0]
        parent_path, _, attr = module_path.rpartition(".")
        parent = base_unet.get_submodule(parent_path) if parent_path else base_unet
        linear = getattr(parent, attr)
        if not isinstance(linear, nn.Linear):
            raise ConfigurationError(f"LoRA target {target} is not a linear projection")
        setattr(parent, attr, LoraLinear(linear, rank, alpha, gen))
    for p in text_encoder.parameters():
        p.requires_grad_(True)
    if tokens is None:
        tokens = init_token_pair(text_encoder.dim, "rare-token", text_encoder)
    return PersonalizedModel(base_unet, text_encoder, tokens, schedule,
                             rank, alpha, targets)


def attach_lora(base_unet: UNet, text_encoder: TextEncoder, schedule: NoiseSchedule,
                rank: int = 8, alpha: float = 8.0, targets: list | None = None,
                init_mode: str = "rare-token", seed: int = 0) -> PersonalizedModel:
    """Wrap a base model with zero-initialized low-rank deltas.

    The caller's model is copied; predictions equal the base model
    bit-exactly until training starts.  Targets default to every
    attention projection (q/k/v/out).
    """
    base_copy = copy.deepcopy(base_unet)
    text_copy = copy.deepcopy(text_encoder)
    if targets is None:
        targets = default_lora_targets(base_copy)
    pm = attach_lora_bundle(base_copy, text_copy, rank, alpha, list(targets), schedule,
                            seed=seed)
    if init_mode != "rare-token":
        pm.tokens = init_token_pair(text_copy.dim, init_mode, text_copy, seed=seed)
    pm.ledger.checkpoints[0] = pm.snapshot()
    return pm


def _build_optimizer(pm: PersonalizedModel, cfg: PersonalizeConfig) -> torch.optim.Optimizer:
    lora, text = pm.trainable_parameters()
    return torch.optim.AdamW([
        {"params": lora, "lr": cfg.unet_lr, "weight_decay": cfg.unet_weight_decay},
        {"params": text, "lr": cfg.text_lr, "weight_decay": cfg.text_weight_decay},
    ])


def personalize(pm: PersonalizedModel, subject_image, cfg: PersonalizeConfig) -> PersonalizedModel:
    """Run the denoising-loss training loop on one subject image.

    Training resumes from the ledger's iteration counter up to
    cfg.iterations; per-iteration randomness derives from (seed,
    iteration), so an interrupted-and-resumed run reproduces an
    uninterrupted one bit-exactly.  Only the deltas, the token pair and
    the prompt encoder receive updates; the frozen base is checksummed.
    """
    validate_image(subject_image, "subject_image")
    x0_single = to_model(subject_image)
    if x0_single.shape[0] != pm.arch.in_channels:
        raise ShapeError("subject image channels do not match the model")
    pm.ledger.config = asdict(cfg)
    if pm.ledger.iterations_done >= cfg.iterations:
        return pm

    opt = _build_optimizer(pm, cfg)
    if pm.opt_state is not None:
        _load_opt_state(opt, pm.opt_state)
    ids = pm.text_encoder.vocab.encode(pm.prompt_for(cfg.class_noun))
    null_ids = pm.text_encoder.vocab.encode("")
    x0 = x0_single[None].expand(cfg.batch_size, -1, -1, -1)

    for it in range(pm.ledger.iterations_done, cfg.iterations):
        gen = torch_generator(cfg.seed, "personalize", it)
        drop = bool(torch.rand((), generator=gen) < cfg.cfg_drop_prob)
        if drop:
            ctx = pm.text_encoder(null_ids[None].expand(cfg.batch_size, -1))
        else:
            ctx = pm.text_encoder(ids[None].expand(cfg.batch_size, -1),
                                  token_pair=pm.tokens.embed)
        loss = denoising_loss_batch(pm.unet, x0, ctx, pm.schedule, gen)
        value = float(loss.detach())
        if not torch.isfinite(loss):
            raise TrainingDivergenceError(it, value)
        opt.zero_grad()
        loss.backward()
        opt.step()
        pm.ledger.losses.append(value)
        pm.ledger.iterations_done = it + 1
        if (it + 1) % cfg.checkpoint_every == 0 or it + 1 == cfg.iterations:
            pm.opt_state = _opt_state_bytes(opt)
            pm.ledger.checkpoints[it + 1] = pm.snapshot()

    pm.opt_state = _opt_state_bytes(opt)
    if pm.frozen_checksum() != pm.base_checksum:
        raise InvariantError("frozen base parameters changed during personalization")
    return pm


def checkpoint_at(pm: PersonalizedModel, iteration: int) -> PersonalizedModel:
    """Restore the model state recorded at a checkpointed iteration."""
    if iteration not in pm.ledger.checkpoints:
        raise NotFoundError(
            f"no checkpoint at iteration {iteration}; have {sorted(pm.ledger.checkpoints)}")
    restored = PersonalizedModel.from_snapshot(pm.ledger.checkpoints[iteration])
    restored.ledger.checkpoints = {
        k: v for k, v in pm.ledger.checkpoints.items() if k <= iteration}
    return restored
