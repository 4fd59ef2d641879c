"""Small embedding networks standing in for large pretrained encoders.

One convolutional image embedder is reused across the package: trained
with a style-contrastive objective it separates style domains, with a
subject-contrastive objective it separates subject classes, and paired
with a bag-of-words text tower it gives a joint image/text space over
the toy vocabulary.  Real encoder weights can replace any of these
behind the same interfaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import VOCAB, encode_checkpoint, decode_checkpoint
from .errors import ParameterError
from .images import to_model, validate_image
from .seeding import torch_generator

__all__ = ["ConvEmbedder", "TextBagEncoder", "ColorStatsEncoder", "ContrastiveConfig",
           "train_supervised_contrastive", "train_joint_image_text"]


class ConvEmbedder(nn.Module):
    """Strided conv stack -> GAP -> projection; unit-norm output."""

    def __init__(self, out_dim: int = 64, width: int = 16, seed: int = 0,
                 version: str = "conv-embedder-v1"):
        super().__init__()
        self.out_dim = out_dim
        self.width = width
        self.version = version
        w = width
        self.net = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.proj = nn.Linear(4 * w, out_dim)
        gen = torch_generator(seed, "conv-embedder")
        with torch.no_grad():
            for p in self.parameters():
                if p.ndim >= 2:
                    bound = (3.0 / p[0].numel()) ** 0.5
                    p.uniform_(-bound, bound, generator=gen)
                else:
                    p.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.net(x).mean(dim=(2, 3))
        z = self.proj(h)
        return F.normalize(z, dim=-1)

    def embed_array(self, img: np.ndarray) -> np.ndarray:
        validate_image(img)
        with torch.no_grad():
            return self.forward(to_model(img[..., :3])[None])[0].numpy()

    def to_bytes(self) -> bytes:
        return encode_checkpoint(
            dict(self.state_dict()), None,
            {"kind": "conv-embedder", "out_dim": self.out_dim, "width": self.width,
             "version": self.version})

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConvEmbedder":
        tensors, _, sections = decode_checkpoint(data)
        model = cls(out_dim=sections["out_dim"], width=sections["width"],
                    version=sections["version"])
        model.load_state_dict(tensors)
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        return model


class TextBagEncoder(nn.Module):
    """Mean of token embeddings -> projection; unit-norm output."""

    def __init__(self, out_dim: int = 64, table_dim: int = 32, seed: int = 0,
                 vocab=VOCAB):
        super().__init__()
        self.vocab = vocab
        self.out_dim = out_dim
        self.table_dim = table_dim
        gen = torch_generator(seed, "text-bag")
        self.table = nn.Parameter(torch.randn(len(vocab), table_dim, generator=gen) * 0.05)
        self.proj = nn.Linear(table_dim, out_dim)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        pad = self.vocab.pad_id
        mask = (ids != pad).float()[..., None]
        summed = (self.table[ids] * mask).sum(dim=-2)
        denom = mask.sum(dim=-2).clamp(min=1.0)
        return F.normalize(self.proj(summed / denom), dim=-1)

    def embed_text(self, text: str) -> np.ndarray:
        ids = self.vocab.encode(text)
        with torch.no_grad():
            return self.forward(ids[None])[0].numpy()

    def to_bytes(self) -> bytes:
        return encode_checkpoint(
            dict(self.state_dict()), None,
            {"kind": "text-bag", "out_dim": self.out_dim, "table_dim": self.table_dim})

    @classmethod
    def from_bytes(cls, data: bytes) -> "TextBagEncoder":
        tensors, _, sections = decode_checkpoint(data)
        model = cls(out_dim=sections["out_dim"], table_dim=sections["table_dim"])
        model.load_state_dict(tensors)
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        return model


class ColorStatsEncoder:
    """Handcrafted palette-statistics embedding (flip invariant).

    Channel moments plus per-channel histograms; useful as a symmetry
    oracle in tests and as a dependency-free style fingerprint.
    """

    version = "color-stats-v1"

    def __init__(self, bins: int = 8, normalize: bool = True):
        self.bins = bins
        self.normalize = normalize
        self.dim = 3 * bins + 6

    def embed_array(self, img: np.ndarray) -> np.ndarray:
        validate_image(img)
        rgb = img[..., :3].astype(np.float64)
        feats = [rgb.mean(axis=(0, 1)), rgb.std(axis=(0, 1))]
        for c in range(3):
            hist, _ = np.histogram(rgb[..., c], bins=self.bins, range=(0.0, 1.0))
            feats.append(hist / rgb[..., c].size)
        v = np.concatenate(feats).astype(np.float32)
        if self.normalize:
            n = np.linalg.norm(v)
            if n > 0:
                v = v / n
        return v


@dataclass
class ContrastiveConfig:
    steps: int = 300
    batch_size: int = 32
    lr: float = 2e-3
    temperature: float = 0.15
    seed: int = 0


def _image_batch(images, idx) -> torch.Tensor:
    return torch.stack([to_model(images[i][..., :3]) for i in idx.tolist()])


def train_supervised_contrastive(images, labels, out_dim: int = 64,
                                 cfg: ContrastiveConfig = ContrastiveConfig(),
                                 width: int = 16, version: str = "contrastive-v1") -> ConvEmbedder:
    """InfoNCE with same-label positives; returns a frozen embedder."""
    if len(images) != len(labels) or not images:
        raise ParameterError("images and labels must be nonempty and aligned")
    model = ConvEmbedder(out_dim=out_dim, width=width, seed=cfg.seed, version=version)
    label_ids = torch.tensor([sorted(set(labels)).index(l) for l in labels])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    for step in range(cfg.steps):
        gen = torch_generator(cfg.seed, "contrastive", step)
        idx = torch.randint(len(images), (cfg.batch_size,), generator=gen)
        z = model(_image_batch(images, idx))
        y = label_ids[idx]
        sim = z @ z.T / cfg.temperature
        eye = torch.eye(len(idx), dtype=torch.bool)
        pos = (y[:, None] == y[None, :]) & ~eye
        sim = sim.masked_fill(eye, float("-inf"))
        log_prob = sim - torch.logsumexp(sim, dim=1, keepdim=True)
        pos_counts = pos.sum(dim=1).clamp(min=1)
        loss = -(log_prob.masked_fill(~pos, 0.0).sum(dim=1) / pos_counts)
        loss = loss[pos.any(dim=1)].mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def train_joint_image_text(images, captions, out_dim: int = 64,
                           cfg: ContrastiveConfig = ContrastiveConfig(),
                           width: int = 16):
    """CLIP-style two-tower training over the toy vocabulary.

    Returns (image_encoder, text_encoder), both frozen.
    """
    if len(images) != len(captions) or not images:
        raise ParameterError("images and captions must be nonempty and aligned")
    img_enc = ConvEmbedder(out_dim=out_dim, width=width, seed=cfg.seed,
                           version="joint-image-v1")
    txt_enc = TextBagEncoder(out_dim=out_dim, seed=cfg.seed)
    ids = torch.stack([VOCAB.encode(c) for c in captions])
    params = list(img_enc.parameters()) + list(txt_enc.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    for step in range(cfg.steps):
        gen = torch_generator(cfg.seed, "joint", step)
        idx = torch.randint(len(images), (cfg.batch_size,), generator=gen)
        zi = img_enc(_image_batch(images, idx))
        zt = txt_enc(ids[idx])
        logits = zi @ zt.T / cfg.temperature
        target = torch.arange(len(idx))
        loss = 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))
        opt.zero_grad()
        loss.backward()
        opt.step()
    for enc in (img_enc, txt_enc):
        enc.eval()
        for p in enc.parameters():
            p.requires_grad_(False)
    return img_enc, txt_enc
