"""Denoiser + prompt encoder + schedule as one loadable unit."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .checkpoint import encode_checkpoint, decode_checkpoint
from .schedule import NoiseSchedule, build_schedule
from .text import TextEncoder
from .unet import ArchSpec, UNet

__all__ = ["ModelBundle"]


@dataclass
class ModelBundle:
    unet: UNet
    text_encoder: TextEncoder
    schedule: NoiseSchedule
    version: str = "base-v1"

    @property
    def arch(self) -> ArchSpec:
        return self.unet.arch

    def encode_prompt(self, text: str) -> torch.Tensor:
        return self.text_encoder.encode_prompt(text)

    def null_context(self) -> torch.Tensor:
        return self.text_encoder.null_context()

    def to_bytes(self) -> bytes:
        tensors = {f"unet.{n}": v for n, v in self.unet.state_dict().items()}
        tensors.update({f"text.{n}": v for n, v in self.text_encoder.state_dict().items()})
        sections = {
            "kind": "base-bundle",
            "version": self.version,
            "schedule": {"num_steps": self.schedule.num_steps,
                         "beta_start": float(self.schedule.betas[0]),
                         "beta_end": float(self.schedule.betas[-1])},
        }
        return encode_checkpoint(tensors, self.arch.to_dict(), sections)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelBundle":
        tensors, arch_dict, sections = decode_checkpoint(data)
        arch = ArchSpec.from_dict(arch_dict)
        unet = UNet(arch)
        unet.load_state_dict({n[5:]: v for n, v in tensors.items() if n.startswith("unet.")})
        text = TextEncoder(dim=arch.d_ctx)
        text.load_state_dict({n[5:]: v for n, v in tensors.items() if n.startswith("text.")})
        schedule = build_schedule(**sections["schedule"])
        bundle = cls(unet=unet, text_encoder=text, schedule=schedule,
                     version=sections.get("version", "base-v1"))
        bundle.unet.eval()
        bundle.text_encoder.eval()
        return bundle

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "ModelBundle":
        return cls.from_bytes(Path(path).read_bytes())
