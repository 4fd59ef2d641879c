"""Trainable denoising-diffusion backbone: schedule, UNet, loss, sampler."""

from .schedule import NoiseSchedule, build_schedule
from .unet import ArchSpec, UNet, AdapterInjection, predict_noise
from .ops import forward_diffuse, denoising_loss, denoising_loss_batch, sample
from .text import Vocabulary, VOCAB, TextEncoder, CONTEXT_DIM, CONTEXT_LEN
from .checkpoint import (save_checkpoint, load_checkpoint, encode_checkpoint,
                         decode_checkpoint, tensors_from_module, load_into_module)
from .bundle import ModelBundle

__all__ = [
    "ModelBundle",
    "NoiseSchedule", "build_schedule",
    "ArchSpec", "UNet", "AdapterInjection", "predict_noise",
    "forward_diffuse", "denoising_loss", "denoising_loss_batch", "sample",
    "Vocabulary", "VOCAB", "TextEncoder", "CONTEXT_DIM", "CONTEXT_LEN",
    "save_checkpoint", "load_checkpoint", "encode_checkpoint", "decode_checkpoint",
    "tensors_from_module", "load_into_module",
]
