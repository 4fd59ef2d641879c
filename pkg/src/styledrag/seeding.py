"""Deterministic seed derivation.

Every stochastic stage derives its own stream from a user seed plus a
string tag, so interleaving or resuming stages never perturbs another
stage's draws.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

__all__ = ["derive_seed", "torch_generator", "numpy_generator"]


def derive_seed(seed: int, *tags) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little") % (2**63)


def torch_generator(seed: int, *tags) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(seed, *tags) if tags else int(seed))
    return gen


def numpy_generator(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags) if tags else int(seed))
