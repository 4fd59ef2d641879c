"""Shared checkpoint archive format.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header
(format version, optional architecture descriptor, tensor directory
with names/shapes/dtype, free-form JSON sections), then raw
little-endian float32 tensor blobs concatenated in directory order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CorruptionError, NotFoundError, ParameterError

__all__ = ["save_checkpoint", "load_checkpoint", "encode_checkpoint", "decode_checkpoint",
           "tensors_from_module", "load_into_module", "FORMAT_VERSION"]

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


def _as_f32_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype != np.float32:
        if not np.issubdtype(arr.dtype, np.floating):
            raise ParameterError(f"checkpoint tensors must be float, got {arr.dtype}")
        arr = arr.astype(np.float32)
    return arr


def encode_checkpoint(tensors: dict, architecture: dict | None = None,
                      sections: dict | None = None) -> bytes:
    arrays = {name: _as_f32_array(v) for name, v in tensors.items()}
    directory = [{"name": n, "shape": list(a.shape), "dtype": "float32"}
                 for n, a in arrays.items()]
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": architecture,
        "tensors": directory,
        "sections": sections or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_LEN.pack(len(blob)), blob]
    parts.extend(arrays[entry["name"]].astype("<f4").tobytes() for entry in directory)
    return b"".join(parts)


def decode_checkpoint(raw: bytes, source: str = "<bytes>"):
    """Returns (tensors: dict[str, torch.Tensor], architecture, sections)."""
    if len(raw) < _LEN.size:
        raise CorruptionError([source])
    (hlen,) = _LEN.unpack_from(raw)
    try:
        header = json.loads(raw[_LEN.size:_LEN.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError([source]) from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ParameterError(f"unsupported checkpoint format: {header.get('format_version')}")
    offset = _LEN.size + hlen
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 4
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CorruptionError([source])
        arr = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(arr)
        offset += nbytes
    return tensors, header.get("architecture"), header.get("sections", {})


def save_checkpoint(path, tensors: dict, architecture: dict | None = None,
                    sections: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors, architecture, sections))
    return path


def load_checkpoint(path):
    """Returns (tensors: dict[str, torch.Tensor], architecture, sections)."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), source=str(path))


def tensors_from_module(module: torch.nn.Module, prefix: str = "") -> dict:
    return {prefix + name: value for name, value in module.state_dict().items()}


def load_into_module(module: torch.nn.Module, tensors: dict, prefix: str = ""):
    state = {name[len(prefix):]: value for name, value in tensors.items()
             if name.startswith(prefix)}
    module.load_state_dict(state)
    return module
