"""Image representation and conversions.

Images are numpy float32 arrays of shape (H, W, C) with C in {3, 4} and
values in [0, 1] (storage space).  Models consume torch tensors of shape
(C, H, W) in [-1, 1] (model space).  PNG is the only on-disk format.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, ShapeError

__all__ = [
    "validate_image",
    "to_model",
    "from_model",
    "load_png",
    "save_png",
    "png_bytes",
    "decode_png",
    "content_hash",
    "psnr",
]


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] not in (3, 4):
        raise ShapeError(f"{name} must be an (H, W, 3|4) array, got "
                         f"{getattr(img, 'shape', type(img))}")
    if not np.isfinite(img).all():
        raise ShapeError(f"{name} contains non-finite values")
    return img


def to_model(img: np.ndarray) -> torch.Tensor:
    """Storage [0,1] HWC -> model-space [-1,1] CHW float32 tensor."""
    validate_image(img)
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
    return t.permute(2, 0, 1) * 2.0 - 1.0


def from_model(t: torch.Tensor) -> np.ndarray:
    """Model-space [-1,1] CHW tensor -> storage [0,1] HWC array (clipped)."""
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ShapeError(f"expected a single image, got batch of {t.shape[0]}")
        t = t[0]
    arr = t.detach().to(torch.float32).permute(1, 2, 0).numpy()
    return np.clip((arr + 1.0) / 2.0, 0.0, 1.0)


def load_png(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return _pil_to_array(im)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


def decode_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return _pil_to_array(im)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode image bytes: {exc}") from exc


def _pil_to_array(im: Image.Image) -> np.ndarray:
    if im.mode not in ("RGB", "RGBA"):
        im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
    return np.asarray(im, dtype=np.float32) / 255.0


def save_png(path, img: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(png_bytes(img))
    return path


def png_bytes(img: np.ndarray) -> bytes:
    validate_image(img)
    arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    mode = "RGB" if arr.shape[2] == 3 else "RGBA"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB between two [0,1] images."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)
