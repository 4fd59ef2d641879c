"""Segment-paste-then-effects subject insertion.

The subject is cut out of its plain-background render, composited at a
placement, and a conditional denoiser then adds contextual effects
(shadows, reflections) around the untouched subject pixels.  The same
denoiser runs in the opposite direction to remove subjects, which also
powers the bootstrapped-adaptation loop.
"""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .diffusion import (ArchSpec, UNet, build_schedule, denoising_loss_batch,
                        encode_checkpoint, decode_checkpoint, sample)
from .errors import (DatasetError, ParameterError, PlacementError,
                     SegmentationError, ShapeError, TrainingDivergenceError)
from .images import to_model, from_model, validate_image
from .seeding import torch_generator

__all__ = ["SubjectCutout", "Placement", "InsertionModel", "InsertTrainConfig",
           "segment_subject", "paste", "insert_effects", "remove_subject",
           "train_insertion"]


@dataclass
class SubjectCutout:
    rgba: np.ndarray                       # (h, w, 4) in [0, 1]
    bbox: tuple                            # (x0, y0, x1, y1) in source coords, exclusive
    provenance: str = "generated"

    def __post_init__(self):
        if self.rgba.ndim != 3 or self.rgba.shape[2] != 4:
            raise ShapeError("cutout must be an RGBA array")
        alpha = self.rgba[..., 3]
        if alpha.min() < 0.0 or alpha.max() > 1.0:
            raise ShapeError("cutout alpha must lie in [0, 1]")
        if not (alpha > 0.5).any():
            raise SegmentationError("cutout has no pixel with alpha > 0.5")


@dataclass(frozen=True)
class Placement:
    x: float
    y: float
    scale: float = 1.0
    rotation: float = 0.0                  # degrees, counterclockwise

    def __post_init__(self):
        if self.scale <= 0:
            raise ParameterError(f"placement scale must be > 0, got {self.scale}")

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "scale": self.scale, "rotation": self.rotation}

    @classmethod
    def from_json(cls, data: dict) -> "Placement":
        return cls(x=float(data["x"]), y=float(data["y"]),
                   scale=float(data.get("scale", 1.0)),
                   rotation=float(data.get("rotation", 0.0)))


def segment_subject(image: np.ndarray, bg_tolerance: float = 0.10) -> SubjectCutout:
    """Extract the subject from a plain-background render.

    RGBA input passes its alpha through.  For RGB, the background color
    is the border median; pixels whose color lies near the ray
    {s * background : 0 <= s <= 1} count as background or cast shadow,
    and the largest connected component of the rest is the subject.
    """
    validate_image(image, "subject image")
    if image.shape[2] == 4:
        alpha = image[..., 3]
        if not (alpha > 0.5).any():
            raise SegmentationError("RGBA input has empty foreground")
        fg = alpha > 0.5
    else:
        border = np.concatenate([image[0], image[-1], image[:, 0], image[:, -1]])
        bg = np.median(border, axis=0)
        bg_norm2 = float(bg @ bg)
        rgb = image[..., :3]
        if bg_norm2 < 1e-8:
            dist = np.linalg.norm(rgb, axis=-1)
        else:
            # distance to the darkened-background ray; shadows lie on it
            s = np.clip((rgb @ bg) / bg_norm2, 0.0, 1.0)
            dist = np.linalg.norm(rgb - s[..., None] * bg, axis=-1)
        fg = dist > bg_tolerance
        if not fg.any():
            raise SegmentationError("no pixels differ from the plain background")
        labels, count = ndimage.label(fg, structure=np.ones((3, 3)))
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, count + 1))
        fg = labels == (int(np.argmax(sizes)) + 1)
        alpha = fg.astype(np.float32)
    ys, xs = np.nonzero(fg)
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    rgba = np.dstack([image[..., :3], alpha.astype(np.float32)])[y0:y1, x0:x1]
    return SubjectCutout(rgba=np.ascontiguousarray(rgba), bbox=(x0, y0, x1, y1),
                         provenance="generated")


def _warp_rgba(rgba: np.ndarray, p: Placement, out_h: int, out_w: int) -> np.ndarray:
    """Inverse-mapped bilinear warp onto the target canvas, zero padded."""
    h, w = rgba.shape[:2]
    ccx, ccy = (w - 1) / 2.0, (h - 1) / 2.0
    theta = math.radians(p.rotation)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    dx, dy = xs - p.x, ys - p.y
    # forward map is scale -> rotate ccw -> translate; invert it
    sx = (cos_t * dx + sin_t * dy) / p.scale + ccx
    sy = (-sin_t * dx + cos_t * dy) / p.scale + ccy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    out = np.zeros((out_h, out_w, 4), dtype=np.float64)
    for oy, ox, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        yy, xx = y0 + oy, x0 + ox
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.zeros((out_h, out_w, 4), dtype=np.float64)
        vals[valid] = rgba[yy[valid], xx[valid]]
        out += (wgt * valid)[..., None] * vals
    return out.astype(np.float32)


def paste(cutout: SubjectCutout, target: np.ndarray, p: Placement):
    """Alpha-over composite after scale/rotate; returns (composite, mask).

    Pixels with zero resampled alpha are bit-identical to the target;
    fully opaque pixels are bit-identical to the cutout.
    """
    validate_image(target, "target image")
    if target.shape[2] != 3:
        raise ShapeError("paste target must be RGB")
    h, w = target.shape[:2]
    ch, cw = cutout.rgba.shape[:2]
    half_diag = 0.5 * p.scale * math.hypot(ch, cw)
    if (p.x + half_diag < 0 or p.x - half_diag > w - 1
            or p.y + half_diag < 0 or p.y - half_diag > h - 1):
        raise PlacementError(
            f"cutout placed at ({p.x}, {p.y}) scale {p.scale} misses the {w}x{h} canvas")
    warped = _warp_rgba(cutout.rgba, p, h, w)
    alpha = warped[..., 3:4]
    subject = warped[..., :3]
    blend = alpha * subject + (1.0 - alpha) * target
    composite = np.where(alpha == 0.0, target, np.where(alpha == 1.0, subject, blend))
    return composite.astype(np.float32), warped[..., 3].copy()


def default_insertion_arch(image_size: int = 64, base_width: int = 32) -> ArchSpec:
    return ArchSpec(in_channels=7, out_channels=3, image_size=image_size,
                    base_width=base_width, channel_mults=(1, 2), cross_attention=False,
                    num_flags=2, version="insertion-v1")


class CondAnchoredDenoiser(torch.nn.Module):
    """Noise predictor anchored to the conditioning image.

    The UNet predicts an edit field in clean-image space; the noise
    prediction is the analytic value implied by "the clean output is
    the conditioning image plus that edit".  The edit starts at zero,
    so an untrained model reconstructs its conditioning exactly, and
    training only has to learn the edit (shadow/reflection synthesis,
    or their removal plus subject inpainting).  The training objective
    remains the plain noise-prediction MSE; under this
    parameterization it weights the edit regression by
    alpha_bar/(1-alpha_bar), concentrating accuracy at the low-noise
    steps that dominate the sampled output.
    """

    def __init__(self, unet: UNet, schedule):
        super().__init__()
        self.unet = unet
        self.register_buffer(
            "alpha_bars",
            torch.as_tensor(schedule.alpha_bars, dtype=torch.float32),
            persistent=False)

    def forward(self, x_in, t, ctx=None, flag=None, adapter=None):
        edit = self.unet(x_in, t, ctx, flag=flag, adapter=adapter)
        x_t, cond = x_in[:, :3], x_in[:, 3:6]
        ab = self.alpha_bars.to(x_in.dtype)[t].reshape(-1, 1, 1, 1)
        return (x_t - torch.sqrt(ab) * (cond + edit)) / torch.sqrt(1.0 - ab)


class InsertionModel:
    """Conditional denoiser for adding or removing subject effects.

    Conditioning is the input image plus its subject mask concatenated
    as extra channels; the direction (insert/remove) selects a learned
    embedding added to the timestep embedding.
    """

    INSERT = 0
    REMOVE = 1
    DIRECTIONS = {"insert": INSERT, "remove": REMOVE}

    def __init__(self, arch: ArchSpec | None = None, seed: int = 0, sample_steps: int = 12):
        self.arch = arch or default_insertion_arch()
        if self.arch.num_flags != 2:
            raise ParameterError("insertion model needs exactly two direction flags")
        self.schedule = build_schedule()
        self.unet = CondAnchoredDenoiser(UNet(self.arch, seed=seed), self.schedule)
        self.sample_steps = sample_steps
        self.trained = False
        self.provenance = {"rounds": [], "training": []}
        self.version = self.arch.version

    def clone(self) -> "InsertionModel":
        return copy.deepcopy(self)

    def _check_aligned(self, image: np.ndarray, mask: np.ndarray):
        validate_image(image)
        if mask.shape != image.shape[:2]:
            raise ShapeError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")

    def predict(self, image: np.ndarray, mask: np.ndarray, direction: str, seed: int) -> np.ndarray:
        """Run the denoiser conditioned on (image, mask, direction)."""
        if direction not in self.DIRECTIONS:
            raise ParameterError(f"direction must be one of {sorted(self.DIRECTIONS)}")
        self._check_aligned(image, mask)
        cond = torch.cat([to_model(image[..., :3]),
                          torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))[None]])
        with torch.no_grad():
            out = sample(self.unet, None, self.schedule, steps=self.sample_steps,
                         seed=seed, shape=(3,) + image.shape[:2], cond=cond,
                         flag=self.DIRECTIONS[direction])
        return from_model(out)

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        sections = {
            "kind": "insertion",
            "trained": self.trained,
            "provenance": self.provenance,
            "sample_steps": self.sample_steps,
            "schedule": {"num_steps": self.schedule.num_steps,
                         "beta_start": float(self.schedule.betas[0]),
                         "beta_end": float(self.schedule.betas[-1])},
        }
        return encode_checkpoint(dict(self.unet.state_dict()), self.arch.to_dict(), sections)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InsertionModel":
        tensors, arch_dict, sections = decode_checkpoint(data)
        model = cls(arch=ArchSpec.from_dict(arch_dict),
                    sample_steps=sections.get("sample_steps", 12))
        model.unet.load_state_dict(tensors)
        model.schedule = build_schedule(**sections["schedule"])
        model.trained = sections.get("trained", False)
        model.provenance = sections.get("provenance", {"rounds": [], "training": []})
        return model


def insert_effects(m: InsertionModel, composite: np.ndarray, mask: np.ndarray,
                   seed: int = 0) -> np.ndarray:
    """Add contextual effects around the subject.

    Subject pixels (mask > 0.5) are re-pasted from the composite and so
    are never altered.  An untrained model warns and returns the
    composite unchanged.
    """
    m._check_aligned(composite, mask)
    if mask.max() <= 0.0:
        return composite.copy()
    if not m.trained:
        warnings.warn("insertion model is untrained; returning the composite unchanged",
                      RuntimeWarning, stacklevel=2)
        return composite.copy()
    predicted = m.predict(composite, mask, "insert", seed)
    return np.where(mask[..., None] > 0.5, composite, predicted).astype(np.float32)


def remove_subject(m: InsertionModel, image: np.ndarray, mask: np.ndarray,
                   seed: int = 0) -> np.ndarray:
    """Predict the clean plate with the subject and its effects removed."""
    m._check_aligned(image, mask)
    if mask.max() <= 0.0:
        return image.copy()
    if not m.trained:
        warnings.warn("insertion model is untrained; returning the image unchanged",
                      RuntimeWarning, stacklevel=2)
        return image.copy()
    return m.predict(image, mask, "remove", seed)


@dataclass
class InsertTrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    order: str = "shuffled"            # shuffled | sequential
    dataset_id: str = ""
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.order not in ("shuffled", "sequential"):
            raise ParameterError(f"unknown sample order {self.order!r}")


def _triplet_fields(item):
    if hasattr(item, "clean"):
        return item.clean, item.no_effects, item.with_effects, item.mask
    return item  # assume a 4-tuple


def train_insertion(m: InsertionModel, dataset, cfg: InsertTrainConfig,
                    audit_log: list | None = None,
                    item_ids: list | None = None) -> InsertionModel:
    """Optimize the denoising loss in both directions over scene triplets.

    insert: composite-without-effects -> composite-with-effects;
    remove: composite-with-effects -> clean plate.  Each step's batch
    indices, directions and noise draws derive from (seed, step), so
    runs are reproducible and resumable.  When audit_log is given, the
    per-step sampled ids are appended to it.
    """
    items = [_triplet_fields(item) for item in dataset]
    if not items:
        raise DatasetError("training dataset is empty")
    shape = items[0][0].shape
    for i, (clean, no_eff, with_eff, mask) in enumerate(items):
        if not (clean.shape == no_eff.shape == with_eff.shape == shape):
            raise DatasetError(f"triplet {i} images are misaligned")
        if mask.shape != shape[:2]:
            raise DatasetError(f"triplet {i} mask is misaligned")
    ids = item_ids if item_ids is not None else list(range(len(items)))
    m.provenance["training"].append(
        {"steps": cfg.steps, "dataset_id": cfg.dataset_id, "size": len(items),
         "seed": cfg.seed})
    if cfg.steps == 0:
        return m

    cleans = torch.stack([to_model(c) for c, _, _, _ in items])
    no_effs = torch.stack([to_model(n) for _, n, _, _ in items])
    with_effs = torch.stack([to_model(w) for _, _, w, _ in items])
    masks = torch.stack([torch.from_numpy(np.ascontiguousarray(mk, dtype=np.float32))[None]
                         for _, _, _, mk in items])
    opt = torch.optim.Adam((p for p in m.unet.parameters() if p.requires_grad), lr=cfg.lr)
    n = len(items)
    for step in range(cfg.steps):
        gen = torch_generator(cfg.seed, "insertion", step)
        if cfg.order == "sequential":
            start = step * cfg.batch_size
            idx = torch.tensor([(start + j) % n for j in range(cfg.batch_size)])
        else:
            idx = torch.randint(n, (cfg.batch_size,), generator=gen)
        direction = torch.randint(2, (cfg.batch_size,), generator=gen)
        ins = direction == InsertionModel.INSERT
        cond_img = torch.where(ins[:, None, None, None], no_effs[idx], with_effs[idx])
        target = torch.where(ins[:, None, None, None], with_effs[idx], cleans[idx])
        cond = torch.cat([cond_img, masks[idx]], dim=1)
        loss = denoising_loss_batch(m.unet, target, None, m.schedule, gen,
                                    flag=direction, cond=cond)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingDivergenceError(step, value)
        opt.zero_grad()
        loss.backward()
        # low-noise draws carry ~alpha_bar/(1-alpha_bar) scaled gradients
        torch.nn.utils.clip_grad_norm_(
            [p for p in m.unet.parameters() if p.requires_grad], cfg.grad_clip)
        opt.step()
        if audit_log is not None:
            audit_log.append({"step": step, "ids": [ids[i] for i in idx.tolist()],
                              "directions": ["insert" if bool(b) else "remove"
                                             for b in ins.tolist()]})
    m.trained = True
    return m
