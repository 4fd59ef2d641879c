"""Procedural two-domain scenes with analytic shadows and reflections.

Scenes provide exact ground-truth triplets (clean plate, composite
without effects, composite with effects) for training the insertion
model, for bootstrap fixtures, and as oracles in tests.  Also hosts the
subject/background dataset manifest format and its loader.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ManifestValidationError, NotFoundError, ParameterError
from .images import save_png
from .seeding import derive_seed

__all__ = [
    "StyleDomainSpec", "SceneTriplet", "PHOTO", "CARTOON", "BUILTIN_DOMAINS",
    "NAMED_COLORS", "SHAPES", "gen_scene", "gen_subject_image", "gen_dataset",
    "gen_subject_background_dataset", "load_manifest", "Manifest", "scene_caption",
]

NAMED_COLORS = {
    "red": (0.85, 0.20, 0.20),
    "green": (0.20, 0.70, 0.30),
    "blue": (0.25, 0.35, 0.85),
    "yellow": (0.90, 0.85, 0.20),
    "magenta": (0.80, 0.25, 0.75),
    "cyan": (0.25, 0.80, 0.80),
    "orange": (0.90, 0.55, 0.15),
    "purple": (0.55, 0.30, 0.75),
    "teal": (0.15, 0.55, 0.55),
    "pink": (0.95, 0.65, 0.75),
    "brown": (0.55, 0.40, 0.25),
}

SHAPES = ("disk", "square", "triangle", "star", "ring")


@dataclass(frozen=True)
class StyleDomainSpec:
    """Rendering recipe for one style domain."""

    name: str
    palette: tuple                      # background colors, list of RGB
    texture: str = "flat"               # flat | stripes | noise
    shadow_offset: tuple = (4, 3)       # (dx, dy) pixels
    shadow_opacity: float = 0.4
    shadow_blur: float = 1.0
    reflection: bool = False
    reflection_opacity: float = 0.3
    saturation: float = 1.0             # sprite color saturation multiplier

    def __post_init__(self):
        if not self.palette:
            raise ParameterError("palette must be nonempty")
        if not 0.0 <= self.shadow_opacity <= 1.0:
            raise ParameterError("shadow opacity must lie in [0, 1]")
        if self.texture not in ("flat", "stripes", "noise"):
            raise ParameterError(f"unknown texture mode {self.texture!r}")


PHOTO = StyleDomainSpec(
    name="photo",
    palette=((0.66, 0.70, 0.74), (0.72, 0.74, 0.70), (0.74, 0.70, 0.65),
             (0.60, 0.66, 0.72), (0.70, 0.66, 0.62)),
    texture="flat",
    shadow_offset=(4, 3),
    shadow_opacity=0.35,
    shadow_blur=1.5,
    reflection=False,
    saturation=0.45,
)

CARTOON = StyleDomainSpec(
    name="cartoon",
    palette=((0.30, 0.62, 0.95), (0.95, 0.75, 0.25), (0.55, 0.90, 0.50),
             (0.95, 0.50, 0.60), (0.80, 0.45, 0.90)),
    texture="flat",
    shadow_offset=(5, 3),
    shadow_opacity=0.60,
    shadow_blur=0.0,
    reflection=False,
    saturation=1.0,
)

BUILTIN_DOMAINS = {"photo": PHOTO, "cartoon": CARTOON}


@dataclass
class SceneTriplet:
    clean: np.ndarray
    no_effects: np.ndarray
    with_effects: np.ndarray
    mask: np.ndarray
    domain: str
    seed: int
    shape_name: str = ""
    color_name: str = ""

    def caption(self) -> str:
        return scene_caption(self.shape_name, self.color_name, self.domain)


def scene_caption(shape_name: str, color_name: str, domain: str) -> str:
    return f"a {color_name} {shape_name} in {domain} style"


def _apply_saturation(rgb, saturation):
    arr = np.asarray(rgb, dtype=np.float64)
    gray = arr.mean()
    return tuple(np.clip(gray + (arr - gray) * saturation, 0.0, 1.0))


def _sprite_mask(shape_name: str, radius: int, size: int, cx: int, cy: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dx, dy = xx - cx, yy - cy
    if shape_name == "disk":
        return (dx * dx + dy * dy <= radius * radius)
    if shape_name == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if shape_name == "triangle":
        return (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (dy + radius) / 2.0)
    if shape_name == "ring":
        rr = dx * dx + dy * dy
        return (rr <= radius * radius) & (rr >= (0.55 * radius) ** 2)
    if shape_name == "star":
        ang = np.arctan2(dy, dx)
        rad = np.sqrt(dx * dx + dy * dy)
        lobes = 0.62 + 0.38 * np.cos(5.0 * ang)
        return rad <= radius * lobes
    raise ParameterError(f"unknown shape {shape_name!r}")


def _background(spec: StyleDomainSpec, rng: np.random.Generator, size: int):
    colors = [spec.palette[i] for i in rng.choice(len(spec.palette), 2, replace=False)]
    sky, ground = np.asarray(colors[0]), np.asarray(colors[1]) * 0.85
    ground_y = int(size * (0.55 + 0.15 * rng.random()))
    img = np.empty((size, size, 3), dtype=np.float32)
    img[:ground_y] = sky
    img[ground_y:] = ground
    if spec.texture == "stripes":
        period = int(rng.integers(6, 12))
        cols = (np.arange(size) // period) % 2 == 0
        img[ground_y:, cols] *= 0.9
    elif spec.texture == "noise":
        field_ = rng.normal(0.0, 1.0, (size, size))
        field_ = ndimage.gaussian_filter(field_, sigma=6.0)
        field_ = field_ / (np.abs(field_).max() + 1e-9) * 0.06
        img = np.clip(img + field_[..., None], 0.0, 1.0).astype(np.float32)
    return img, ground_y


def _render_sprite(spec: StyleDomainSpec, rng: np.random.Generator, size: int,
                   ground_y: int, shape_name=None, color_name=None):
    shape_name = shape_name or SHAPES[rng.integers(len(SHAPES))]
    color_name = color_name or list(NAMED_COLORS)[rng.integers(len(NAMED_COLORS))]
    color = _apply_saturation(NAMED_COLORS[color_name], spec.saturation)
    radius = int(rng.integers(size // 8, size // 5))
    cx = int(rng.integers(radius + 2, size - radius - 8))
    cy = int(np.clip(ground_y - radius // 3, radius + 2, size - radius - 6))
    mask = _sprite_mask(shape_name, radius, size, cx, cy)
    return mask.astype(np.float32), np.asarray(color, dtype=np.float32), shape_name, color_name


def gen_scene(spec: StyleDomainSpec, seed: int, size: int = 64,
              shape_name: str | None = None, color_name: str | None = None) -> SceneTriplet:
    """Deterministic scene triplet for one seed.

    Shadow: subject mask translated by the domain's offset, gaussian
    blurred, multiplied into non-subject pixels at the domain's opacity.
    Reflection (when enabled): vertically flipped sprite below its base
    at reduced opacity.  Both effects leave subject pixels untouched,
    and the no-effects composite equals the clean plate outside the
    subject mask.
    """
    rng = np.random.default_rng(seed)
    clean, ground_y = _background(spec, rng, size)
    mask, color, shape_name, color_name = _render_sprite(
        spec, rng, size, ground_y, shape_name, color_name)

    no_effects = clean.copy()
    no_effects[mask > 0.5] = color

    dx, dy = spec.shadow_offset
    shadow = np.roll(np.roll(mask, dy, axis=0), dx, axis=1)
    if dy > 0:
        shadow[:dy] = 0.0
    elif dy < 0:
        shadow[dy:] = 0.0
    if dx > 0:
        shadow[:, :dx] = 0.0
    elif dx < 0:
        shadow[:, dx:] = 0.0
    if spec.shadow_blur > 0:
        shadow = ndimage.gaussian_filter(shadow, sigma=spec.shadow_blur)
    shadow = np.clip(shadow, 0.0, 1.0)
    shadow[mask > 0.5] = 0.0

    with_effects = no_effects * (1.0 - spec.shadow_opacity * shadow[..., None])
    if spec.reflection:
        ys, xs = np.nonzero(mask > 0.5)
        bottom = ys.max()
        height = bottom - ys.min() + 1
        flipped = mask[::-1]
        src_rows = np.clip(np.arange(bottom + 1, min(size, bottom + 1 + height)), 0, size - 1)
        refl = np.zeros_like(mask)
        refl[src_rows] = flipped[size - 1 - bottom:size - 1 - bottom + len(src_rows)]
        refl[mask > 0.5] = 0.0
        blend = spec.reflection_opacity * refl[..., None]
        with_effects = with_effects * (1.0 - blend) + color * blend
    with_effects = np.clip(with_effects, 0.0, 1.0).astype(np.float32)

    return SceneTriplet(clean=clean, no_effects=no_effects, with_effects=with_effects,
                        mask=mask, domain=spec.name, seed=seed,
                        shape_name=shape_name, color_name=color_name)


def gen_subject_image(seed: int, size: int = 64, shape_name=None, color_name=None,
                      saturation: float = 1.0):
    """Subject on a plain background (no shadow), plus its class noun."""
    rng = np.random.default_rng(seed)
    bg_val = 0.88 + 0.08 * rng.random()
    img = np.full((size, size, 3), bg_val, dtype=np.float32)
    spec = StyleDomainSpec(name="plain", palette=((bg_val,) * 3,), saturation=saturation)
    mask, color, shape_name, color_name = _render_sprite(
        spec, rng, size, ground_y=int(size * 0.75),
        shape_name=shape_name, color_name=color_name)
    img[mask > 0.5] = color
    return img, mask, shape_name, color_name


# ---------------------------------------------------------------------------
# Dataset manifests

MANIFEST_VERSION = 1


@dataclass
class Manifest:
    version: int
    root: Path
    subjects: list = field(default_factory=list)
    backgrounds: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    triplets: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "subjects": self.subjects,
            "backgrounds": self.backgrounds,
            "pairs": self.pairs,
            "triplets": self.triplets,
        }


def _normalize_manifest(data: dict) -> dict:
    out = {
        "version": data.get("version", MANIFEST_VERSION),
        "subjects": sorted(data.get("subjects", []), key=lambda s: s["id"]),
        "backgrounds": sorted(data.get("backgrounds", []), key=lambda b: b["id"]),
        "pairs": data.get("pairs", []),
        "triplets": sorted(data.get("triplets", []), key=lambda t: t["id"]),
    }
    return out


def gen_dataset(spec: StyleDomainSpec, n: int, seed: int, out_dir,
                size: int = 64) -> Manifest:
    """Write n scene triplets plus a manifest/triplet index under out_dir."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    out_dir = Path(out_dir)
    triplets = []
    for i in range(n):
        scene = gen_scene(spec, derive_seed(seed, "scene", i), size=size)
        entry = {"id": f"{spec.name}-{i:04d}", "domain": spec.name,
                 "seed": scene.seed, "shape": scene.shape_name, "color": scene.color_name,
                 "files": {}}
        for kind, img in (("clean", scene.clean), ("no_effects", scene.no_effects),
                          ("with_effects", scene.with_effects)):
            rel = f"triplets/{entry['id']}_{kind}.png"
            save_png(out_dir / rel, img)
            entry["files"][kind] = rel
        rel = f"triplets/{entry['id']}_mask.png"
        save_png(out_dir / rel, np.repeat(scene.mask[..., None], 3, axis=2))
        entry["files"]["mask"] = rel
        triplets.append(entry)
    manifest = Manifest(version=MANIFEST_VERSION, root=out_dir, triplets=triplets)
    (out_dir / "manifest.json").write_text(
        json.dumps(_normalize_manifest(manifest.to_json()), indent=2, sort_keys=True))
    return manifest


def gen_subject_background_dataset(n_subjects: int, n_backgrounds: int, seed: int,
                                   out_dir, size: int = 64,
                                   domains=(PHOTO, CARTOON)) -> Manifest:
    """Subject/background evaluation set; pairs are the full cross product."""
    if n_subjects < 1 or n_backgrounds < 1:
        raise ParameterError("need at least one subject and one background")
    out_dir = Path(out_dir)
    subjects, backgrounds = [], []
    for i in range(n_subjects):
        img, _, shape_name, color_name = gen_subject_image(derive_seed(seed, "subject", i), size)
        rel = f"subjects/subject-{i:03d}.png"
        save_png(out_dir / rel, img)
        subjects.append({"id": f"subject-{i:03d}", "file": rel,
                         "class_noun": shape_name, "style": "plain",
                         "color": color_name})
    for i in range(n_backgrounds):
        spec = domains[i % len(domains)]
        rng_seed = derive_seed(seed, "background", i)
        bg, _ = _background(spec, np.random.default_rng(rng_seed), size)
        rel = f"backgrounds/background-{i:03d}.png"
        save_png(out_dir / rel, bg)
        backgrounds.append({"id": f"background-{i:03d}", "file": rel, "style": spec.name})
    pairs = [[s["id"], b["id"]] for s in subjects for b in backgrounds]
    manifest = Manifest(version=MANIFEST_VERSION, root=out_dir,
                        subjects=subjects, backgrounds=backgrounds, pairs=pairs)
    (out_dir / "manifest.json").write_text(
        json.dumps(_normalize_manifest(manifest.to_json()), indent=2, sort_keys=True))
    return manifest


def load_manifest(path) -> Manifest:
    """Load and validate a manifest; synthesizes pairs when omitted."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"manifest not found: {path}")
    data = json.loads(path.read_text())
    root = path.parent
    offenders = []
    for section in ("subjects", "backgrounds"):
        for entry in data.get(section, []):
            if not (root / entry["file"]).exists():
                offenders.append(f"{section[:-1]} {entry['id']} missing file {entry['file']}")
    for entry in data.get("triplets", []):
        for kind, rel in entry.get("files", {}).items():
            if not (root / rel).exists():
                offenders.append(f"triplet {entry['id']} missing {kind} file {rel}")
    subject_ids = {s["id"] for s in data.get("subjects", [])}
    background_ids = {b["id"] for b in data.get("backgrounds", [])}
    pairs = data.get("pairs") or []
    for s_id, b_id in pairs:
        if s_id not in subject_ids:
            offenders.append(f"pair references unknown subject {s_id}")
        if b_id not in background_ids:
            offenders.append(f"pair references unknown background {b_id}")
    if offenders:
        raise ManifestValidationError(offenders)
    if not pairs and subject_ids and background_ids:
        pairs = [[s["id"], b["id"]] for s in data["subjects"] for b in data["backgrounds"]]
    normalized = _normalize_manifest({**data, "pairs": pairs})
    return Manifest(version=normalized["version"], root=root,
                    subjects=normalized["subjects"], backgrounds=normalized["backgrounds"],
                    pairs=normalized["pairs"], triplets=normalized["triplets"])
