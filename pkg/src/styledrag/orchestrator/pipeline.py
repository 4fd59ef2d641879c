"""End-to-end pipeline, model hub, and run-directory persistence."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ..diffusion import ModelBundle
from ..errors import CorruptionError, NotFoundError
from ..images import content_hash, load_png, png_bytes, save_png
from ..insertion import (InsertionModel, Placement, insert_effects, paste,
                         segment_subject)
from ..personalization import (PersonalizeConfig, PersonalizedModel, attach_lora,
                               checkpoint_at, personalize)
from ..seeding import derive_seed
from ..style_injection import StyleAdapter, StyleEncoder, embed_style, inject_generate
from ..embedders import ConvEmbedder

__all__ = ["ModelHub", "PipelineConfig", "magic_insert", "save_run", "load_run",
           "RunState"]

log = logging.getLogger(__name__)


class ModelHub:
    """Named checkpoints on disk plus an in-memory cache.

    Well-known ids: base, style_encoder, adapter, insertion.  The hub
    also owns the personalization cache, keyed by subject content and
    training config so the studio can re-place or re-style a subject
    without retraining.
    """

    def __init__(self, models_dir):
        self.models_dir = Path(models_dir)
        self.cache_dir = self.models_dir / "personalized"
        self._loaded = {}

    def path_for(self, model_id: str) -> Path:
        return self.models_dir / f"{model_id}.ckpt"

    def has(self, model_id: str) -> bool:
        return self.path_for(model_id).exists()

    def _load(self, model_id: str, loader):
        if model_id not in self._loaded:
            path = self.path_for(model_id)
            if not path.exists():
                raise NotFoundError(f"model {model_id!r} not found under {self.models_dir}")
            self._loaded[model_id] = loader(path.read_bytes())
        return self._loaded[model_id]

    def base(self, model_id: str = "base") -> ModelBundle:
        return self._load(model_id, ModelBundle.from_bytes)

    def style_encoder(self, model_id: str = "style_encoder") -> StyleEncoder:
        return self._load(model_id,
                          lambda data: StyleEncoder(ConvEmbedder.from_bytes(data)))

    def adapter(self, model_id: str = "adapter") -> StyleAdapter:
        return self._load(model_id, StyleAdapter.from_bytes)

    def insertion(self, model_id: str = "insertion") -> InsertionModel:
        return self._load(model_id, InsertionModel.from_bytes)

    def put(self, model_id: str, data: bytes):
        path = self.path_for(model_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self._loaded.pop(model_id, None)
        return path

    def list_models(self) -> list:
        out = []
        for path in sorted(self.models_dir.glob("*.ckpt")):
            data = path.read_bytes()
            out.append({"id": path.stem, "file": path.name,
                        "sha256": content_hash(data), "bytes": len(data)})
        return out

    # -- personalization cache ------------------------------------------------

    def personalization_key(self, subject: np.ndarray, cfg: PersonalizeConfig,
                            base_id: str = "base") -> str:
        blob = png_bytes(subject) + json.dumps(asdict(cfg), sort_keys=True).encode() \
            + base_id.encode()
        return content_hash(blob)[:32]

    def cached_personalization(self, key: str) -> bytes | None:
        path = self.cache_dir / f"{key}.ckpt"
        return path.read_bytes() if path.exists() else None

    def store_personalization(self, key: str, snapshot: bytes) -> Path:
        path = self.cache_dir / f"{key}.ckpt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(snapshot)
        return path


@dataclass
class PipelineConfig:
    """Resolved configuration of one end-to-end run."""

    class_noun: str
    placement: dict = field(default_factory=lambda: {"x": 32, "y": 32, "scale": 1.0})
    personalize: dict = field(default_factory=dict)      # PersonalizeConfig overrides
    personalize_checkpoint: int | None = None            # fidelity/editability pick
    adapter_scale: float = 1.0
    prompt_suffix: str = ""
    sample_steps: int = 50
    guidance_scale: float = 2.0
    seed: int = 0
    models: dict = field(default_factory=lambda: {
        "base": "base", "style_encoder": "style_encoder",
        "adapter": "adapter", "insertion": "insertion"})

    def personalize_config(self) -> PersonalizeConfig:
        overrides = dict(self.personalize)
        overrides.setdefault("seed", derive_seed(self.seed, "personalize"))
        overrides["class_noun"] = self.class_noun
        return PersonalizeConfig(**overrides)

    def placement_obj(self) -> Placement:
        return Placement.from_json(self.placement)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "PipelineConfig":
        return cls(**data)


@dataclass
class RunState:
    run_dir: Path
    config: dict
    artifacts: dict      # relative path -> sha256


def _persist(run_dir: Path, rel: str, image: np.ndarray, artifacts: dict):
    save_png(run_dir / rel, image)
    artifacts[rel] = content_hash((run_dir / rel).read_bytes())


def personalize_cached(hub: ModelHub, subject: np.ndarray, cfg: PersonalizeConfig,
                       base_id: str = "base") -> tuple:
    """Load-or-train the personalized model for (subject, config)."""
    key = hub.personalization_key(subject, cfg, base_id)
    cached = hub.cached_personalization(key)
    if cached is not None:
        return PersonalizedModel.from_snapshot(cached), key, True
    bundle = hub.base(base_id)
    pm = attach_lora(bundle.unet, bundle.text_encoder, bundle.schedule)
    personalize(pm, subject, cfg)
    hub.store_personalization(key, pm.snapshot())
    return pm, key, False


def magic_insert(subject_image: np.ndarray, target_image: np.ndarray,
                 placement: Placement, cfg: PipelineConfig, hub: ModelHub,
                 run_dir, progress=None, cancel_check=None) -> tuple:
    """Full style-aware drag-and-drop run; returns (final image, RunState).

    Stage chain: personalize (cached) -> style embedding -> injected
    generation -> segmentation -> paste -> contextual effects.  Every
    intermediate artifact and the resolved config are persisted under
    run_dir; the output is deterministic given the config's seeds.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}
    stage_names = ["personalize", "style_embed", "stylized_generation",
                   "segmentation", "paste", "effects"]

    def tick(i):
        if cancel_check is not None:
            cancel_check()
        if progress is not None:
            progress(i / len(stage_names), stage_names[min(i, len(stage_names) - 1)])

    _persist(run_dir, "inputs/subject.png", subject_image, artifacts)
    _persist(run_dir, "inputs/target.png", target_image, artifacts)

    tick(0)
    pcfg = cfg.personalize_config()
    pm, key, was_cached = personalize_cached(hub, subject_image, pcfg,
                                             cfg.models.get("base", "base"))
    if cfg.personalize_checkpoint is not None:
        pm = checkpoint_at(pm, cfg.personalize_checkpoint)
    stage_dir = "stages/01_personalize"
    (run_dir / stage_dir).mkdir(parents=True, exist_ok=True)
    (run_dir / stage_dir / "cache_key.json").write_text(json.dumps(
        {"key": key, "cached": was_cached,
         "checkpoint": cfg.personalize_checkpoint}, indent=2))

    tick(1)
    encoder = hub.style_encoder(cfg.models.get("style_encoder", "style_encoder"))
    e_t = embed_style(encoder, target_image, source_id="target")
    (run_dir / "stages/02_style").mkdir(parents=True, exist_ok=True)
    (run_dir / "stages/02_style/embedding.json").write_text(json.dumps(
        {"vector": [float(v) for v in e_t.vector],
         "encoder_version": e_t.encoder_version}, indent=2))

    tick(2)
    adapter = hub.adapter(cfg.models.get("adapter", "adapter"))
    stylized = inject_generate(pm, e_t, adapter, prompt_suffix=cfg.prompt_suffix,
                               scale=cfg.adapter_scale,
                               seed=derive_seed(cfg.seed, "generate"),
                               steps=cfg.sample_steps,
                               guidance_scale=cfg.guidance_scale,
                               class_noun=cfg.class_noun)
    _persist(run_dir, "stages/03_stylized/stylized.png", stylized, artifacts)

    tick(3)
    cutout = segment_subject(stylized)
    _persist(run_dir, "stages/04_segment/cutout.png", cutout.rgba, artifacts)

    tick(4)
    composite, mask = paste(cutout, target_image, placement)
    _persist(run_dir, "stages/05_paste/composite.png", composite, artifacts)
    _persist(run_dir, "stages/05_paste/mask.png",
             np.repeat(mask[..., None], 3, axis=2), artifacts)

    tick(5)
    insertion_model = hub.insertion(cfg.models.get("insertion", "insertion"))
    final = insert_effects(insertion_model, composite, mask,
                           seed=derive_seed(cfg.seed, "insert"))
    _persist(run_dir, "stages/06_effects/final.png", final, artifacts)
    tick(6)

    resolved = cfg.to_json()
    resolved["placement"] = placement.to_json()
    state = save_run(run_dir, resolved, artifacts)
    return final, state


def save_run(run_dir, config: dict, artifacts: dict) -> RunState:
    """Write the resolved config and the hash manifest for a run."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
    manifest = {"v": 1, "artifacts": artifacts}
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return RunState(run_dir=run_dir, config=config, artifacts=dict(artifacts))


def load_run(run_dir) -> RunState:
    """Load a run directory, verifying every artifact hash."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise NotFoundError(f"run manifest missing under {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    config = json.loads((run_dir / "config.json").read_text())
    bad = []
    for rel, expected in manifest["artifacts"].items():
        path = run_dir / rel
        if not path.exists() or content_hash(path.read_bytes()) != expected:
            bad.append(rel)
    if bad:
        raise CorruptionError(bad)
    return RunState(run_dir=run_dir, config=config, artifacts=manifest["artifacts"])
