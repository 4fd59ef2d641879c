"""Desk-scale pretraining for the toy model zoo.

The pipeline needs a pretrained text-conditional denoiser, a style
encoder, an injection adapter, evaluation encoders and a
photo-domain insertion model.  All are trained here from the synthetic
scene generator, deterministically per config, and cached as checkpoint
files keyed by a config hash.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import torch

from .diffusion import (ArchSpec, UNet, TextEncoder, ModelBundle, build_schedule,
                        denoising_loss_batch, VOCAB)
from .embedders import (ContrastiveConfig, ConvEmbedder, TextBagEncoder,
                        train_supervised_contrastive, train_joint_image_text)
from .errors import TrainingDivergenceError
from .evaluation import Backend
from .images import to_model
from .insertion import InsertionModel, InsertTrainConfig, train_insertion, default_insertion_arch
from .seeding import torch_generator, derive_seed
from .style_injection import StyleAdapter, StyleEncoder, AdapterTrainConfig, train_adapter
from .synthdata import PHOTO, CARTOON, gen_scene, gen_subject_image, scene_caption

__all__ = ["BasePretrainConfig", "pretrain_base", "fixture_style_encoder",
           "fixture_adapter", "fixture_eval_backends", "fixture_insertion_model",
           "caption_dataset", "domain_dataset", "cached", "build_model_dir"]

log = logging.getLogger(__name__)


def _config_key(name: str, cfg) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return f"{name}-{hashlib.sha256(blob).hexdigest()[:12]}"


def cached(cache_dir, name: str, cfg, build, load, save):
    """Build-or-load a fixture artifact keyed by its config hash."""
    if cache_dir is None:
        return build()
    path = Path(cache_dir) / f"{_config_key(name, cfg)}.ckpt"
    if path.exists():
        return load(path.read_bytes())
    artifact = build()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save(artifact))
    return artifact


# -- datasets -------------------------------------------------------------------


def caption_dataset(seed: int, n_subjects: int, n_scenes: int, size: int = 64,
                    domains=(PHOTO, CARTOON)):
    """Mixed plain-subject and full-scene images with toy captions."""
    images, captions = [], []
    for i in range(n_subjects):
        img, _, shape_name, color_name = gen_subject_image(
            derive_seed(seed, "subject", i), size)
        images.append(img)
        captions.append(f"a {color_name} {shape_name}")
    for i in range(n_scenes):
        spec = domains[i % len(domains)]
        scene = gen_scene(spec, derive_seed(seed, "scene", spec.name, i), size)
        images.append(scene.with_effects)
        captions.append(scene.caption())
    return images, captions


def domain_dataset(seed: int, n_per_domain: int, size: int = 64,
                   domains=(PHOTO, CARTOON), kind: str = "with_effects"):
    """(image, domain-name) pairs for contrastive and adapter training."""
    pairs = []
    for spec in domains:
        for i in range(n_per_domain):
            scene = gen_scene(spec, derive_seed(seed, "domain", spec.name, i), size)
            pairs.append((getattr(scene, kind), spec.name))
    return pairs


# -- base denoiser ---------------------------------------------------------------


@dataclass
class BasePretrainConfig:
    steps: int = 1500
    batch_size: int = 8
    lr: float = 2e-3
    weight_decay: float = 0.0
    seed: int = 0
    size: int = 64
    base_width: int = 32
    n_subjects: int = 120
    n_scenes: int = 240
    cfg_drop_prob: float = 0.1


def pretrain_base(cfg: BasePretrainConfig = BasePretrainConfig(),
                  cache_dir=None) -> ModelBundle:
    """Train the text-conditional backbone on captioned synthetic images."""

    def build():
        arch = ArchSpec(image_size=cfg.size, base_width=cfg.base_width)
        unet = UNet(arch, seed=cfg.seed)
        text = TextEncoder(seed=cfg.seed)
        schedule = build_schedule()
        images, captions = caption_dataset(cfg.seed, cfg.n_subjects, cfg.n_scenes, cfg.size)
        x0_all = torch.stack([to_model(img) for img in images])
        ids_all = torch.stack([VOCAB.encode(c) for c in captions])
        null_ids = VOCAB.encode("")
        params = list(unet.parameters()) + list(text.parameters())
        opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        for step in range(cfg.steps):
            gen = torch_generator(cfg.seed, "pretrain", step)
            idx = torch.randint(len(images), (cfg.batch_size,), generator=gen)
            drop = torch.rand((cfg.batch_size,), generator=gen) < cfg.cfg_drop_prob
            ids = torch.where(drop[:, None], null_ids[None], ids_all[idx])
            ctx = text(ids)
            loss = denoising_loss_batch(unet, x0_all[idx], ctx, schedule, gen)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(step, float(loss.detach()))
            opt.zero_grad()
            loss.backward()
            opt.step()
            if (step + 1) % 200 == 0:
                log.info("base pretrain step %d loss %.4f", step + 1, float(loss.detach()))
        unet.eval()
        text.eval()
        return ModelBundle(unet=unet, text_encoder=text, schedule=schedule,
                           version="base-toy-v1")

    return cached(cache_dir, "base", cfg, build,
                  ModelBundle.from_bytes, lambda b: b.to_bytes())


# -- style encoder and adapter -----------------------------------------------------


@dataclass
class StyleEncoderConfig:
    steps: int = 250
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0
    n_per_domain: int = 80
    dim: int = 128
    size: int = 64


def fixture_style_encoder(cfg: StyleEncoderConfig = StyleEncoderConfig(),
                          cache_dir=None) -> StyleEncoder:
    """Style-contrastive conv embedder over the two built-in domains."""

    def build():
        pairs = domain_dataset(cfg.seed, cfg.n_per_domain, cfg.size)
        images = [img for img, _ in pairs]
        labels = [dom for _, dom in pairs]
        embedder = train_supervised_contrastive(
            images, labels, out_dim=cfg.dim,
            cfg=ContrastiveConfig(steps=cfg.steps, batch_size=cfg.batch_size,
                                  lr=cfg.lr, seed=cfg.seed),
            version="style-contrastive-v1")
        return StyleEncoder(embedder, normalize=True)

    return cached(cache_dir, "style-encoder", cfg, build,
                  lambda data: StyleEncoder(ConvEmbedder.from_bytes(data), normalize=True),
                  lambda enc: enc.embedder.to_bytes())


@dataclass
class AdapterFixtureConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 2e-3
    seed: int = 0
    n_per_domain: int = 80
    size: int = 64


def fixture_adapter(bundle: ModelBundle, encoder: StyleEncoder,
                    cfg: AdapterFixtureConfig = AdapterFixtureConfig(),
                    cache_dir=None) -> StyleAdapter:
    def build():
        pairs = domain_dataset(cfg.seed, cfg.n_per_domain, cfg.size)
        return train_adapter(encoder, bundle, pairs,
                             AdapterTrainConfig(steps=cfg.steps, batch_size=cfg.batch_size,
                                                lr=cfg.lr, seed=cfg.seed))

    return cached(cache_dir, "adapter", cfg, build,
                  StyleAdapter.from_bytes, lambda a: a.to_bytes())


# -- evaluation backends ------------------------------------------------------------


@dataclass
class EvalBackendsConfig:
    steps: int = 300
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0
    n_subjects: int = 160
    n_scenes: int = 160
    size: int = 64


def fixture_eval_encoders(cfg: EvalBackendsConfig = EvalBackendsConfig(),
                          cache_dir=None) -> dict:
    """Raw evaluation encoders: subject (conv), image+text (joint pair)."""

    def build_subject():
        images, labels = [], []
        for i in range(cfg.n_subjects):
            img, _, shape_name, _ = gen_subject_image(derive_seed(cfg.seed, "subj-enc", i),
                                                      cfg.size)
            images.append(img)
            labels.append(shape_name)
        for i in range(cfg.n_scenes):
            spec = (PHOTO, CARTOON)[i % 2]
            scene = gen_scene(spec, derive_seed(cfg.seed, "subj-enc-scene", i), cfg.size)
            images.append(scene.with_effects)
            labels.append(scene.shape_name)
        return train_supervised_contrastive(
            images, labels, out_dim=64,
            cfg=ContrastiveConfig(steps=cfg.steps, batch_size=cfg.batch_size,
                                  lr=cfg.lr, seed=cfg.seed),
            version="subject-contrastive-v1")

    subject_enc = cached(cache_dir, "subject-encoder", cfg, build_subject,
                         ConvEmbedder.from_bytes, lambda e: e.to_bytes())

    def build_joint():
        images, captions = caption_dataset(cfg.seed + 1, cfg.n_subjects, cfg.n_scenes,
                                           cfg.size)
        img_enc, txt_enc = train_joint_image_text(
            images, captions, out_dim=64,
            cfg=ContrastiveConfig(steps=cfg.steps, batch_size=cfg.batch_size,
                                  lr=cfg.lr, seed=cfg.seed))
        return img_enc, txt_enc

    def save_joint(pair):
        img_enc, txt_enc = pair
        img_b, txt_b = img_enc.to_bytes(), txt_enc.to_bytes()
        return len(img_b).to_bytes(8, "little") + img_b + txt_b

    def load_joint(data):
        n = int.from_bytes(data[:8], "little")
        return (ConvEmbedder.from_bytes(data[8:8 + n]),
                TextBagEncoder.from_bytes(data[8 + n:]))

    img_enc, txt_enc = cached(cache_dir, "joint-encoder", cfg, build_joint,
                              load_joint, save_joint)
    return {"subject": subject_enc, "image": img_enc, "text": txt_enc}


def fixture_eval_backends(style_encoder: StyleEncoder,
                          cfg: EvalBackendsConfig = EvalBackendsConfig(),
                          cache_dir=None) -> dict:
    """Backends keyed by kind: subject-sim, image-sim, text-sim, style-sim."""
    enc = fixture_eval_encoders(cfg, cache_dir)
    return {
        "subject-sim": Backend(name="subject-sim-toy", kind="subject-sim",
                               embed_image=enc["subject"].embed_array,
                               version=enc["subject"].version),
        "image-sim": Backend(name="image-sim-toy", kind="image-sim",
                             embed_image=enc["image"].embed_array,
                             version=enc["image"].version),
        "text-sim": Backend(name="text-sim-toy", kind="text-sim",
                            embed_image=enc["image"].embed_array,
                            embed_text=enc["text"].embed_text, version="joint-v1"),
        "style-sim": Backend(name="style-sim-toy", kind="style-sim",
                             embed_image=style_encoder.embedder.embed_array,
                             version=style_encoder.version),
    }


# -- insertion model -----------------------------------------------------------------


@dataclass
class InsertionFixtureConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    n_scenes: int = 200
    size: int = 64
    base_width: int = 32
    sample_steps: int = 12
    domain: str = "photo"


def fixture_insertion_model(cfg: InsertionFixtureConfig = InsertionFixtureConfig(),
                            cache_dir=None) -> InsertionModel:
    """Insertion/removal model trained on one domain's analytic triplets."""

    def build():
        spec = {"photo": PHOTO, "cartoon": CARTOON}[cfg.domain]
        scenes = [gen_scene(spec, derive_seed(cfg.seed, "ins-train", i), cfg.size)
                  for i in range(cfg.n_scenes)]
        model = InsertionModel(default_insertion_arch(cfg.size, cfg.base_width),
                               seed=cfg.seed, sample_steps=cfg.sample_steps)
        train_insertion(model, scenes,
                        InsertTrainConfig(steps=cfg.steps, batch_size=cfg.batch_size,
                                          lr=cfg.lr, seed=cfg.seed,
                                          dataset_id=f"synthetic-{cfg.domain}"))
        return model

    return cached(cache_dir, "insertion", cfg, build,
                  InsertionModel.from_bytes, lambda m: m.to_bytes())


# -- whole zoo -----------------------------------------------------------------------


def build_model_dir(models_dir, cache_dir=None, fast: bool = False, seed: int = 0):
    """Train (or copy from cache) every model the pipeline needs.

    Writes base, style_encoder, adapter, insertion and the evaluation
    encoders under models_dir with their conventional ids.  fast=True
    trains tiny low-step variants for smoke runs.
    """
    models_dir = Path(models_dir)
    models_dir.mkdir(parents=True, exist_ok=True)
    scale = 0.05 if fast else 1.0

    def steps(n):
        return max(10, int(n * scale))

    base_cfg = BasePretrainConfig(steps=steps(1500), seed=seed)
    bundle = pretrain_base(base_cfg, cache_dir)
    (models_dir / "base.ckpt").write_bytes(bundle.to_bytes())

    enc_cfg = StyleEncoderConfig(steps=steps(250), seed=seed)
    encoder = fixture_style_encoder(enc_cfg, cache_dir)
    (models_dir / "style_encoder.ckpt").write_bytes(encoder.embedder.to_bytes())

    adapter_cfg = AdapterFixtureConfig(steps=steps(500), seed=seed)
    adapter = fixture_adapter(bundle, encoder, adapter_cfg, cache_dir)
    (models_dir / "adapter.ckpt").write_bytes(adapter.to_bytes())

    ins_cfg = InsertionFixtureConfig(steps=steps(2000), seed=seed)
    insertion = fixture_insertion_model(ins_cfg, cache_dir)
    (models_dir / "insertion.ckpt").write_bytes(insertion.to_bytes())

    eval_cfg = EvalBackendsConfig(steps=steps(300), seed=seed)
    encoders = fixture_eval_encoders(eval_cfg, cache_dir)
    (models_dir / "eval_subject.ckpt").write_bytes(encoders["subject"].to_bytes())
    (models_dir / "eval_image.ckpt").write_bytes(encoders["image"].to_bytes())
    (models_dir / "eval_text.ckpt").write_bytes(encoders["text"].to_bytes())
    backends = fixture_eval_backends(encoder, eval_cfg, cache_dir)
    return {"base": bundle, "style_encoder": encoder, "adapter": adapter,
            "insertion": insertion, "backends": backends}
