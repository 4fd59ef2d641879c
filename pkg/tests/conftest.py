"""Shared fixtures.

Heavy trained fixtures (base denoiser, encoders, adapter, insertion
model, a personalized subject model) are session-scoped and cached on
disk under tests/_fixture_cache keyed by their training configs, so
repeated runs skip retraining.  Set STYLEDRAG_FIXTURE_CACHE to relocate
the cache.
"""

import os
from pathlib import Path

import pytest
import torch

from styledrag import pretrain, synthdata
from styledrag.personalization import (PersonalizeConfig, PersonalizedModel,
                                       attach_lora, personalize)

CACHE_DIR = Path(os.environ.get("STYLEDRAG_FIXTURE_CACHE",
                                Path(__file__).parent / "_fixture_cache"))

torch.set_num_threads(max(1, os.cpu_count() or 1))


@pytest.fixture(scope="session")
def fixture_cache():
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    return CACHE_DIR


@pytest.fixture(scope="session")
def base_bundle(fixture_cache):
    return pretrain.pretrain_base(cache_dir=fixture_cache)


@pytest.fixture(scope="session")
def style_encoder(fixture_cache):
    return pretrain.fixture_style_encoder(cache_dir=fixture_cache)


@pytest.fixture(scope="session")
def style_adapter(base_bundle, style_encoder, fixture_cache):
    return pretrain.fixture_adapter(base_bundle, style_encoder, cache_dir=fixture_cache)


@pytest.fixture(scope="session")
def insertion_model(fixture_cache):
    return pretrain.fixture_insertion_model(cache_dir=fixture_cache)


@pytest.fixture(scope="session")
def eval_backends(style_encoder, fixture_cache):
    return pretrain.fixture_eval_backends(style_encoder, cache_dir=fixture_cache)


FIXTURE_SUBJECT_SEED = 417
PERSONALIZE_FIXTURE = PersonalizeConfig(iterations=600, checkpoint_every=100, seed=11,
                                        unet_lr=2e-3, text_lr=5e-3,
                                        class_noun="")  # noun filled from the subject


@pytest.fixture(scope="session")
def fixture_subject():
    img, mask, shape_name, color_name = synthdata.gen_subject_image(FIXTURE_SUBJECT_SEED)
    return {"image": img, "mask": mask, "class_noun": shape_name, "color": color_name}


def trained_personalized(base_bundle, subject, cfg: PersonalizeConfig,
                         cache_dir: Path, tag: str) -> PersonalizedModel:
    """Train-or-load a personalized model snapshot."""
    import hashlib, json
    from dataclasses import asdict
    key = hashlib.sha256((json.dumps(asdict(cfg), sort_keys=True) + tag).encode())
    path = cache_dir / f"personalized-{key.hexdigest()[:12]}.ckpt"
    if path.exists():
        return PersonalizedModel.from_snapshot(path.read_bytes())
    pm = attach_lora(base_bundle.unet, base_bundle.text_encoder, base_bundle.schedule)
    personalize(pm, subject, cfg)
    path.write_bytes(pm.snapshot())
    return pm


@pytest.fixture(scope="session")
def personalized_fixture(base_bundle, fixture_subject, fixture_cache):
    cfg = PersonalizeConfig(iterations=600, checkpoint_every=100, seed=11,
                            unet_lr=2e-3, text_lr=5e-3,
                            class_noun=fixture_subject["class_noun"])
    return trained_personalized(base_bundle, fixture_subject["image"], cfg,
                                fixture_cache, tag=f"subject{FIXTURE_SUBJECT_SEED}")


@pytest.fixture(scope="session")
def models_dir(tmp_path_factory, base_bundle, style_encoder, style_adapter,
               insertion_model, eval_backends, fixture_cache):
    """Hub directory with every conventional model id, for orchestrator tests."""
    root = tmp_path_factory.mktemp("models")
    (root / "base.ckpt").write_bytes(base_bundle.to_bytes())
    (root / "style_encoder.ckpt").write_bytes(style_encoder.embedder.to_bytes())
    (root / "adapter.ckpt").write_bytes(style_adapter.to_bytes())
    (root / "insertion.ckpt").write_bytes(insertion_model.to_bytes())
    encoders = pretrain.fixture_eval_encoders(cache_dir=fixture_cache)
    (root / "eval_subject.ckpt").write_bytes(encoders["subject"].to_bytes())
    (root / "eval_image.ckpt").write_bytes(encoders["image"].to_bytes())
    (root / "eval_text.ckpt").write_bytes(encoders["text"].to_bytes())
    return root
