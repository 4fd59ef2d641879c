"""Workspace layout, asset store, and the job executors."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..bootstrap import (AdaptConfig, CandidateStore, StylizedItem, adapt,
                         filter_candidates, generate_candidates, parse_policy)
from ..embedders import ConvEmbedder, TextBagEncoder
from ..errors import NotFoundError
from ..evaluation import Backend, report, subject_fidelity, style_fidelity
from ..images import content_hash, decode_png, png_bytes
from ..insertion import Placement, insert_effects, paste, segment_subject
from ..personalization import checkpoint_at
from ..seeding import derive_seed
from ..style_injection import embed_style, inject_generate
from ..synthdata import BUILTIN_DOMAINS, gen_scene
from .pipeline import ModelHub, PipelineConfig, magic_insert, personalize_cached

__all__ = ["AssetStore", "Workspace", "build_executors"]

log = logging.getLogger(__name__)


class AssetStore:
    """Content-addressed PNG store: sha256 -> bytes."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes) -> str:
        digest = content_hash(data)
        path = self.root / f"{digest}.png"
        if not path.exists():
            path.write_bytes(data)
        return digest

    def put_image(self, image: np.ndarray) -> str:
        return self.put(png_bytes(image))

    def get(self, digest: str) -> bytes:
        path = self.root / f"{digest}.png"
        if not path.exists():
            raise NotFoundError(f"asset {digest} not found")
        return path.read_bytes()

    def get_image(self, digest: str) -> np.ndarray:
        return decode_png(self.get(digest))

    def import_file(self, path) -> str:
        return self.put(Path(path).read_bytes())


class Workspace:
    """Directory layout: models/, assets/, runs/, candidates/, jobs/."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hub = ModelHub(self.root / "models")
        self.assets = AssetStore(self.root / "assets")
        self.runs_dir = self.root / "runs"
        self.jobs_dir = self.root / "jobs"
        self.candidates = CandidateStore(self.root / "candidates")
        self._backends = None

    def new_run_dir(self, job_id: str) -> Path:
        path = self.runs_dir / job_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    def eval_backends(self) -> dict:
        """Backend registry from models/backends.json, defaulting to the
        conventional checkpoint names."""
        if self._backends is not None:
            return self._backends
        models_dir = self.hub.models_dir
        registry_path = models_dir / "backends.json"
        mapping = {
            "subject-sim": "eval_subject.ckpt",
            "image-sim": "eval_image.ckpt",
            "text-sim": {"image": "eval_image.ckpt", "text": "eval_text.ckpt"},
            "style-sim": "style_encoder.ckpt",
        }
        if registry_path.exists():
            mapping.update(json.loads(registry_path.read_text()))
        backends = {}
        for kind, spec in mapping.items():
            try:
                if kind == "text-sim":
                    img = ConvEmbedder.from_bytes((models_dir / spec["image"]).read_bytes())
                    txt = TextBagEncoder.from_bytes((models_dir / spec["text"]).read_bytes())
                    backends[kind] = Backend(name=f"{kind}-toy", kind=kind,
                                             embed_image=img.embed_array,
                                             embed_text=txt.embed_text)
                else:
                    enc = ConvEmbedder.from_bytes((models_dir / spec).read_bytes())
                    backends[kind] = Backend(name=f"{kind}-toy", kind=kind,
                                             embed_image=enc.embed_array,
                                             version=enc.version)
            except FileNotFoundError:
                log.info("no %s backend checkpoint under %s", kind, models_dir)
        self._backends = backends
        return backends


def _pipeline_config(inputs: dict) -> PipelineConfig:
    cfg_in = dict(inputs.get("config", {}))
    return PipelineConfig(
        class_noun=inputs["class_noun"],
        placement=inputs.get("placement", {"x": 32, "y": 32, "scale": 1.0}),
        personalize=cfg_in.get("personalize", {}),
        personalize_checkpoint=cfg_in.get("personalize_checkpoint"),
        adapter_scale=cfg_in.get("adapter_scale", 1.0),
        prompt_suffix=cfg_in.get("prompt_suffix", ""),
        sample_steps=cfg_in.get("sample_steps", 50),
        guidance_scale=cfg_in.get("guidance_scale", 2.0),
        seed=inputs.get("seed", 0),
        models=cfg_in.get("models", {"base": "base", "style_encoder": "style_encoder",
                                     "adapter": "adapter", "insertion": "insertion"}),
    )


def build_executors(ws: Workspace) -> dict:
    """Executor per job kind, all reading/writing through the workspace."""

    def run_full_pipeline(inputs, _ctx, progress, cancel_check):
        cfg = _pipeline_config(inputs)
        subject = ws.assets.get_image(inputs["subject_asset"])
        target = ws.assets.get_image(inputs["target_asset"])
        placement = Placement.from_json(inputs["placement"])
        run_dir = ws.new_run_dir(inputs.get("run_name") or content_hash(
            json.dumps(inputs, sort_keys=True).encode())[:12])
        final, state = magic_insert(subject, target, placement, cfg, ws.hub, run_dir,
                                    progress=progress, cancel_check=cancel_check)
        artifacts = {"run_dir": str(state.run_dir.relative_to(ws.root)),
                     "final_png": ws.assets.put_image(final)}
        for rel in ("stages/03_stylized/stylized.png", "stages/05_paste/composite.png"):
            artifacts[Path(rel).stem + "_png"] = ws.assets.put(
                (state.run_dir / rel).read_bytes())
        artifacts["placement"] = placement.to_json()
        return artifacts

    def run_personalize(inputs, _ctx, progress, cancel_check):
        cfg = _pipeline_config(inputs)
        subject = ws.assets.get_image(inputs["subject_asset"])
        pcfg = cfg.personalize_config()
        pm, key, cached = personalize_cached(ws.hub, subject, pcfg,
                                             cfg.models.get("base", "base"))
        progress(1.0, "personalize")
        return {"personalization_key": key, "cached": cached,
                "checkpoints": sorted(pm.ledger.checkpoints),
                "iterations": pm.ledger.iterations_done}

    def run_generate(inputs, _ctx, progress, cancel_check):
        cfg = _pipeline_config(inputs)
        subject = ws.assets.get_image(inputs["subject_asset"])
        target = ws.assets.get_image(inputs["target_asset"])
        pcfg = cfg.personalize_config()
        pm, key, _ = personalize_cached(ws.hub, subject, pcfg,
                                        cfg.models.get("base", "base"))
        if cfg.personalize_checkpoint is not None:
            pm = checkpoint_at(pm, cfg.personalize_checkpoint)
        cancel_check()
        progress(0.5, "stylized_generation")
        encoder = ws.hub.style_encoder(cfg.models.get("style_encoder", "style_encoder"))
        adapter = ws.hub.adapter(cfg.models.get("adapter", "adapter"))
        e_t = embed_style(encoder, target, source_id=inputs["target_asset"])
        stylized = inject_generate(pm, e_t, adapter, prompt_suffix=cfg.prompt_suffix,
                                   scale=cfg.adapter_scale,
                                   seed=derive_seed(cfg.seed, "generate"),
                                   steps=cfg.sample_steps,
                                   guidance_scale=cfg.guidance_scale,
                                   class_noun=cfg.class_noun)
        return {"stylized_png": ws.assets.put_image(stylized),
                "personalization_key": key}

    def run_insert(inputs, _ctx, progress, cancel_check):
        subject = ws.assets.get_image(inputs["subject_asset"])
        target = ws.assets.get_image(inputs["target_asset"])
        placement = Placement.from_json(inputs["placement"])
        cutout = segment_subject(subject)
        composite, mask = paste(cutout, target, placement)
        cancel_check()
        progress(0.5, "effects")
        model = ws.hub.insertion(inputs.get("insertion_model", "insertion"))
        final = insert_effects(model, composite, mask,
                               seed=derive_seed(inputs.get("seed", 0), "insert"))
        return {"final_png": ws.assets.put_image(final),
                "composite_png": ws.assets.put_image(composite),
                "placement": placement.to_json()}

    def run_bootstrap_round(inputs, _ctx, progress, cancel_check):
        policy = parse_policy(inputs["policy"])
        adapt_cfg = AdaptConfig(**inputs.get("adapt", {}))
        model_id = inputs.get("insertion_model", "insertion")
        model = ws.hub.insertion(model_id)
        round_index = inputs.get("round", 0)
        if inputs.get("use_store", False):
            pairs = ws.candidates.load_pairs(round_index)
            if not pairs:
                raise NotFoundError(f"no stored candidates for round {round_index}")
            accepted = filter_candidates(pairs, policy)
            cancel_check()
            adapted = adapt(model, accepted, adapt_cfg)
            round_record = adapted.last_round
            round_record.source_ids = [p.id for p in pairs]
            round_record.filter_descriptor = policy.describe()
            adapted.provenance["rounds"][-1] = round_record.to_json()
        else:
            source = inputs.get("source", {})
            domain = BUILTIN_DOMAINS[source.get("domain", "cartoon")]
            n = int(source.get("n", 50))
            seed = int(source.get("seed", inputs.get("seed", 0)))
            items = []
            for i in range(n):
                scene = gen_scene(domain, derive_seed(seed, "bootstrap-src", i))
                items.append(StylizedItem(id=f"{domain.name}-{i:03d}",
                                          image=scene.with_effects, mask=scene.mask))
            cands = generate_candidates(model, items, seed=seed, round_index=round_index)
            ws.candidates.add(cands, round_index=round_index)
            cancel_check()
            progress(0.4, "adapt")
            from ..bootstrap import run_round
            adapted, round_record = run_round(model, items, policy, adapt_cfg, seed=seed)
        data = adapted.to_bytes()
        new_id = inputs.get("output_model", model_id)
        ws.hub.put(new_id, data)
        return {"model_id": new_id, "model_sha256": content_hash(data),
                "round": round_record.to_json()}

    def run_evaluate(inputs, _ctx, progress, cancel_check):
        backends = ws.eval_backends()
        rows = []
        for entry in inputs["entries"]:
            output = ws.assets.get_image(entry["output_asset"])
            label = entry.get("label", entry["output_asset"][:8])
            if entry.get("mode", "subject") == "style":
                ref = ws.assets.get_image(entry["style_asset"])
                rows.append(style_fidelity(output, ref, entry.get("style_prompt", ""),
                                           backends, label=label))
            else:
                ref = ws.assets.get_image(entry["subject_asset"])
                rows.append(subject_fidelity(output, ref,
                                             entry.get("simple_prompt", ""),
                                             entry.get("detailed_prompt", ""),
                                             backends, label=label))
        table_json = report(rows, format="json")
        table_csv = report(rows, format="csv")
        out_dir = ws.root / "reports"
        out_dir.mkdir(exist_ok=True)
        stem = content_hash(table_json.encode())[:12]
        (out_dir / f"{stem}.json").write_text(table_json)
        (out_dir / f"{stem}.csv").write_text(table_csv)
        return {"report_json": f"reports/{stem}.json", "report_csv": f"reports/{stem}.csv"}

    return {
        "full_pipeline": run_full_pipeline,
        "personalize": run_personalize,
        "generate": run_generate,
        "insert": run_insert,
        "bootstrap_round": run_bootstrap_round,
        "evaluate": run_evaluate,
    }
