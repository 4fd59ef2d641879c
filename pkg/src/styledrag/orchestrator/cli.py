"""Command-line entry points.

Every subcommand takes --config <file> (JSON), --seed and --out; the
config carries the command-specific fields documented in the README.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click

from ..bootstrap import AdaptConfig, CandidateStore, parse_policy
from ..errors import ParameterError
from ..images import load_png, save_png
from ..insertion import Placement
from ..personalization import PersonalizeConfig
from ..seeding import derive_seed
from ..style_injection import embed_style, inject_generate
from ..synthdata import (BUILTIN_DOMAINS, StyleDomainSpec, gen_dataset,
                         gen_subject_background_dataset)
from .pipeline import ModelHub, PipelineConfig, magic_insert, personalize_cached
from .workspace import Workspace, build_executors
from .jobs import JobQueue

log = logging.getLogger(__name__)


def _load_config(config_path) -> dict:
    if config_path is None:
        raise ParameterError("--config is required for this command")
    return json.loads(Path(config_path).read_text())


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON config file")(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--out", "out_path", type=click.Path(), default=None,
                      help="output file or directory")(fn)
    return fn


@click.group()
def main():
    """Style-aware subject drag-and-drop toolkit."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@_common
def personalize(config_path, seed, out_path):
    """Train subject deltas/tokens; writes a personalized checkpoint."""
    cfg = _load_config(config_path)
    hub = ModelHub(cfg.get("models_dir", "models"))
    subject = load_png(cfg["subject"])
    overrides = dict(cfg.get("personalize", {}))
    overrides.setdefault("seed", seed)
    overrides["class_noun"] = cfg["class_noun"]
    pcfg = PersonalizeConfig(**overrides)
    pm, key, cached = personalize_cached(hub, subject, pcfg, cfg.get("base", "base"))
    out = Path(out_path or f"personalized-{key}.ckpt")
    out.write_bytes(pm.snapshot())
    click.echo(f"personalized checkpoint -> {out} (cache key {key}, cached={cached})")


@main.command()
@_common
def stylize(config_path, seed, out_path):
    """Generate the style-injected subject for a target image."""
    cfg = _load_config(config_path)
    hub = ModelHub(cfg.get("models_dir", "models"))
    subject = load_png(cfg["subject"])
    target = load_png(cfg["target"])
    overrides = dict(cfg.get("personalize", {}))
    overrides.setdefault("seed", derive_seed(seed, "personalize"))
    overrides["class_noun"] = cfg["class_noun"]
    pm, _, _ = personalize_cached(hub, subject, PersonalizeConfig(**overrides),
                                  cfg.get("base", "base"))
    encoder = hub.style_encoder(cfg.get("style_encoder", "style_encoder"))
    adapter = hub.adapter(cfg.get("adapter", "adapter"))
    e_t = embed_style(encoder, target)
    stylized = inject_generate(pm, e_t, adapter,
                               prompt_suffix=cfg.get("prompt_suffix", ""),
                               scale=cfg.get("adapter_scale", 1.0),
                               seed=derive_seed(seed, "generate"),
                               steps=cfg.get("sample_steps", 50),
                               guidance_scale=cfg.get("guidance_scale", 2.0),
                               class_noun=cfg["class_noun"])
    out = Path(out_path or "stylized.png")
    save_png(out, stylized)
    click.echo(f"stylized subject -> {out}")


@main.command()
@_common
def insert(config_path, seed, out_path):
    """Segment, paste and add effects for an already-stylized subject."""
    from ..insertion import insert_effects, paste, segment_subject
    cfg = _load_config(config_path)
    hub = ModelHub(cfg.get("models_dir", "models"))
    subject = load_png(cfg["subject"])
    target = load_png(cfg["target"])
    placement = Placement.from_json(cfg["placement"])
    cutout = segment_subject(subject)
    composite, mask = paste(cutout, target, placement)
    model = hub.insertion(cfg.get("insertion", "insertion"))
    final = insert_effects(model, composite, mask, seed=derive_seed(seed, "insert"))
    out = Path(out_path or "inserted.png")
    save_png(out, final)
    click.echo(f"inserted composite -> {out}")


@main.command("magic-insert")
@_common
def magic_insert_cmd(config_path, seed, out_path):
    """Full pipeline: personalize, stylize, place, and add effects."""
    cfg = _load_config(config_path)
    hub = ModelHub(cfg.get("models_dir", "models"))
    subject = load_png(cfg["subject"])
    target = load_png(cfg["target"])
    pipeline_cfg = PipelineConfig(
        class_noun=cfg["class_noun"],
        placement=cfg["placement"],
        personalize=cfg.get("personalize", {}),
        personalize_checkpoint=cfg.get("personalize_checkpoint"),
        adapter_scale=cfg.get("adapter_scale", 1.0),
        prompt_suffix=cfg.get("prompt_suffix", ""),
        sample_steps=cfg.get("sample_steps", 50),
        guidance_scale=cfg.get("guidance_scale", 2.0),
        seed=seed,
        models=cfg.get("models", PipelineConfig(class_noun="x").models),
    )
    run_dir = Path(out_path or "runs/magic-insert")
    final, state = magic_insert(subject, target, pipeline_cfg.placement_obj(),
                                pipeline_cfg, hub, run_dir)
    click.echo(f"run artifacts -> {state.run_dir} "
               f"(final: {state.run_dir / 'stages/06_effects/final.png'})")


@main.group()
def bootstrap():
    """Bootstrapped domain adaptation."""


@bootstrap.command("run")
@_common
def bootstrap_run(config_path, seed, out_path):
    """One generate-filter-adapt round over a stylized set."""
    cfg = _load_config(config_path)
    ws = Workspace(cfg.get("workspace", "workspace"))
    queue = JobQueue(build_executors(ws), context=ws, store_dir=ws.jobs_dir)
    try:
        inputs = {"policy": cfg.get("policy", {"kind": "threshold", "tau": 0.5}),
                  "source": cfg.get("source", {"domain": "cartoon", "n": 50,
                                               "seed": seed}),
                  "adapt": cfg.get("adapt", {}),
                  "round": cfg.get("round", 0),
                  "use_store": cfg.get("use_store", False),
                  "seed": seed}
        job = queue.submit("bootstrap_round", inputs)
        job = queue.wait(job.id, timeout=cfg.get("timeout", 3600))
        if job.state != "done":
            raise click.ClickException(f"bootstrap round failed: {job.error}")
        click.echo(json.dumps(job.artifacts, indent=2))
    finally:
        queue.shutdown()


@bootstrap.command("review-export")
@_common
def bootstrap_review_export(config_path, seed, out_path):
    """Export the candidate index and verdict log for offline review."""
    cfg = _load_config(config_path)
    store = CandidateStore(cfg.get("candidates", "workspace/candidates"))
    payload = {"v": 1, "candidates": store.entries(cfg.get("round")),
               "events": store.events()}
    out = Path(out_path or "review-export.json")
    out.write_text(json.dumps(payload, indent=2, sort_keys=True))
    click.echo(f"review export -> {out}")


@main.group()
def synthdata():
    """Synthetic dataset generation."""


@synthdata.command("gen")
@_common
def synthdata_gen(config_path, seed, out_path):
    """Generate scene triplets or a subject/background evaluation set."""
    cfg = _load_config(config_path) if config_path else {}
    out = Path(out_path or cfg.get("out", "dataset"))
    mode = cfg.get("mode", "triplets")
    if mode == "triplets":
        domain = cfg.get("domain", "photo")
        spec = BUILTIN_DOMAINS.get(domain)
        if spec is None:
            spec = StyleDomainSpec(**cfg["domain_spec"])
        manifest = gen_dataset(spec, cfg.get("n", 50), seed, out,
                               size=cfg.get("size", 64))
        click.echo(f"{len(manifest.triplets)} triplets -> {out}")
    elif mode == "subject-background":
        manifest = gen_subject_background_dataset(
            cfg.get("n_subjects", 35), cfg.get("n_backgrounds", 20), seed, out,
            size=cfg.get("size", 64))
        click.echo(f"{len(manifest.subjects)} subjects x {len(manifest.backgrounds)} "
                   f"backgrounds ({len(manifest.pairs)} pairs) -> {out}")
    else:
        raise click.ClickException(f"unknown synthdata mode {mode!r}")


@main.command()
@_common
def evaluate(config_path, seed, out_path):
    """Score outputs against references and render the metric table."""
    cfg = _load_config(config_path)
    ws = Workspace(cfg.get("workspace", "workspace"))
    from ..evaluation import report, subject_fidelity, style_fidelity
    backends = ws.eval_backends()
    rows = []
    for entry in cfg["entries"]:
        output = load_png(entry["output"])
        if entry.get("mode", "subject") == "style":
            rows.append(style_fidelity(output, load_png(entry["style_ref"]),
                                       entry.get("style_prompt", ""), backends,
                                       label=entry.get("label", entry["output"])))
        else:
            rows.append(subject_fidelity(output, load_png(entry["subject_ref"]),
                                         entry.get("simple_prompt", ""),
                                         entry.get("detailed_prompt", ""), backends,
                                         label=entry.get("label", entry["output"])))
    fmt = cfg.get("format", "text")
    rendered = report(rows, format=fmt)
    if out_path:
        Path(out_path).write_text(rendered)
        click.echo(f"report -> {out_path}")
    else:
        click.echo(rendered)


@main.command()
@_common
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(config_path, seed, out_path, port, host):
    """Run the studio HTTP service."""
    import uvicorn
    from .service import create_app
    cfg = _load_config(config_path) if config_path else {}
    ws = Workspace(cfg.get("workspace", "workspace"))
    static_dir = cfg.get("static_dir")
    app = create_app(ws, queue_width=cfg.get("queue_width", 1), static_dir=static_dir)
    uvicorn.run(app, host=cfg.get("host", host), port=cfg.get("port", port))


@main.command()
@_common
@click.option("--fast", is_flag=True, help="tiny low-step variants for smoke runs")
def pretrain(config_path, seed, out_path, fast):
    """Train the desk-scale model zoo into a models directory."""
    from ..pretrain import build_model_dir
    cfg = _load_config(config_path) if config_path else {}
    models_dir = Path(out_path or cfg.get("models_dir", "models"))
    cache_dir = cfg.get("cache_dir")
    build_model_dir(models_dir, cache_dir=cache_dir,
                    fast=fast or cfg.get("fast", False), seed=seed)
    click.echo(f"model zoo -> {models_dir}")


if __name__ == "__main__":
    main()
