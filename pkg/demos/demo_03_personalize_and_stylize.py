"""Subject personalization and adapter style injection.

Run:  python demos/demo_03_personalize_and_stylize.py [--full]

By default this uses small step counts so it finishes in about a minute;
--full trains the real desk-scale fixtures (several minutes, cached under
demos/_cache for reuse).
"""

import sys

from styledrag.images import save_png
from styledrag.personalization import PersonalizeConfig, attach_lora, checkpoint_at, personalize
from styledrag.pretrain import (AdapterFixtureConfig, BasePretrainConfig,
                                StyleEncoderConfig, fixture_adapter,
                                fixture_style_encoder, pretrain_base)
from styledrag.style_injection import embed_style, inject_generate
from styledrag.synthdata import CARTOON, PHOTO, gen_scene, gen_subject_image

full = "--full" in sys.argv
cache = "demos/_cache" if full else None
steps = (lambda n: n) if full else (lambda n: max(20, n // 20))

# A pretrained toy backbone: text-conditional denoiser over the caption
# vocabulary (colors, shapes, style domains).
bundle = pretrain_base(BasePretrainConfig(steps=steps(1500)), cache_dir=cache)

# Personalization: low-rank deltas on every attention projection plus two
# learned tokens <s1><s2> and a trainable prompt encoder. The base weights
# stay frozen (checksummed).
subject, _, noun, color = gen_subject_image(seed=23)
save_png("demos/_out/subject.png", subject)
pm = attach_lora(bundle.unet, bundle.text_encoder, bundle.schedule)
cfg = PersonalizeConfig(iterations=steps(600), checkpoint_every=max(1, steps(600) // 3),
                        unet_lr=2e-3, text_lr=5e-3, seed=1, class_noun=noun)
personalize(pm, subject, cfg)
first, last = pm.ledger.losses[0], pm.ledger.losses[-1]
print(f"personalized {cfg.iterations} iters on the {color} {noun}; "
      f"loss {first:.3f} -> {last:.3f}")
print("checkpoints kept at iterations:", sorted(pm.ledger.checkpoints))

# The editability/fidelity tradeoff is exposed through those checkpoints:
# earlier ones follow prompt edits more, later ones match the subject more.
early = checkpoint_at(pm, sorted(pm.ledger.checkpoints)[1])
print("restored an early checkpoint at iteration", early.ledger.iterations_done)

# Style injection: embed the target image, project it to extra attention
# tokens, inject into the selected upsampling block while sampling.
encoder = fixture_style_encoder(StyleEncoderConfig(steps=steps(250)), cache_dir=cache)
adapter = fixture_adapter(bundle, encoder, AdapterFixtureConfig(steps=steps(500)),
                          cache_dir=cache)
for spec in (PHOTO, CARTOON):
    target = gen_scene(spec, seed=5).with_effects
    e_t = embed_style(encoder, target, source_id=spec.name)
    stylized = inject_generate(pm, e_t, adapter, scale=1.0, seed=9, steps=25,
                               guidance_scale=2.0)
    save_png(f"demos/_out/stylized_{spec.name}.png", stylized)
print("stylized generations written to demos/_out/stylized_*.png")

# Scale 0 reproduces plain sampling bit-exactly; attribute edits ride on the
# prompt suffix.
plain = inject_generate(pm, e_t, adapter, scale=0.0, seed=9, steps=25)
edited = inject_generate(pm, e_t, adapter, prompt_suffix="blue", scale=1.0,
                         seed=9, steps=25, guidance_scale=2.0)
save_png("demos/_out/stylized_edited_blue.png", edited)
