import numpy as np
import pytest
import torch

from styledrag import synthdata
from styledrag.diffusion import (AdapterInjection, ArchSpec, ModelBundle, TextEncoder,
                                 UNet, build_schedule, sample)
from styledrag.embedders import ColorStatsEncoder
from styledrag.errors import ConfigurationError, ParameterError, ShapeError
from styledrag.images import from_model
from styledrag.personalization import attach_lora
from styledrag.seeding import torch_generator
from styledrag.style_injection import (AdapterTrainConfig, StyleAdapter, StyleEncoder,
                                       embed_style, inject_generate, train_adapter)


@pytest.fixture()
def small_pm():
    arch = ArchSpec(image_size=16, base_width=8, channel_mults=(1,), d_ctx=16,
                    time_dim=16, num_heads=2)
    unet = UNet(arch, seed=9)
    gen = torch_generator(9, "unzero")
    with torch.no_grad():
        for p in unet.parameters():
            p.add_(torch.randn(p.shape, generator=gen) * 0.02)
    text = TextEncoder(dim=16, seed=9)
    pm = attach_lora(unet, text, build_schedule(40, 1e-3, 0.05))
    return pm


def color_encoder():
    return StyleEncoder(ColorStatsEncoder(), normalize=True)


def test_embed_style_deterministic_and_normalized():
    enc = color_encoder()
    img = synthdata.gen_scene(synthdata.PHOTO, 1).with_effects
    e1 = embed_style(enc, img)
    e2 = embed_style(enc, img)
    np.testing.assert_array_equal(e1.vector, e2.vector)
    assert np.linalg.norm(e1.vector) == pytest.approx(1.0, abs=1e-6)


def test_flip_invariant_encoder_oracle():
    """Histogram statistics cannot see a horizontal flip."""
    enc = color_encoder()
    img = synthdata.gen_scene(synthdata.CARTOON, 2).with_effects
    flipped = img[:, ::-1].copy()
    np.testing.assert_array_equal(embed_style(enc, img).vector,
                                  embed_style(enc, flipped).vector)


def test_scale_zero_matches_plain_sampling(small_pm):
    pm = small_pm
    enc = color_encoder()
    e = embed_style(enc, synthdata.gen_scene(synthdata.PHOTO, 3).with_effects)
    adapter = StyleAdapter(d_style=enc.dim, d_ctx=16, selector=("up.0",))
    out = inject_generate(pm, e, adapter, scale=0.0, seed=4, steps=4, class_noun="disk")
    ctx = pm.encode_prompt(pm.prompt_for("disk")).detach()
    ref = from_model(sample(pm.unet, ctx, pm.schedule, steps=4, seed=4,
                            shape=(3, 16, 16)))
    np.testing.assert_array_equal(out, ref)


def test_zero_context_equals_scale_zero(small_pm):
    """All-zero adapter tokens contribute exactly nothing."""
    pm = small_pm
    enc = color_encoder()
    e = embed_style(enc, synthdata.gen_scene(synthdata.PHOTO, 5).with_effects)
    adapter = StyleAdapter(d_style=enc.dim, d_ctx=16, selector=("up.0",))
    # zero-initialized projection -> zero tokens at any scale
    out_scale1 = inject_generate(pm, e, adapter, scale=1.0, seed=6, steps=4,
                                 class_noun="disk")
    out_scale0 = inject_generate(pm, e, adapter, scale=0.0, seed=6, steps=4,
                                 class_noun="disk")
    np.testing.assert_array_equal(out_scale1, out_scale0)


def test_injection_locality(small_pm):
    """Blocks outside the selector see exactly the plain text context."""
    pm = small_pm
    seen = {}
    from styledrag.diffusion.unet import CrossAttention
    orig = CrossAttention.forward
    names = {mod: name for name, mod in pm.unet.named_modules()
             if isinstance(mod, CrossAttention)}

    def spy(self, x, ctx, extra_ctx=None, extra_scale=1.0):
        seen.setdefault(names[self], []).append(extra_ctx is not None)
        return orig(self, x, ctx, extra_ctx=extra_ctx, extra_scale=extra_scale)

    CrossAttention.forward = spy
    try:
        tokens = {"up.0": torch.randn(1, 4, 16, generator=torch_generator(1))}
        pm.unet(torch.randn(1, 3, 16, 16, generator=torch_generator(2)),
                torch.tensor([3]),
                torch.randn(1, 4, 16, generator=torch_generator(3)),
                adapter=AdapterInjection(tokens=tokens, scale=1.0))
    finally:
        CrossAttention.forward = orig
    injected = {name for name, flags in seen.items() if any(flags)}
    assert injected == {"up_attn.0"}


def test_incompatible_selector_rejected(small_pm):
    pm = small_pm
    enc = color_encoder()
    e = embed_style(enc, synthdata.gen_scene(synthdata.PHOTO, 7).with_effects)
    adapter = StyleAdapter(d_style=enc.dim, d_ctx=16, selector=("up.9",))
    with pytest.raises(ConfigurationError):
        inject_generate(pm, e, adapter, scale=1.0, seed=0, steps=2, class_noun="disk")


def test_style_vector_dim_checked(small_pm):
    adapter = StyleAdapter(d_style=8, d_ctx=16)
    from styledrag.style_injection import StyleEmbedding
    with pytest.raises(ShapeError):
        adapter.tokens_for(StyleEmbedding(vector=np.ones(9, dtype=np.float32)))


def test_train_adapter_empty_dataset_rejected(small_pm):
    pm = small_pm
    bundle = ModelBundle(unet=pm.unet, text_encoder=pm.text_encoder,
                         schedule=pm.schedule)
    with pytest.raises(ParameterError):
        train_adapter(color_encoder(), bundle, [], AdapterTrainConfig(steps=1))


def test_train_adapter_zero_steps_is_zero_init(small_pm):
    pm = small_pm
    enc = color_encoder()
    bundle = ModelBundle(unet=pm.unet, text_encoder=pm.text_encoder,
                         schedule=pm.schedule)
    pairs = [(synthdata.gen_scene(synthdata.PHOTO, i).with_effects, "photo")
             for i in range(2)]
    adapter = train_adapter(enc, bundle, pairs, AdapterTrainConfig(steps=0))
    assert not adapter.trained
    for p in adapter.parameters():
        assert torch.equal(p, torch.zeros_like(p))


def test_train_adapter_reproducible_and_frozen(small_pm):
    pm = small_pm
    enc = color_encoder()
    bundle = ModelBundle(unet=pm.unet, text_encoder=pm.text_encoder,
                         schedule=pm.schedule)
    pairs = [(synthdata.gen_scene(spec, i).with_effects, spec.name)
             for spec in (synthdata.PHOTO, synthdata.CARTOON) for i in range(3)]
    cfg = AdapterTrainConfig(steps=5, batch_size=4, seed=2)
    a1 = train_adapter(enc, bundle, pairs, cfg)
    a2 = train_adapter(enc, bundle, pairs, cfg)
    for p1, p2 in zip(a1.parameters(), a2.parameters()):
        assert torch.equal(p1, p2)
    assert a1.trained and not any(p.requires_grad for p in a1.parameters())
    # adapter parameters never change during generation
    before = [p.clone() for p in a1.parameters()]
    e = embed_style(enc, pairs[0][0])
    inject_generate(pm, e, a1, scale=1.0, seed=1, steps=3, class_noun="disk")
    for b, p in zip(before, a1.parameters()):
        assert torch.equal(b, p)


def test_adapter_checkpoint_roundtrip():
    adapter = StyleAdapter(d_style=30, d_ctx=16, tokens_per_block=2,
                           selector=("mid", "up.0"), scale_default=0.7)
    with torch.no_grad():
        for p in adapter.parameters():
            p.uniform_(-1, 1, generator=torch_generator(3))
    adapter.trained = True
    restored = StyleAdapter.from_bytes(adapter.to_bytes())
    assert restored.selector == ("mid", "up.0")
    assert restored.trained and restored.scale_default == 0.7
    for p1, p2 in zip(adapter.parameters(), restored.parameters()):
        assert torch.equal(p1, p2)
