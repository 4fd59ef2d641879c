import numpy as np
import pytest
import torch

from styledrag import synthdata
from styledrag.diffusion import ArchSpec, UNet, TextEncoder, build_schedule
from styledrag.errors import ConfigurationError, NotFoundError, ParameterError, ShapeError
from styledrag.personalization import (LoraLinear, PersonalizeConfig, attach_lora,
                                       checkpoint_at, default_lora_targets,
                                       init_token_pair, personalize)
from styledrag.seeding import torch_generator


@pytest.fixture()
def small_bundle():
    arch = ArchSpec(image_size=16, base_width=8, channel_mults=(1,), d_ctx=16,
                    time_dim=16, num_heads=2)
    unet = UNet(arch, seed=7)
    # break the zero output head so trainings/predictions are nontrivial
    gen = torch_generator(7, "unzero")
    with torch.no_grad():
        for p in unet.parameters():
            p.add_(torch.randn(p.shape, generator=gen) * 0.02)
    text = TextEncoder(dim=16, seed=7)
    schedule = build_schedule(50, 1e-3, 0.05)
    return unet, text, schedule


def subject16():
    img, _, shape_name, _ = synthdata.gen_subject_image(3, size=16)
    return img, shape_name


def test_attach_is_bitexact_noop(small_bundle):
    unet, text, schedule = small_bundle
    pm = attach_lora(unet, text, schedule)
    x = torch.randn(1, 3, 16, 16, generator=torch_generator(1))
    ctx = torch.randn(1, 4, 16, generator=torch_generator(2))
    t = torch.tensor([5])
    assert torch.equal(unet(x, t, ctx), pm.unet(x, t, ctx))


def test_delta_parameter_count_rank4_64x64():
    base = torch.nn.Linear(64, 64, bias=False)
    lora = LoraLinear(base, rank=4, alpha=4.0, gen=torch_generator(0))
    n = lora.lora_a.numel() + lora.lora_b.numel()
    assert n == 4 * 64 + 64 * 4 == 512


def test_effective_delta_is_alpha_times_ba():
    base = torch.nn.Linear(8, 6, bias=False)
    lora = LoraLinear(base, rank=2, alpha=3.0, gen=torch_generator(1))
    with torch.no_grad():
        lora.lora_b.uniform_(-1, 1, generator=torch_generator(2))
    x = torch.randn(5, 8, generator=torch_generator(3))
    expected = base(x) + x @ (3.0 * (lora.lora_b @ lora.lora_a)).T
    assert torch.allclose(lora(x), expected, atol=1e-6)


def test_empty_and_unknown_targets_rejected(small_bundle):
    unet, text, schedule = small_bundle
    with pytest.raises(ConfigurationError):
        attach_lora(unet, text, schedule, targets=[])
    with pytest.raises(ConfigurationError):
        attach_lora(unet, text, schedule, targets=["nope.weight"])


def test_default_targets_are_attention_projections(small_bundle):
    unet, _, _ = small_bundle
    targets = default_lora_targets(unet)
    assert targets and all(t.endswith((".to_q.weight", ".to_k.weight",
                                       ".to_v.weight", ".to_out.weight"))
                           for t in targets)


def test_token_pair_init_modes(small_bundle):
    _, text, _ = small_bundle
    pair = init_token_pair(16, "rare-token", text)
    rows = text.token_table.detach()[list(text.vocab.rare_ids)]
    assert torch.equal(pair.embed.detach(), rows)
    g1 = init_token_pair(16, "gaussian", text, seed=5)
    g2 = init_token_pair(16, "gaussian", text, seed=5)
    assert torch.equal(g1.embed.detach(), g2.embed.detach())
    with pytest.raises(ShapeError):
        init_token_pair(8, "rare-token", text)
    with pytest.raises(ParameterError):
        init_token_pair(16, "bogus", text)


def test_gaussian_token_std_monte_carlo(small_bundle):
    _, text, _ = small_bundle
    samples = []
    for seed in range(320):  # 320 * 32 > 1e4 draws
        samples.append(init_token_pair(16, "gaussian", text, seed=seed).embed.detach())
    values = torch.cat([s.reshape(-1) for s in samples])
    n = values.numel()
    assert n >= 10_000
    se = 0.02 / np.sqrt(2 * n)
    assert abs(values.std(unbiased=True).item() - 0.02) < 3 * se


def test_personalize_zero_iterations_is_noop(small_bundle):
    unet, text, schedule = small_bundle
    pm = attach_lora(unet, text, schedule)
    img, noun = subject16()
    before = {n: p.detach().clone() for n, p in pm.unet.named_parameters()}
    personalize(pm, img, PersonalizeConfig(iterations=0, class_noun=noun))
    for n, p in pm.unet.named_parameters():
        assert torch.equal(before[n], p.detach())


def test_gradient_routing_one_step(small_bundle):
    """After one step exactly {lora factors, token pair, text encoder} change."""
    unet, text, schedule = small_bundle
    pm = attach_lora(unet, text, schedule)
    img, noun = subject16()
    snapshot = {}
    for group, module in (("unet", pm.unet), ("text", pm.text_encoder),
                          ("tokens", pm.tokens)):
        for n, p in module.named_parameters():
            snapshot[f"{group}.{n}"] = p.detach().clone()
    cfg = PersonalizeConfig(iterations=1, class_noun=noun, cfg_drop_prob=0.0,
                            unet_lr=1e-2, text_lr=1e-2, seed=0)
    personalize(pm, img, cfg)
    changed = set()
    for group, module in (("unet", pm.unet), ("text", pm.text_encoder),
                          ("tokens", pm.tokens)):
        for n, p in module.named_parameters():
            if not torch.equal(snapshot[f"{group}.{n}"], p.detach()):
                changed.add(f"{group}.{n}")
    assert all(".lora_a" in c or ".lora_b" in c for c in changed if c.startswith("unet."))
    assert any(c.startswith("unet.") and ".lora_b" in c for c in changed)
    assert "tokens.embed" in changed
    assert any(c.startswith("text.") for c in changed)
    # frozen base untouched
    frozen = [c for c in changed if c.startswith("unet.") and ".lora_" not in c]
    assert frozen == []


def test_personalize_reproducible(small_bundle):
    unet, text, schedule = small_bundle
    img, noun = subject16()
    cfg = PersonalizeConfig(iterations=8, class_noun=noun, seed=3,
                            unet_lr=1e-3, text_lr=1e-3, checkpoint_every=4)
    pm1 = personalize(attach_lora(unet, text, schedule), img, cfg)
    pm2 = personalize(attach_lora(unet, text, schedule), img, cfg)
    for (n1, p1), (n2, p2) in zip(pm1.unet.named_parameters(),
                                  pm2.unet.named_parameters()):
        assert torch.equal(p1.detach(), p2.detach()), n1
    assert pm1.ledger.losses == pm2.ledger.losses


def test_resume_from_checkpoint_bit_identical(small_bundle):
    unet, text, schedule = small_bundle
    img, noun = subject16()
    cfg = PersonalizeConfig(iterations=10, class_noun=noun, seed=5,
                            unet_lr=1e-3, text_lr=1e-3, checkpoint_every=5)
    full = personalize(attach_lora(unet, text, schedule), img, cfg)
    resumed = checkpoint_at(full, 5)
    assert resumed.ledger.iterations_done == 5
    personalize(resumed, img, cfg)
    for (n1, p1), (n2, p2) in zip(full.unet.named_parameters(),
                                  resumed.unet.named_parameters()):
        assert torch.equal(p1.detach(), p2.detach()), n1
    for m1, m2 in ((full.tokens, resumed.tokens),
                   (full.text_encoder, resumed.text_encoder)):
        for (n1, p1), (n2, p2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert torch.equal(p1.detach(), p2.detach()), n1


def test_checkpoint_zero_is_pretraining_state(small_bundle):
    unet, text, schedule = small_bundle
    img, noun = subject16()
    pm = attach_lora(unet, text, schedule)
    init_b = {n: p.detach().clone() for n, p in pm.unet.named_parameters()
              if "lora_b" in n}
    personalize(pm, img, PersonalizeConfig(iterations=4, class_noun=noun,
                                           checkpoint_every=2, unet_lr=1e-2,
                                           text_lr=1e-2))
    restored = checkpoint_at(pm, 0)
    for n, p in restored.unet.named_parameters():
        if "lora_b" in n:
            assert torch.equal(p.detach(), init_b[n])
    with pytest.raises(NotFoundError):
        checkpoint_at(pm, 3)


def test_frozen_base_checksum_stable(small_bundle):
    unet, text, schedule = small_bundle
    img, noun = subject16()
    pm = attach_lora(unet, text, schedule)
    before = pm.frozen_checksum()
    personalize(pm, img, PersonalizeConfig(iterations=5, class_noun=noun,
                                           unet_lr=1e-2, text_lr=1e-2))
    assert pm.frozen_checksum() == before == pm.base_checksum
