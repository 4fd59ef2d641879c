"""Walk through the diffusion backbone: schedule, noising, loss, sampling.

Run:  python demos/demo_01_diffusion_basics.py
Everything here is desk scale (64 px, ~0.6M parameters) and runs on CPU.
"""

import torch

from styledrag.diffusion import (ArchSpec, UNet, TextEncoder, build_schedule,
                                 forward_diffuse, denoising_loss, denoising_loss_batch,
                                 sample)
from styledrag.images import from_model, save_png, to_model
from styledrag.seeding import torch_generator
from styledrag.synthdata import gen_subject_image

# The schedule: 1000 linearly spaced betas. alpha_bars decay monotonically,
# so later steps carry more noise.
schedule = build_schedule()
print("alpha_bar at t=0, 499, 999:",
      [round(float(schedule.alpha_bars[t]), 4) for t in (0, 499, 999)])

# Forward noising is closed form: sqrt(ab)*x0 + sqrt(1-ab)*eps.
img, _, shape_name, color_name = gen_subject_image(seed=7)
x0 = to_model(img)
eps = torch.randn(x0.shape, generator=torch_generator(0))
for t in (100, 500, 900):
    x_t = forward_diffuse(x0, t, eps, schedule)
    save_png(f"demos/_out/noised_t{t}.png", from_model(x_t))
print(f"noised versions of the {color_name} {shape_name} written to demos/_out/")

# A small conditional UNet plus the toy prompt encoder.
arch = ArchSpec(image_size=64, base_width=16)   # smaller than default: quick demo
unet = UNet(arch, seed=0)
text = TextEncoder(seed=0)
ctx = text.encode_prompt(f"a {color_name} {shape_name}")
print("context shape:", tuple(ctx.shape))

# The denoising loss draws (t, eps) from the given seed; identical seeds
# give identical losses, which keeps training runs reproducible.
print("loss twice with one seed:",
      float(denoising_loss(unet, x0, ctx, schedule, rng_seed=5)),
      float(denoising_loss(unet, x0, ctx, schedule, rng_seed=5)))

# A very short training loop on the single image (memorization).
opt = torch.optim.Adam(unet.parameters(), lr=2e-3)
batch = x0[None].expand(4, -1, -1, -1)
ctx_b = ctx[None].expand(4, -1, -1).detach()
for step in range(60):
    gen = torch_generator(1, "demo-train", step)
    loss = denoising_loss_batch(unet, batch, ctx_b, schedule, gen)
    opt.zero_grad()
    loss.backward()
    opt.step()
    if step % 20 == 0:
        print(f"step {step:3d} loss {float(loss.detach()):.3f}")

# Deterministic DDIM-style sampling; same seed, same image, bit for bit.
out = sample(unet, ctx.detach(), schedule, steps=20, seed=3, shape=(3, 64, 64))
out2 = sample(unet, ctx.detach(), schedule, steps=20, seed=3, shape=(3, 64, 64))
print("sampling deterministic:", bool(torch.equal(out, out2)))
save_png("demos/_out/sampled.png", from_model(out))
print("sample written to demos/_out/sampled.png")
