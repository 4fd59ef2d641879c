"""The procedural scene generator: triplets, domains, dataset manifests.

Run:  python demos/demo_02_synthetic_scenes.py
"""

import numpy as np

from styledrag.images import save_png
from styledrag.synthdata import (CARTOON, PHOTO, gen_dataset, gen_scene,
                                 gen_subject_background_dataset, load_manifest)

# One scene = (clean plate, paste without effects, paste with effects, mask).
# The effects are analytic (translated+blurred shadow), which is what makes
# the triplets usable as exact ground truth for the insertion model.
scene = gen_scene(PHOTO, seed=11)
print("caption:", scene.caption())
save_png("demos/_out/scene_clean.png", scene.clean)
save_png("demos/_out/scene_no_effects.png", scene.no_effects)
save_png("demos/_out/scene_with_effects.png", scene.with_effects)

# Triplet invariants hold by construction:
outside = scene.mask == 0
print("no-effects equals clean outside the mask:",
      bool(np.array_equal(scene.no_effects[outside], scene.clean[outside])))
inside = scene.mask > 0.5
print("effects never touch subject pixels:",
      bool(np.array_equal(scene.with_effects[inside], scene.no_effects[inside])))

# Two built-in style domains with different palettes and shadow hardness.
for spec in (PHOTO, CARTOON):
    s = gen_scene(spec, seed=3)
    save_png(f"demos/_out/domain_{spec.name}.png", s.with_effects)
print("domain renders written to demos/_out/")

# A triplet dataset on disk, with a validated manifest.
manifest = gen_dataset(CARTOON, n=4, seed=0, out_dir="demos/_out/triplet_ds")
print("triplet ids:", [t["id"] for t in manifest.triplets])
reloaded = load_manifest("demos/_out/triplet_ds/manifest.json")
print("manifest round-trips:", len(reloaded.triplets) == 4)

# The subject/background evaluation layout: subjects and backgrounds with a
# pair list that defaults to the full cross product (35 x 20 -> 700 pairs at
# full size; tiny here).
sb = gen_subject_background_dataset(3, 2, seed=0, out_dir="demos/_out/subjects_ds")
print("pairs:", sb.pairs)
