"""Metric rows, overall means, and table rendering.

Run:  python demos/demo_06_evaluate_and_report.py
"""

import numpy as np

from styledrag.evaluation import (Backend, MetricRow, cosine, report,
                                  reward_score, style_fidelity, subject_fidelity)

# cosine is the shared primitive behind every similarity metric.
print("cos((1,0),(1,1)) =", round(cosine([1, 0], [1, 1]), 6))

# Backends are pluggable; here: raw-pixel embeddings and a hash-based text
# stub. The pretrained desk-scale encoders (and any real encoder) plug in
# through the same Backend interface.
flat = lambda img: np.asarray(img, dtype=np.float64).ravel() + 1e-9
backends = {
    "subject-sim": Backend(name="demo", kind="subject-sim", embed_image=flat),
    "image-sim": Backend(name="demo", kind="image-sim", embed_image=flat),
    "text-sim": Backend(name="demo", kind="text-sim", embed_image=lambda i: np.ones(8),
                        embed_text=lambda t: np.ones(8) if "disk" in t else -np.ones(8)),
    "style-sim": Backend(name="demo", kind="style-sim", embed_image=flat),
}
rng = np.random.default_rng(0)
output = rng.random((16, 16, 3)).astype(np.float32)
row = subject_fidelity(output, output.copy(), "a disk", "a large red disk",
                       backends, label="self-comparison")
print("subject fidelity scores:", {k: round(v, 3) for k, v in row.scores.items()})
print("overall mean:", round(row.overall_mean, 3))

# Tables: stable column order, three-decimal formatting, per-column best
# marking, and byte-stable CSV <-> JSON round trips.
rows = [
    MetricRow("baseline A", {"subject-sim": 0.223, "image-sim": 0.743,
                             "text-sim-simple": 0.266, "text-sim-detailed": 0.299}),
    MetricRow("baseline B", {"subject-sim": 0.446, "image-sim": 0.806,
                             "text-sim-simple": 0.281, "text-sim-detailed": 0.283}),
    MetricRow("ours", {"subject-sim": 0.514, "image-sim": 0.869,
                       "text-sim-simple": 0.289, "text-sim-detailed": 0.308}),
]
print()
print(report(rows, format="text"))

# Reward scorers are opaque per-image callables behind the same registry.
registry = {"aesthetic-stub": Backend(name="aesthetic-stub", kind="reward",
                                      score=lambda img: float(img.mean()) - 0.5)}
print("reward:", round(reward_score(output, "aesthetic-stub", registry), 4))
