"""Bootstrapped domain adaptation: score, filter, retrain on own outputs.

Run:  python demos/demo_05_bootstrap_round.py [--full]

The full variant reproduces the photo->cartoon adaptation at fixture scale
(tens of minutes); the default shows the loop mechanics in under a minute.
"""

import sys

import numpy as np

from styledrag.bootstrap import (AdaptConfig, CandidateStore, StylizedItem,
                                 Threshold, TopK, auto_score, filter_candidates,
                                 generate_candidates, run_round)
from styledrag.pretrain import InsertionFixtureConfig, fixture_insertion_model
from styledrag.seeding import derive_seed
from styledrag.synthdata import CARTOON, gen_scene

full = "--full" in sys.argv
cache = "demos/_cache" if full else None
model = fixture_insertion_model(
    InsertionFixtureConfig(steps=InsertionFixtureConfig().steps if full else 60),
    cache_dir=cache)

# The stylized candidate set S: cartoon-domain scenes the photo-trained
# model has never seen.
items = [StylizedItem(id=f"cartoon-{i:02d}",
                      image=(s := gen_scene(CARTOON, derive_seed(1, "demo", i))).with_effects,
                      mask=s.mask)
         for i in range(12)]
candidates = generate_candidates(model, items, seed=3)
scores = np.array([c.score for c in candidates])
print(f"auto scores over {len(candidates)} candidates: "
      f"min {scores.min():.2f} median {np.median(scores):.2f} max {scores.max():.2f}")

# Filtering policies: threshold, top-k, or human verdicts.
print("threshold(0.7) keeps:", [c.id for c in filter_candidates(candidates, Threshold(0.7))])
print("top_k(3) keeps:     ", [c.id for c in filter_candidates(candidates, TopK(3))])

# Human review runs through the candidate store (the studio UI drives the
# same store over HTTP); verdicts are append-only events.
store = CandidateStore("demos/_out/candidates")
try:
    store.add(candidates, round_index=0)
except Exception:
    pass  # rerunning the demo: store already populated
store_entries = store.entries(0)
print("stored candidates:", len(store_entries),
      "pending:", sum(1 for e in store_entries if e["verdict"] == "pending"))

# One adaptation round: train only on the accepted subset S'; the audit log
# records every id the optimizer sampled.
adapted, rnd = run_round(model, items, TopK(6),
                         AdaptConfig(steps=40 if not full else 400, batch_size=4,
                                     lr=2e-4, seed=5), seed=3)
sampled = {i for entry in rnd.audit_log for i in entry["ids"]}
print(f"round {rnd.index}: |S|={len(rnd.source_ids)} |S'|={len(rnd.accepted_ids)}; "
      f"audit sampled only accepted ids: {sampled <= set(rnd.accepted_ids)}")
print("provenance rounds on the adapted model:", len(adapted.provenance["rounds"]))
