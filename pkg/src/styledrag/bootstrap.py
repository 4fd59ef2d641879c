"""Bootstrapped domain adaptation for the insertion model.

Run the removal direction over a stylized candidate set, score each
predicted clean plate, keep only the convincing removals (automatically
or via human verdicts), and retrain the model on that accepted subset.
An audit log records every id sampled during retraining so the
"trained only on accepted pairs" guarantee is checkable.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import IncompleteReviewError, InvariantError, NotFoundError, ParameterError
from .images import content_hash, load_png, save_png
from .insertion import InsertionModel, InsertTrainConfig, remove_subject, train_insertion
from .seeding import derive_seed

__all__ = ["StylizedItem", "CandidatePair", "BootstrapRound", "ScoreConfig",
           "Threshold", "TopK", "Human", "parse_policy",
           "generate_candidates", "auto_score", "filter_candidates", "adapt",
           "run_round", "AdaptConfig", "CandidateStore"]

log = logging.getLogger(__name__)

VERDICTS = ("pending", "accepted", "rejected")


@dataclass
class StylizedItem:
    id: str
    image: np.ndarray
    mask: np.ndarray | None = None


@dataclass
class CandidatePair:
    id: str
    image: np.ndarray                  # stylized input x (subject present)
    mask: np.ndarray
    clean_pred: np.ndarray             # predicted clean plate y
    score: float = 0.0
    verdict: str = "pending"
    round_index: int = 0


@dataclass
class BootstrapRound:
    index: int
    source_ids: list
    accepted_ids: list
    model_before: str
    model_after: str
    filter_descriptor: dict
    audit_log: list = field(default_factory=list)

    def __post_init__(self):
        if not set(self.accepted_ids) <= set(self.source_ids):
            raise InvariantError("accepted set is not a subset of the source set")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScoreConfig:
    a: float = 4.0
    b: float = 40.0
    dilate_frac: float = 0.05          # dilation radius as a fraction of image side


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask > 0.5
    return ndimage.binary_dilation(mask > 0.5, iterations=radius)


def auto_score(pair: CandidatePair, cfg: ScoreConfig = ScoreConfig()) -> float:
    """Removal-quality proxy in [0, 1]: sigmoid(a - b * residual).

    The residual combines (1) the mean squared difference between the
    prediction and the input outside the dilated subject mask, where a
    clean removal should change nothing, and (2) a shadow-remnant term:
    the mean leftover darkening of the prediction, relative to its own
    background level, in the band around the subject's ground contact.
    """
    x = pair.image[..., :3].astype(np.float64)
    y = pair.clean_pred[..., :3].astype(np.float64)
    side = max(x.shape[:2])
    radius = max(1, int(round(cfg.dilate_frac * side)))
    dilated = _dilate(pair.mask, radius)
    outside = ~dilated
    r_out = float(((y - x) ** 2)[outside].mean()) if outside.any() else 0.0

    remnant = 0.0
    subject = pair.mask > 0.5
    band = dilated & ~subject
    ys_idx = np.nonzero(subject)[0]
    if ys_idx.size and band.any():
        contact_row = int(ys_idx.max())
        rows = np.arange(x.shape[0])
        band = band & (rows[:, None] >= contact_row - radius)
        if band.any():
            lum_y = y.mean(axis=-1)
            # per-row background reference: robust to sky/ground splits
            deficits = []
            for r in np.unique(np.nonzero(band)[0]):
                row_outside = outside[r]
                ref = float(np.median(lum_y[r, row_outside])) if row_outside.any() \
                    else float(np.median(lum_y[r]))
                deficits.append(np.maximum(0.0, ref - lum_y[r, band[r]]))
            remnant = float(np.concatenate(deficits).mean())
    r_total = r_out + remnant
    return float(1.0 / (1.0 + np.exp(-(cfg.a - cfg.b * r_total))))


def generate_candidates(m: InsertionModel, stylized_set, seed: int = 0,
                        round_index: int = 0,
                        score_cfg: ScoreConfig = ScoreConfig()) -> list:
    """One candidate pair per item via subject removal; items lacking a
    mask are skipped with a logged warning."""
    pairs = []
    for item in stylized_set:
        if item.mask is None:
            log.warning("skipping stylized item %s: no subject mask", item.id)
            continue
        y = remove_subject(m, item.image, item.mask,
                           seed=derive_seed(seed, "candidate", item.id))
        pair = CandidatePair(id=item.id, image=item.image, mask=item.mask,
                             clean_pred=y, round_index=round_index)
        pair.score = auto_score(pair, score_cfg)
        pairs.append(pair)
    return pairs


# -- filtering ---------------------------------------------------------------


@dataclass(frozen=True)
class Threshold:
    tau: float

    def describe(self):
        return {"kind": "threshold", "tau": self.tau}


@dataclass(frozen=True)
class TopK:
    k: int

    def describe(self):
        return {"kind": "top_k", "k": self.k}


@dataclass(frozen=True)
class Human:
    def describe(self):
        return {"kind": "human"}


def parse_policy(data: dict):
    kind = data.get("kind")
    if kind == "threshold":
        return Threshold(float(data["tau"]))
    if kind == "top_k":
        return TopK(int(data["k"]))
    if kind == "human":
        return Human()
    raise ParameterError(f"unknown filter policy {data!r}")


def filter_candidates(cands, policy) -> list:
    """Stable-by-id accepted subset under the given policy; idempotent."""
    cands = list(cands)
    if isinstance(policy, Threshold):
        kept = [c for c in cands if c.score >= policy.tau]
    elif isinstance(policy, TopK):
        if policy.k < 0:
            raise ParameterError("top_k needs k >= 0")
        ranked = sorted(cands, key=lambda c: (-c.score, c.id))
        kept = ranked[:policy.k]
    elif isinstance(policy, Human):
        pending = [c.id for c in cands if c.verdict == "pending"]
        if pending:
            raise IncompleteReviewError(pending)
        kept = [c for c in cands if c.verdict == "accepted"]
    else:
        raise ParameterError(f"unknown policy object {policy!r}")
    return sorted(kept, key=lambda c: c.id)


# -- adaptation ----------------------------------------------------------------


@dataclass
class AdaptConfig:
    steps: int = 400
    batch_size: int = 4
    lr: float = 3e-4
    seed: int = 0

    def to_train_config(self, dataset_id: str) -> InsertTrainConfig:
        return InsertTrainConfig(steps=self.steps, batch_size=self.batch_size,
                                 lr=self.lr, seed=self.seed, dataset_id=dataset_id)


def _pair_triplet(pair: CandidatePair):
    """Counterfactual triplet from (x, y, mask): the no-effects composite
    is the subject re-pasted onto the predicted clean plate."""
    subject = pair.mask[..., None] > 0.5
    no_effects = np.where(subject, pair.image[..., :3], pair.clean_pred[..., :3])
    return (pair.clean_pred[..., :3].astype(np.float32),
            no_effects.astype(np.float32),
            pair.image[..., :3].astype(np.float32),
            pair.mask.astype(np.float32))


def adapt(m: InsertionModel, accepted, cfg: AdaptConfig = AdaptConfig()) -> InsertionModel:
    """Fine-tune on accepted pairs only; returns the adapted copy.

    The input model is left untouched.  The new model's provenance
    gains a round record whose audit log lists every sampled id; the
    sampled ids are verified to be a subset of the accepted ids.
    """
    accepted = list(accepted)
    if not accepted:
        raise ParameterError("adapt needs a nonempty accepted set")
    before_hash = content_hash(m.to_bytes())
    adapted = m.clone()
    audit: list = []
    dataset = [_pair_triplet(p) for p in accepted]
    ids = [p.id for p in accepted]
    train_insertion(adapted, dataset, cfg.to_train_config(dataset_id="bootstrap"),
                    audit_log=audit, item_ids=ids)
    sampled = {i for entry in audit for i in entry["ids"]}
    if not sampled <= set(ids):
        raise InvariantError("adaptation sampled ids outside the accepted set")
    round_record = BootstrapRound(
        index=len(adapted.provenance["rounds"]),
        source_ids=ids,
        accepted_ids=ids,
        model_before=before_hash,
        model_after="",
        filter_descriptor={"kind": "preaccepted"},
        audit_log=audit,
    )
    round_record.model_after = content_hash(adapted.to_bytes())
    adapted.provenance["rounds"].append(round_record.to_json())
    adapted.last_round = round_record
    return adapted


def run_round(m: InsertionModel, stylized_set, policy,
              cfg: AdaptConfig = AdaptConfig(), seed: int = 0,
              score_cfg: ScoreConfig = ScoreConfig()):
    """generate -> filter -> adapt; returns (adapted model, round record)."""
    stylized_set = list(stylized_set)
    candidates = generate_candidates(m, stylized_set, seed=seed,
                                     round_index=0, score_cfg=score_cfg)
    accepted = filter_candidates(candidates, policy)
    adapted = adapt(m, accepted, cfg)
    round_record = adapted.last_round
    round_record.source_ids = [c.id for c in candidates]
    round_record.filter_descriptor = policy.describe()
    if not set(round_record.accepted_ids) <= set(round_record.source_ids):
        raise InvariantError("accepted ids escaped the candidate set")
    adapted.provenance["rounds"][-1] = round_record.to_json()
    return adapted, round_record


# -- candidate store -----------------------------------------------------------


class CandidateStore:
    """Directory-backed candidate set: PNGs + JSON index + verdict event log.

    Verdicts move pending -> accepted|rejected exactly once; accepted or
    rejected entries are immutable afterwards.  Index writes are atomic
    (tempfile + rename) and guarded by a process-local lock.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.json"
        self.events_path = self.root / "events.jsonl"
        self._lock = threading.Lock()
        if not self.index_path.exists():
            self._write_index({"v": 1, "candidates": []})

    def _write_index(self, data: dict):
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True))
        tmp.replace(self.index_path)

    def _read_index(self) -> dict:
        return json.loads(self.index_path.read_text())

    def add(self, pairs, round_index: int = 0):
        with self._lock:
            index = self._read_index()
            known = {c["id"] for c in index["candidates"]}
            for pair in pairs:
                if pair.id in known:
                    raise ParameterError(f"candidate id {pair.id} already stored")
                files = {}
                for kind, img in (("x", pair.image), ("y", pair.clean_pred)):
                    rel = f"round_{round_index}/{pair.id}_{kind}.png"
                    save_png(self.root / rel, img)
                    files[kind] = rel
                rel = f"round_{round_index}/{pair.id}_mask.png"
                save_png(self.root / rel, np.repeat(pair.mask[..., None], 3, axis=2))
                files["mask"] = rel
                index["candidates"].append({
                    "id": pair.id, "round": round_index, "files": files,
                    "score": pair.score, "verdict": pair.verdict,
                })
            self._write_index(index)

    def entries(self, round_index: int | None = None) -> list:
        cands = self._read_index()["candidates"]
        if round_index is not None:
            cands = [c for c in cands if c["round"] == round_index]
        return sorted(cands, key=lambda c: c["id"])

    def set_verdict(self, candidate_id: str, verdict: str, actor: str = "human"):
        if verdict not in ("accepted", "rejected"):
            raise ParameterError(f"verdict must be accepted|rejected, got {verdict!r}")
        with self._lock:
            index = self._read_index()
            for entry in index["candidates"]:
                if entry["id"] == candidate_id:
                    if entry["verdict"] != "pending":
                        raise ParameterError(
                            f"candidate {candidate_id} already {entry['verdict']}; "
                            "verdicts are immutable")
                    entry["verdict"] = verdict
                    self._write_index(index)
                    event = {"ts": time.time(), "id": candidate_id,
                             "verdict": verdict, "actor": actor}
                    with open(self.events_path, "a") as fh:
                        fh.write(json.dumps(event) + "\n")
                    return entry
            raise NotFoundError(f"candidate {candidate_id} not in store")

    def events(self) -> list:
        if not self.events_path.exists():
            return []
        return [json.loads(line) for line in self.events_path.read_text().splitlines() if line]

    def load_pairs(self, round_index: int | None = None) -> list:
        pairs = []
        for entry in self.entries(round_index):
            x = load_png(self.root / entry["files"]["x"])
            y = load_png(self.root / entry["files"]["y"])
            mask = load_png(self.root / entry["files"]["mask"])[..., 0]
            pairs.append(CandidatePair(id=entry["id"], image=x, mask=mask, clean_pred=y,
                                       score=entry["score"], verdict=entry["verdict"],
                                       round_index=entry["round"]))
        return pairs
