"""Subject- and style-fidelity metric suite with pluggable encoders.

Scores are cosine similarities in pluggable embedding spaces (small
nets trained on the synthetic scenes at desk scale; real encoders drop
in behind the same backend interface).  Rows aggregate into tables with
an overall-mean column and per-column best marking, rendered as text,
CSV or JSON with three-decimal formatting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParameterError

__all__ = ["KINDS", "Backend", "MetricRow", "cosine", "subject_fidelity",
           "style_fidelity", "reward_score", "report", "csv_to_json", "json_to_csv",
           "format_score"]

KINDS = ("subject-sim", "image-sim", "text-sim", "style-sim", "reward")


@dataclass
class Backend:
    """One embedding (or scoring) backend.

    kind "text-sim" backends embed both images and text into a joint
    space; "reward" backends score an image directly.
    """

    name: str
    kind: str
    embed_image: object = None
    embed_text: object = None
    score: object = None
    version: str = "unversioned"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown backend kind {self.kind!r}; known: {KINDS}")


def cosine(u, v) -> float:
    """Cosine similarity, clipped into [-1, 1]."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ParameterError(f"cosine shapes differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ParameterError("cosine is undefined for zero vectors")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass
class MetricRow:
    label: str
    scores: dict = field(default_factory=dict)   # metric name -> value, insertion order

    @property
    def overall_mean(self) -> float:
        if not self.scores:
            raise ParameterError("metric row has no scores")
        return float(sum(self.scores.values()) / len(self.scores))


def format_score(value: float) -> str:
    """Three-decimal table formatting (round half away from zero)."""
    import decimal
    d = decimal.Decimal(repr(float(value))).quantize(
        decimal.Decimal("0.001"), rounding=decimal.ROUND_HALF_UP)
    return f"{d:.3f}"


def _require(backends: dict, kind: str) -> Backend:
    try:
        return backends[kind]
    except KeyError:
        raise ConfigurationError(
            f"no backend of kind {kind!r} configured; have {sorted(backends)}") from None


def subject_fidelity(output, subject_ref, simple_prompt: str, detailed_prompt: str,
                     backends: dict, label: str = "ours") -> MetricRow:
    """Four subject-fidelity scores plus their mean.

    subject-sim and image-sim compare the output to the subject
    reference in the respective embedding spaces; the two text scores
    compare the output's joint-space embedding to a simple and a
    detailed description of the subject.
    """
    subj = _require(backends, "subject-sim")
    img = _require(backends, "image-sim")
    txt = _require(backends, "text-sim")
    out_txt_emb = txt.embed_image(output)
    row = MetricRow(label=label)
    row.scores["subject-sim"] = cosine(subj.embed_image(output), subj.embed_image(subject_ref))
    row.scores["image-sim"] = cosine(img.embed_image(output), img.embed_image(subject_ref))
    row.scores["text-sim-simple"] = cosine(out_txt_emb, txt.embed_text(simple_prompt))
    row.scores["text-sim-detailed"] = cosine(out_txt_emb, txt.embed_text(detailed_prompt))
    return row


def style_fidelity(output, style_ref, style_prompt: str, backends: dict,
                   label: str = "ours") -> MetricRow:
    """Three style-fidelity scores plus their mean."""
    img = _require(backends, "image-sim")
    sty = _require(backends, "style-sim")
    txt = _require(backends, "text-sim")
    row = MetricRow(label=label)
    row.scores["image-sim"] = cosine(img.embed_image(output), img.embed_image(style_ref))
    row.scores["style-sim"] = cosine(sty.embed_image(output), sty.embed_image(style_ref))
    row.scores["text-sim"] = cosine(txt.embed_image(output), txt.embed_text(style_prompt))
    return row


def reward_score(output, scorer_name: str, registry: dict) -> float:
    """Pass an image through a registered reward scorer."""
    scorers = {name: b for name, b in registry.items() if b.kind == "reward"}
    if scorer_name not in scorers:
        raise ConfigurationError(
            f"reward scorer {scorer_name!r} not registered; registered: {sorted(scorers)}")
    return float(scorers[scorer_name].score(output))


# -- report rendering ----------------------------------------------------------

MEAN_COLUMN = "overall-mean"


def _table(rows, include_mean: bool = True):
    if not rows:
        raise ParameterError("report needs at least one row")
    columns = list(rows[0].scores.keys())
    for row in rows[1:]:
        if list(row.scores.keys()) != columns:
            raise ParameterError("metric rows have inconsistent columns")
    if include_mean:
        columns = columns + [MEAN_COLUMN]
    cells = []
    for row in rows:
        values = dict(row.scores)
        if include_mean:
            values[MEAN_COLUMN] = row.overall_mean
        cells.append({"method": row.label, "values": values})
    best = {}
    for col in columns:
        best_row = max(cells, key=lambda c: c["values"][col])
        best[col] = best_row["method"]
    formatted = [{"method": c["method"],
                  "values": {col: format_score(c["values"][col]) for col in columns}}
                 for c in cells]
    return {"v": 1, "columns": columns, "rows": formatted, "best": best}


def report(rows, format: str = "text", include_mean: bool = True) -> str:
    """Render metric rows; best value per column is marked.

    Formats: "text" (aligned, best suffixed with *), "csv", "json".
    CSV and JSON rendering round-trip byte-stably through each other.
    """
    table = _table(rows, include_mean)
    if format == "json":
        return json.dumps(table, indent=2, sort_keys=True)
    if format == "csv":
        return _render_csv(table)
    if format == "text":
        return _render_text(table)
    raise ParameterError(f"unknown report format {format!r}")


def _render_csv(table: dict) -> str:
    lines = [",".join(["method"] + table["columns"])]
    for row in table["rows"]:
        cells = [row["method"]]
        for col in table["columns"]:
            value = row["values"][col]
            mark = "*" if table["best"][col] == row["method"] else ""
            cells.append(value + mark)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _render_text(table: dict) -> str:
    header = ["method"] + table["columns"]
    body = []
    for row in table["rows"]:
        cells = [row["method"]]
        for col in table["columns"]:
            mark = "*" if table["best"][col] == row["method"] else " "
            cells.append(row["values"][col] + mark)
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for cells in body:
        out.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip())
    return "\n".join(out) + "\n"


def csv_to_json(text: str) -> str:
    lines = [line for line in text.splitlines() if line]
    if not lines:
        raise ParameterError("empty CSV report")
    header = lines[0].split(",")
    columns = header[1:]
    rows, best = [], {}
    for line in lines[1:]:
        cells = line.split(",")
        method = cells[0]
        values = {}
        for col, cell in zip(columns, cells[1:]):
            if cell.endswith("*"):
                best[col] = method
                cell = cell[:-1]
            values[col] = cell
        rows.append({"method": method, "values": values})
    return json.dumps({"v": 1, "columns": columns, "rows": rows, "best": best},
                      indent=2, sort_keys=True)


def json_to_csv(text: str) -> str:
    return _render_csv(json.loads(text))
