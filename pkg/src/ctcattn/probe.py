"""Classify source-target attention outputs with the CTC classifier.

For each decoder layer, head and output step ``i`` the attention weights
are applied to the raw encoder rows (no value projection) to give a
context vector ``d_i``. Running ``d_i`` through the CTC classifier tells us
which token the head is looking at; that token is then placed relative to
step ``i`` in the reference transcript.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ctc import CtcClassifier
from .errors import InvalidArgument
from .numeric import linear_map, softmax_row

EPSILON = "epsilon"
FORWARD = "forward"
PRESENT = "present"
BACKWARD = "backward"
OFF_TARGET = "off_target"
CATEGORIES = (EPSILON, FORWARD, PRESENT, BACKWARD, OFF_TARGET)

_MARKERS = {EPSILON: "", FORWARD: ">", PRESENT: "=", BACKWARD: "<", OFF_TARGET: "?"}


@dataclass(frozen=True)
class HeadClassification:
    layer: int
    head: int
    step: int
    token: int
    posterior: float
    category: str
    matched_position: int | None = None


@dataclass
class ProbeReport:
    utterance_id: str
    targets: list[int]
    cells: list[list[HeadClassification]]  # [step][layer * heads + head]
    num_layers: int
    num_heads: int
    predictions: list[int] | None = None

    def cell(self, step: int, layer: int, head: int) -> HeadClassification:
        return self.cells[step][layer * self.num_heads + head]

    def iter_cells(self):
        for row in self.cells:
            yield from row

    def category_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(CATEGORIES, 0)
        for c in self.iter_cells():
            counts[c.category] += 1
        return counts


@dataclass
class LayerStats:
    layer: int
    mean: float
    std: float
    counts: list[int] = field(default_factory=list)


def _encoder_rows(encoder_out) -> np.ndarray:
    h = getattr(encoder_out, "h", encoder_out)
    return np.asarray(getattr(h, "data", h), dtype=np.float64)


def attention_context(weights_row, encoder_out, tol: float = 1e-4) -> np.ndarray:
    """Convex combination of encoder rows under one head's weights at one step."""
    w = np.asarray(weights_row, dtype=np.float64)
    h = _encoder_rows(encoder_out)
    if w.ndim != 1 or w.shape[0] != h.shape[0]:
        raise InvalidArgument(f"weights of shape {w.shape} do not match {h.shape[0]} frames")
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise InvalidArgument("attention weights must be nonnegative and sum to one")
    return (w[:, None] * h).sum(axis=0)


def head_posterior(classifier: CtcClassifier, d) -> np.ndarray:
    return softmax_row(linear_map(classifier.W.data, classifier.b.data, np.asarray(d)))


def classify_head(posterior) -> tuple[int, float]:
    p = np.asarray(posterior)
    token = int(np.argmax(p))
    return token, float(p[token])


def categorize_prediction(token: int, step: int, targets: Sequence, blank_id) -> tuple[str, int | None]:
    """Place a head's predicted token relative to output step ``step``.

    The nearest occurrence of ``token`` in ``targets`` is used; equidistant
    occurrences resolve to the later one.
    """
    if len(targets) == 0:
        raise InvalidArgument("targets must be nonempty")
    if token == blank_id:
        return EPSILON, None
    positions = [j for j, t in enumerate(targets) if t == token]
    if not positions:
        return OFF_TARGET, None
    j = min(positions, key=lambda p: (abs(p - step), -p))
    if j > step:
        return FORWARD, j
    if j == step:
        return PRESENT, j
    return BACKWARD, j


def probe_utterance(forward_output, classifier: CtcClassifier, targets: Sequence[int],
                    utterance_id: str = "", predictions: Sequence[int] | None = None) -> ProbeReport:
    """Probe every (step, layer, head) for the first ``len(targets)`` decoder steps."""
    record = forward_output.attention
    h = _encoder_rows(forward_output.encoder_out)
    targets = [int(t) for t in targets]
    n_steps = len(targets)
    weights = record.as_array()  # layers x heads x L_out x T
    if weights.shape[2] < n_steps:
        raise InvalidArgument(f"attention covers {weights.shape[2]} steps, need {n_steps}")
    blank = classifier.blank_id
    cells = []
    for i in range(n_steps):
        row = []
        for layer in range(weights.shape[0]):
            for head in range(weights.shape[1]):
                d = attention_context(weights[layer, head, i], h)
                token, post = classify_head(head_posterior(classifier, d))
                category, match = categorize_prediction(token, i, targets, blank)
                row.append(HeadClassification(layer, head, i, token, post, category, match))
        cells.append(row)
    return ProbeReport(utterance_id, targets, cells, weights.shape[0], weights.shape[1],
                       None if predictions is None else [int(p) for p in predictions])


def _population_stats(counts: Sequence[int]) -> tuple[float, float]:
    arr = np.asarray(counts, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def layer_unique_token_stats(reports: Sequence[ProbeReport]) -> list[LayerStats]:
    """Per layer: distinct argmax tokens (blank included) over all heads and steps of an utterance."""
    reports = list(reports)
    if not reports:
        raise InvalidArgument("need at least one report")
    num_layers = reports[0].num_layers
    per_layer: list[list[int]] = [[] for _ in range(num_layers)]
    for rep in reports:
        seen: list[set[int]] = [set() for _ in range(num_layers)]
        for c in rep.iter_cells():
            seen[c.layer].add(c.token)
        for layer in range(num_layers):
            per_layer[layer].append(len(seen[layer]))
    out = []
    for layer, counts in enumerate(per_layer):
        mean, std = _population_stats(counts)
        out.append(LayerStats(layer, mean, std, counts))
    return out


def render_report(report: ProbeReport, posterior_threshold: float = 0.0,
                  token_name: Callable[[int], str] = str) -> str:
    """Tab-separated grid in the layout of a per-head prediction table.

    Columns: ground truth, model prediction, then ``L<layer>H<head>`` per
    head and a ``marks`` column listing each non-blank cell's category
    (``>`` forward, ``=`` present, ``<`` backward, ``?`` off-target).
    Blank-classified cells and cells under ``posterior_threshold`` are empty.
    """
    if not 0.0 <= posterior_threshold <= 1.0:
        raise InvalidArgument("posterior_threshold must be in [0, 1]")
    heads = [f"L{layer + 1}H{head + 1}" for layer in range(report.num_layers)
             for head in range(report.num_heads)]
    buf = io.StringIO()
    buf.write("\t".join(["ground_truth", "prediction", *heads, "marks"]) + "\n")
    for i, row in enumerate(report.cells):
        truth = token_name(report.targets[i])
        pred = ""
        if report.predictions is not None and i < len(report.predictions):
            pred = token_name(report.predictions[i])
        texts, marks = [], []
        for c in row:
            shown = c.category != EPSILON and c.posterior >= posterior_threshold
            texts.append(token_name(c.token) if shown else "")
            marks.append(_MARKERS[c.category] if shown else "")
        buf.write("\t".join([truth, pred, *texts, "".join(m or "." for m in marks)]) + "\n")
    return buf.getvalue()


def present_fraction(reports: Sequence[ProbeReport]) -> float:
    total = present = 0
    for rep in reports:
        for c in rep.iter_cells():
            total += 1
            present += c.category == PRESENT
    return present / total if total else 0.0
