"""CTC-based regularization of source-target attention.

Each head's context vector is scored by the CTC classifier; per output step
and token the best-scoring head's logit is kept ("focus"), normalized over
all non-blank tokens, and the target token's log-probability is penalized.
The classifier enters this graph as a constant, so the penalty never
updates it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ctc import CtcClassifier
from .errors import InvalidArgument
from .numeric import REG, Tensor
from .numeric import tensor as T_

PROB_FLOOR = 1e-30


@dataclass
class RegConfig:
    lam: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgument("lambda must be nonnegative")

    @property
    def active(self) -> bool:
        return self.enabled and self.lam > 0


@dataclass
class FocusLogits:
    values: Tensor  # L_out x C
    provenance: np.ndarray  # L_out x C x 2 of (layer, head)


def per_head_logits(attention, encoder_out, classifier: CtcClassifier) -> Tensor:
    """Classifier logits of every head's context: ``layers x heads x L_out x C``.

    ``attention`` is an AttentionRecord; gradient flows into the attention
    weights and the encoder rows but not the classifier.
    """
    h = getattr(encoder_out, "h", encoder_out)
    h = T_.as_tensor(h)
    layers = [T_.as_tensor(w) for w in attention.layers]
    if not layers:
        raise InvalidArgument("attention record is empty")
    weights = T_.stack(layers)  # layers x heads x L x T
    if weights.shape[-1] != h.shape[0]:
        raise InvalidArgument("attention width does not match encoder frames")
    contexts = weights @ h  # layers x heads x L x D
    return classifier.logits(contexts, term=REG)


def focus_logits(head_logits: Tensor) -> FocusLogits:
    """Elementwise max over all (layer, head); ties go to the lowest flat head index."""
    head_logits = T_.as_tensor(head_logits)
    if head_logits.ndim != 4 or head_logits.shape[0] * head_logits.shape[1] == 0:
        raise InvalidArgument("expected layers x heads x L x C logits with at least one head")
    n_layers, n_heads = head_logits.shape[:2]
    flat = head_logits.reshape(n_layers * n_heads, *head_logits.shape[2:])
    values, idx = T_.max_over(flat, axis=0)
    provenance = np.stack([idx // n_heads, idx % n_heads], axis=-1)
    return FocusLogits(values, provenance)


def attention_probability(focus: FocusLogits, blank_id: int) -> Tensor:
    """Softmax of focus logits over non-blank tokens; the blank column is exactly zero."""
    values = focus.values
    C = values.shape[-1]
    if C < 2:
        raise InvalidArgument("need at least one non-blank token")
    mask = np.ones(C, dtype=bool)
    mask[blank_id] = False
    return T_.softmax(values, axis=-1, mask=mask)


def regularization_loss(q: Tensor, targets: Sequence[int], lam: float, blank_id: int | None = None) -> Tensor:
    """``-lam * sum_i ln q[i, y_i]`` with probabilities floored at ``PROB_FLOOR``."""
    if lam < 0:
        raise InvalidArgument("lambda must be nonnegative")
    q = T_.as_tensor(q)
    targets = [int(t) for t in targets]
    if blank_id is not None and blank_id in targets:
        raise InvalidArgument("targets must not contain the blank token")
    if q.shape[0] < len(targets):
        raise InvalidArgument(f"q has {q.shape[0]} rows for {len(targets)} targets")
    if not targets:
        return Tensor(0.0)
    rows = q[: len(targets)] if q.shape[0] != len(targets) else q
    picked = T_.pick(rows, targets)
    return T_.log(picked, floor=PROB_FLOOR).sum() * (-lam)


def reg_loss_for(forward_output, classifier: CtcClassifier, targets: Sequence[int], lam: float) -> Tensor:
    """Full chain from a decoder forward pass to the penalty for one utterance."""
    logits = per_head_logits(forward_output.attention, forward_output.encoder_out, classifier)
    focus = focus_logits(logits)
    q = attention_probability(focus, classifier.blank_id)
    return regularization_loss(q, targets, lam, classifier.blank_id)
