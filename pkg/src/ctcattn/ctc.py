"""CTC classifier, log-space forward-backward loss, greedy decoding and a brute-force oracle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleAlignment, InvalidArgument
from .numeric import CTC, Parameter, Tensor, linear_map, logsumexp
from .numeric import tensor as T_

BRUTE_FORCE_LIMIT = 10**7


class CtcClassifier:
    """The single linear layer (plus softmax) that maps encoder frames to token posteriors.

    ``W`` and ``b`` accept gradient only from the CTC loss term.
    """

    def __init__(self, W, b, blank_id: int = 0):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise InvalidArgument(f"bad classifier shapes W {W.shape}, b {b.shape}")
        if not 0 <= blank_id < W.shape[0]:
            raise InvalidArgument(f"blank_id {blank_id} outside vocabulary of size {W.shape[0]}")
        self.W = Parameter(W, "ctc.W", update_mask={CTC})
        self.b = Parameter(b, "ctc.b", update_mask={CTC})
        self.blank_id = blank_id

    @classmethod
    def init(cls, vocab_size: int, d_model: int, rng: np.random.Generator, blank_id: int = 0):
        bound = 1.0 / np.sqrt(d_model)
        W = rng.uniform(-bound, bound, size=(vocab_size, d_model))
        return cls(W, np.zeros(vocab_size), blank_id)

    @property
    def vocab_size(self) -> int:
        return self.W.shape[0]

    @property
    def width(self) -> int:
        return self.W.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]

    def logits(self, x: Tensor, term: str = CTC) -> Tensor:
        """Differentiable logits for rows of ``x``; the parameters join the graph only for ``term``s they accept."""
        return x @ self.W.use(term).T + self.b.use(term)


@dataclass
class CtcLossResult:
    neg_log_likelihood: float
    grad: np.ndarray  # d NLL / d log_probs, shape T x C


def _frames_array(frames) -> np.ndarray:
    h = getattr(frames, "h", frames)
    if isinstance(h, Tensor):
        h = h.data
    return np.asarray(h, dtype=np.float64)


def frame_logits(classifier: CtcClassifier, frames) -> np.ndarray:
    h = _frames_array(frames)
    if h.ndim != 2 or h.shape[1] != classifier.width:
        raise InvalidArgument(f"frames of shape {h.shape} do not match classifier width {classifier.width}")
    return linear_map(classifier.W.data, classifier.b.data, h)


def min_frames(labels: Sequence[int]) -> int:
    """Shortest input that can emit ``labels``: one frame per label plus a blank between repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def is_feasible(labels: Sequence[int], n_frames: int) -> bool:
    return n_frames >= min_frames(labels)


def _check_inputs(log_probs, labels, blank_id):
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] == 0:
        raise InvalidArgument(f"log_probs must be a non-empty T x C matrix, got {lp.shape}")
    labels = [int(c) for c in labels]
    if blank_id in labels:
        raise InvalidArgument("labels must not contain the blank token")
    if any(not 0 <= c < lp.shape[1] for c in labels):
        raise InvalidArgument("label id outside vocabulary")
    return lp, labels


def ctc_loss(log_probs, labels: Sequence[int], blank_id: int = 0) -> CtcLossResult:
    lp, labels = _check_inputs(log_probs, labels, blank_id)
    n_frames = lp.shape[0]
    need = min_frames(labels)
    if n_frames < need:
        raise InfeasibleAlignment(f"{len(labels)} labels need at least {need} frames, got {n_frames}")

    ext = np.full(2 * len(labels) + 1, blank_id, dtype=np.int64)
    ext[1::2] = labels
    S = ext.size
    # s may jump from s-2 when ext[s] is a label differing from ext[s-2]
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank_id) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # T x S

    alpha = np.full((n_frames, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((n_frames, S), -np.inf)
    beta[-1, -1] = emit[-1, -1]
    if S > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]

    log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if S > 1 else alpha[-1, -1]
    occupancy = np.exp(alpha + beta - emit - log_z)
    grad = np.zeros_like(lp)
    for s in range(S):
        grad[:, ext[s]] -= occupancy[:, s]
    return CtcLossResult(float(-log_z), grad)


def ctc_loss_brute_force(log_probs, labels: Sequence[int], blank_id: int = 0) -> float:
    """NLL by enumerating every length-T token string (tiny instances only)."""
    lp, labels = _check_inputs(log_probs, labels, blank_id)
    n_frames, C = lp.shape
    if C**n_frames > BRUTE_FORCE_LIMIT:
        raise InvalidArgument(f"refusing to enumerate {C}^{n_frames} paths")
    target = tuple(labels)
    scores = []
    cols = np.arange(n_frames)
    for path in itertools.product(range(C), repeat=n_frames):
        collapsed = [c for k, c in enumerate(path) if k == 0 or c != path[k - 1]]
        if tuple(c for c in collapsed if c != blank_id) == target:
            scores.append(lp[cols, path].sum())
    if not scores:
        return float("inf")
    return float(-logsumexp(np.array(scores)))


def greedy_collapse_decode(log_probs, blank_id: int = 0) -> list[int]:
    best = np.argmax(np.asarray(log_probs), axis=1)
    out = []
    prev = None
    for c in best.tolist():
        if c != prev and c != blank_id:
            out.append(c)
        prev = c
    return out


def ctc_nll(log_probs: Tensor, labels: Sequence[int], blank_id: int = 0) -> Tensor:
    """Differentiable CTC negative log-likelihood of a T x C log-probability tensor."""
    res = ctc_loss(log_probs.data, labels, blank_id)
    grad = res.grad
    return T_.custom(np.array(res.neg_log_likelihood), (log_probs,), lambda g: (g * grad,))
