"""Joint CTC/attention/regularizer loss, optimizer, training loop and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..ctc import ctc_nll, is_feasible
from ..data import Dataset, Utterance, token_error_rate
from ..errors import NonFiniteLoss
from ..model import EncoderDecoder, ModelConfig
from ..numeric import Parameter, SeededRng, Tensor
from ..numeric import tensor as T_
from ..numeric.rng import get_state
from ..probe import ProbeReport, probe_utterance
from ..regularizer import reg_loss_for
from .checkpoint import save_checkpoint
from .config import TrainConfig

log = logging.getLogger(__name__)


@dataclass
class JointLossResult:
    loss: Tensor  # mean over kept utterances
    ctc: float
    ce: float
    reg: float
    num_tokens: int
    num_utterances: int
    skipped: list[str] = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.loss.item()


def utterance_losses(model: EncoderDecoder, utt: Utterance, lam: float, reg_classifier=None):
    """(L_CTC, L_CE, L_reg or None) for one utterance, each summed over its steps.

    ``reg_classifier`` replaces the model's CTC classifier inside the
    regularizer only (the gradient checker passes a frozen copy).
    """
    cfg = model.config
    enc = model.encode(utt.features)
    l_ctc = ctc_nll(model.ctc_log_probs(enc), utt.tokens, cfg.blank_id)
    fwd = model.decode_teacher_forced(enc, [cfg.sos_id, *utt.tokens])
    logp = T_.log_softmax(fwd.decoder_logits)
    l_ce = -T_.pick(logp, [*utt.tokens, cfg.eos_id]).sum()
    l_reg = None
    if lam > 0:
        l_reg = reg_loss_for(fwd, reg_classifier or model.ctc, utt.tokens, lam)
    return l_ctc, l_ce, l_reg


def joint_loss(batch: Sequence[Utterance], model: EncoderDecoder, config: TrainConfig,
               reg_classifier=None) -> JointLossResult:
    """Mean over utterances of ``alpha*L_CTC + (1-alpha)*L_CE + L_reg``.

    Utterances too short for their transcript under CTC are skipped with a
    warning. Call ``result.loss.backward()`` to accumulate gradients.
    """
    terms = []
    skipped = []
    sums = np.zeros(3)
    n_tokens = 0
    for utt in batch:
        n_frames = -(-len(utt.features) // model.config.downsample)
        if not is_feasible(utt.tokens, n_frames):
            log.warning("skipping %s: %d tokens cannot align to %d frames", utt.id, len(utt.tokens), n_frames)
            skipped.append(utt.id)
            continue
        l_ctc, l_ce, l_reg = utterance_losses(model, utt, config.lam, reg_classifier)
        total = l_ctc * config.alpha + l_ce * (1.0 - config.alpha)
        if l_reg is not None:
            total = total + l_reg
            sums[2] += l_reg.item()
        sums[0] += l_ctc.item()
        sums[1] += l_ce.item()
        n_tokens += len(utt.tokens)
        terms.append(total)
    n = len(terms)
    if n == 0:
        return JointLossResult(Tensor(0.0), 0.0, 0.0, 0.0, 0, 0, skipped)
    loss = terms[0]
    for t in terms[1:]:
        loss = loss + t
    loss = loss * (1.0 / n)
    return JointLossResult(loss, *(sums / n), n_tokens, n, skipped)


class Adam:
    """Adam with a step-dependent learning rate.

    Parameters whose gradient is exactly zero in a step are left untouched
    (including their moments), so a step driven by a loss that cannot reach
    a parameter never moves it.
    """

    def __init__(self, params: Sequence[Parameter], config: TrainConfig):
        self.params = list(params)
        self.config = config
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = [0] * len(self.params)

    def step(self) -> float:
        c = self.config
        self.step_count += 1
        lr = c.learning_rate(self.step_count)
        for k, p in enumerate(self.params):
            g = p.grad
            if not np.any(g):
                continue
            self.t[k] += 1
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            mhat = self.m[k] / (1 - c.beta1 ** self.t[k])
            vhat = self.v[k] / (1 - c.beta2 ** self.t[k])
            p.data -= lr * mhat / (np.sqrt(vhat) + c.adam_eps)
        return lr


@dataclass
class EpochRecord:
    epoch: int
    loss: float  # mean per utterance
    loss_per_token: float
    ctc: float
    ce: float
    reg: float


@dataclass
class TrainResult:
    model: EncoderDecoder
    history: list[EpochRecord]
    steps: int
    rng_state: dict

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.history]


def train(dataset: Dataset, model_config: ModelConfig, config: TrainConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Deterministic given ``config.seed``; persists a checkpoint when ``config.checkpoint_path`` is set."""
    model = EncoderDecoder(model_config, seed=config.seed)
    opt = Adam(model.parameters(), config)
    shuffle = SeededRng(config.seed).stream("shuffle")
    utts = list(dataset)
    history = []
    model.dropout_rng = SeededRng(config.seed).stream("dropout")
    try:
        history = _run_epochs(model, opt, shuffle, utts, config, on_epoch)
    finally:
        model.dropout_rng = None
    result = TrainResult(model, history, opt.step_count, get_state(shuffle))
    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, model, step=result.steps, rng_state=result.rng_state,
                        extra={"alpha": config.alpha, "lambda": config.lam, "seed": config.seed})
    return result


def _run_epochs(model, opt, shuffle, utts, config, on_epoch) -> list[EpochRecord]:
    history = []
    for epoch in range(config.epochs):
        order = shuffle.permutation(len(utts))
        totals = np.zeros(4)
        count = n_tokens = 0
        for start in range(0, len(order), config.batch_size):
            batch = [utts[i] for i in order[start : start + config.batch_size]]
            model.zero_grad()
            res = joint_loss(batch, model, config)
            if res.num_utterances == 0:
                continue
            if not math.isfinite(res.value):
                raise NonFiniteLoss(
                    f"epoch {epoch} step {opt.step_count + 1}: loss {res.value} "
                    f"(ctc={res.ctc}, ce={res.ce}, reg={res.reg})"
                )
            res.loss.backward()
            opt.step()
            k = res.num_utterances
            totals += np.array([res.value * k, res.ctc * k, res.ce * k, res.reg * k])
            count += k
            n_tokens += res.num_tokens
        mean = totals / max(count, 1)
        rec = EpochRecord(epoch, float(mean[0]), float(totals[0] / max(n_tokens, 1)), *map(float, mean[1:]))
        history.append(rec)
        log.info("epoch %d loss %.4f (ctc %.4f ce %.4f reg %.4f)", epoch, rec.loss, rec.ctc, rec.ce, rec.reg)
        if on_epoch is not None:
            on_epoch(rec)
    return history


@dataclass
class EvalResult:
    mean_ter: float
    per_utterance: list[tuple[str, list[int], list[int], float]]  # id, hyp, ref, ter


def evaluate(dataset: Dataset, model: EncoderDecoder) -> EvalResult:
    """Greedy-decode every utterance and score it against its transcript."""
    rows = []
    for utt in dataset:
        enc = model.encode(utt.features)
        hyp = model.decode_greedy(enc, max_len=enc.num_frames)
        rows.append((utt.id, hyp, list(utt.tokens), token_error_rate(hyp, utt.tokens)))
    mean = float(np.mean([r[3] for r in rows])) if rows else 0.0
    return EvalResult(mean, rows)


def probe_dataset(dataset: Dataset, model: EncoderDecoder) -> list[ProbeReport]:
    """Teacher-forced probe report per utterance; predictions are the decoder's per-step argmax."""
    reports = []
    for utt in dataset:
        fwd = model.forward(utt.features, utt.tokens)
        preds = np.argmax(fwd.decoder_logits.data, axis=1)[: len(utt.tokens)]
        reports.append(probe_utterance(fwd, model.ctc, utt.tokens, utt.id, preds))
    return reports
