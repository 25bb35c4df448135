"""Finite-difference check of the full joint loss on a tiny model."""

from __future__ import annotations

from ..ctc import CtcClassifier
from ..data import Utterance
from ..model import EncoderDecoder, ModelConfig
from ..numeric import SeededRng, finite_diff_check
from .config import TrainConfig
from .training import joint_loss

TINY = dict(enc_layers=1, dec_layers=1, heads=2, d_model=8, d_ff=16, vocab_size=6, feature_dim=4)


def tiny_problem(seed: int = 0, n_frames: int = 6, n_tokens: int = 3):
    cfg = ModelConfig(**TINY)
    model = EncoderDecoder(cfg, seed=seed)
    rng = SeededRng(seed).stream("gradcheck")
    feats = rng.normal(size=(n_frames, cfg.feature_dim))
    # real tokens are ids 3..vocab_size-1; avoid adjacent repeats so T=6 stays feasible
    tokens = []
    while len(tokens) < n_tokens:
        t = int(rng.integers(3, cfg.vocab_size))
        if not tokens or t != tokens[-1]:
            tokens.append(t)
    return model, Utterance("gradcheck", feats, tokens)


def run_gradient_suite(seed: int = 0, alpha: float = 0.3, lam: float = 0.1, step: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter name for the joint loss.

    The regularizer sees the CTC classifier only as a constant, so the
    routed gradient of ``ctc.W``/``ctc.b`` is the derivative with the
    regularizer's copy held fixed. The numeric side mirrors that by handing
    the regularizer a frozen snapshot while the CTC branch is perturbed.
    """
    model, utt = tiny_problem(seed)
    config = TrainConfig(alpha=alpha, lam=lam)
    frozen = CtcClassifier(model.ctc.W.data.copy(), model.ctc.b.data.copy(), model.ctc.blank_id)
    per_param: dict[str, float] = {}
    finite_diff_check(lambda: joint_loss([utt], model, config, reg_classifier=frozen).loss,
                      model.parameters(), step, per_param=per_param)
    return per_param
