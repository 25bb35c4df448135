"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together at the
end of the pytest run (see conftest.py) and as each test finishes.
"""

import time

import numpy as np
import pytest

from ctcattn.ctc import CtcClassifier, ctc_loss, ctc_loss_brute_force, frame_logits, is_feasible
from ctcattn.data import SyntheticTaskConfig, decode_dataset, encode_dataset, generate_synthetic
from ctcattn.harness import evaluate, probe_dataset, train
from ctcattn.harness.checkpoint import decode_checkpoint, encode_checkpoint
from ctcattn.harness.config import TrainConfig
from ctcattn.harness.gradsuite import run_gradient_suite, tiny_problem
from ctcattn.harness.training import Adam
from ctcattn.model import AttentionRecord, EncoderDecoder, EncoderOutput, ForwardOutput, ModelConfig
from ctcattn.numeric import Tensor, log_softmax, softmax_row
from ctcattn.probe import BACKWARD, FORWARD, PRESENT, categorize_prediction, layer_unique_token_stats, \
    present_fraction, probe_utterance
from ctcattn.regularizer import attention_probability, focus_logits, per_head_logits, reg_loss_for

RESULTS: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_ctc_oracle_equivalence():
    r = np.random.default_rng(0)
    start = time.perf_counter()
    worst, cases = 0.0, 0
    while cases < 600:
        T, C, L = int(r.integers(1, 6)), int(r.integers(2, 4)), int(r.integers(0, 4))
        labels = [int(x) for x in r.integers(1, C, size=L)]
        if not is_feasible(labels, T):
            continue
        lp = log_softmax(r.normal(size=(T, C)) * 3)
        worst = max(worst, abs(ctc_loss(lp, labels).neg_log_likelihood - ctc_loss_brute_force(lp, labels)))
        cases += 1
    elapsed = time.perf_counter() - start
    record("CTC oracle equivalence", worst <= 1e-9 and elapsed < 10,
           f"{cases} cases, max |diff| {worst:.2e} (tol 1e-9), {elapsed:.2f} s (limit 10 s)")


def test_gradient_suite():
    start = time.perf_counter()
    errs = run_gradient_suite(seed=0, alpha=0.3, lam=0.1)
    elapsed = time.perf_counter() - start
    worst = max(errs.values())
    record("gradient suite", worst <= 1e-4 and elapsed < 60,
           f"{len(errs)} parameters, max rel err {worst:.2e} (tol 1e-4), {elapsed:.1f} s (limit 60 s)")


def test_stop_gradient():
    model, utt = tiny_problem(3)
    model.zero_grad()
    fwd = model.forward(utt.features, utt.tokens)
    reg_loss_for(fwd, model.ctc, utt.tokens, 0.1).backward()
    ctc_zero = not model.ctc.W.grad.any() and not model.ctc.b.grad.any()
    attn = max(float(np.abs(p.grad).max()) for name, p in model.named_parameters()
               if "src_attn" in name)
    before = model.ctc.W.data.tobytes(), model.ctc.b.data.tobytes()
    Adam(model.parameters(), TrainConfig()).step()
    unchanged = (model.ctc.W.data.tobytes(), model.ctc.b.data.tobytes()) == before
    record("stop-gradient", ctc_zero and attn > 1e-8 and unchanged,
           f"CTC grads all zero={ctc_zero}, max attention-path |grad| {attn:.2e}, CTC bytes unchanged={unchanged}")


def test_attention_normalization():
    r = np.random.default_rng(1)
    cfg = ModelConfig()
    worst_w = worst_q = 0.0
    blank_max = 0.0
    for k in range(100):
        model = EncoderDecoder(cfg, seed=k) if k % 10 == 0 else model
        T, L = int(r.integers(1, 30)), int(r.integers(1, 9))
        fwd = model.forward(r.normal(size=(T, cfg.feature_dim)), list(r.integers(3, cfg.vocab_size, size=L)))
        w = fwd.attention.as_array()
        worst_w = max(worst_w, float(np.abs(w.sum(-1) - 1).max()))
        assert w.min() >= 0
        q = attention_probability(focus_logits(per_head_logits(fwd.attention, fwd.encoder_out, model.ctc)),
                                  cfg.blank_id).data
        worst_q = max(worst_q, float(np.abs(q.sum(-1) - 1).max()))
        blank_max = max(blank_max, float(np.abs(q[:, cfg.blank_id]).max()))
    record("attention normalization", worst_w <= 1e-6 and worst_q <= 1e-12 and blank_max == 0.0,
           f"100 passes, max |row sum - 1| {worst_w:.1e} (tol 1e-6), q {worst_q:.1e} (tol 1e-12), "
           f"max |q_blank| {blank_max}")


def test_probe_consistency():
    r = np.random.default_rng(2)
    mismatches = 0
    for _ in range(100):
        T, D, C = int(r.integers(1, 10)), int(r.integers(1, 6)), int(r.integers(2, 8))
        h = r.normal(size=(T, D))
        W = r.normal(size=(C, D))
        if r.random() < 0.2:  # force exact ties in some cases
            W[1] = W[0]
        clf = CtcClassifier(W, r.normal(size=C) * (r.random() > 0.2))
        t = int(r.integers(T))
        fwd = ForwardOutput(None, AttentionRecord.from_array(np.eye(T)[t][None, None, None]), EncoderOutput(Tensor(h)))
        cell = probe_utterance(fwd, clf, [1]).cell(0, 0, 0)
        expected = int(np.argmax(softmax_row(frame_logits(clf, h)[t])))
        mismatches += cell.token != expected
    record("probe consistency", mismatches == 0, f"100 one-hot cases, {mismatches} mismatches")


def test_taxonomy_fidelity():
    words = "_i _know _they _are _bless _them".split()
    got = [
        categorize_prediction("_know", 0, words, "<eps>"),
        categorize_prediction("_are", 3, words, "<eps>"),
        categorize_prediction("_i", 2, words, "<eps>"),
    ]
    want = [(FORWARD, 1), (PRESENT, 3), (BACKWARD, 0)]
    record("taxonomy fidelity", got == want, f"got {got}")


# desk-scale training, shared by the training and layer-statistics criteria

TASK = dict(num_tokens=12, feature_dim=16, min_length=3, max_length=8, min_frames_per_token=2,
            max_frames_per_token=5, noise_std=0.1, seed=0)


@pytest.fixture(scope="module")
def desk():
    train_set = generate_synthetic(SyntheticTaskConfig(num_utterances=200, id_prefix="train", **TASK))
    test_set = generate_synthetic(SyntheticTaskConfig(num_utterances=50, id_prefix="test", **TASK))
    cfg = ModelConfig(vocab_size=train_set.vocab.size, feature_dim=16)
    start = time.perf_counter()
    runs = {}
    for lam in (0.0, 0.1):
        res = train(train_set, cfg, TrainConfig(lam=lam, epochs=100, seed=0))
        runs[lam] = dict(
            model=res.model,
            ter=evaluate(test_set, res.model).mean_ter,
            reports=probe_dataset(test_set, res.model),
        )
        runs[lam]["present"] = present_fraction(runs[lam]["reports"])
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_desk_scale_training(desk):
    runs, elapsed = desk
    base, reg = runs[0.0], runs[0.1]
    checks = [base["ter"] <= 0.10, reg["ter"] <= base["ter"] + 0.02, reg["present"] > base["present"],
              elapsed < 30 * 60]
    record("desk-scale training", all(checks),
           f"baseline TER {base['ter']:.4f} (<= 0.10: {checks[0]}), lambda=0.1 TER {reg['ter']:.4f} "
           f"(<= baseline+0.02: {checks[1]}), present fraction {base['present']:.4f} -> {reg['present']:.4f} "
           f"(increase: {checks[2]}), {elapsed / 60:.1f} min (limit 30)")


@pytest.mark.slow
def test_layer_statistics(desk):
    runs, _ = desk
    stats = layer_unique_token_stats(runs[0.0]["reports"])
    table = ", ".join(f"L{s.layer + 1} {s.mean:.2f}±{s.std:.2f}" for s in stats)
    record("layer statistics", stats[-1].mean >= stats[0].mean, f"unique tokens per layer: {table}")


def test_determinism_and_round_trips():
    ds = generate_synthetic(SyntheticTaskConfig(num_utterances=6, num_tokens=4, min_length=2, max_length=4,
                                                feature_dim=4))
    cfg = ModelConfig(enc_layers=1, dec_layers=1, heads=2, d_model=8, d_ff=16, vocab_size=ds.vocab.size,
                      feature_dim=4)
    a = train(ds, cfg, TrainConfig(epochs=2, batch_size=3, lam=0.1, seed=4))
    b = train(ds, cfg, TrainConfig(epochs=2, batch_size=3, lam=0.1, seed=4))
    same_history = a.losses == b.losses
    buf = encode_checkpoint(a.model, step=a.steps, rng_state=a.rng_state)
    ck = decode_checkpoint(buf)
    back = ck.build_model()
    ckpt_ok = all(p.data.astype(np.float32).tobytes() == q.data.astype(np.float32).tobytes()
                  for p, q in zip(a.model.parameters(), back.parameters()))
    ckpt_ok &= ck.step == a.steps and ck.rng_state == a.rng_state
    ds_back = decode_dataset(encode_dataset(ds))
    ds_ok = all(u.id == v.id and u.tokens == v.tokens and
                np.array_equal(u.features.astype(np.float32), v.features) for u, v in zip(ds, ds_back))
    record("determinism and round-trips", same_history and ckpt_ok and ds_ok,
           f"identical loss histories={same_history}, checkpoint round-trip={ckpt_ok}, dataset round-trip={ds_ok}")
