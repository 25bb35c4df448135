import math

import numpy as np
import pytest

from ctcattn.ctc import CtcClassifier, frame_logits
from ctcattn.errors import InvalidArgument
from ctcattn.model import AttentionRecord, EncoderOutput, ForwardOutput
from ctcattn.numeric import Parameter, Tensor, finite_diff_check, linear_map
from ctcattn.probe import attention_context
from ctcattn.regularizer import (
    PROB_FLOOR,
    RegConfig,
    attention_probability,
    focus_logits,
    per_head_logits,
    reg_loss_for,
    regularization_loss,
)


def test_reg_config():
    assert not RegConfig(0.0).active
    assert RegConfig(0.1).active
    assert not RegConfig(0.1, enabled=False).active
    with pytest.raises(InvalidArgument):
        RegConfig(-0.1)


def test_per_head_logits_one_hot_and_probe_composition(rng):
    T, D, C = 4, 3, 5
    h = rng.normal(size=(T, D))
    clf = CtcClassifier(rng.normal(size=(C, D)), rng.normal(size=C))
    onehot = np.eye(T)[[[[1, 3]]]]  # 1 layer, 1 head, 2 steps
    out = per_head_logits(AttentionRecord.from_array(onehot), Tensor(h), clf).data
    np.testing.assert_allclose(out[0, 0], frame_logits(clf, h)[[1, 3]], atol=1e-13)
    w = rng.dirichlet(np.ones(T), size=(1, 2, 3))
    out = per_head_logits(AttentionRecord.from_array(w), Tensor(h), clf).data
    for head in range(2):
        for i in range(3):
            ref = linear_map(clf.W.data, clf.b.data, attention_context(w[0, head, i], h))
            np.testing.assert_allclose(out[0, head, i], ref, atol=1e-12)


def test_focus_single_head_identity(rng):
    x = rng.normal(size=(1, 1, 3, 4))
    f = focus_logits(Tensor(x))
    np.testing.assert_array_equal(f.values.data, x[0, 0])
    assert not f.provenance.any()


def test_focus_brute_force_and_ties(rng):
    x = rng.normal(size=(2, 3, 2, 4))
    f = focus_logits(Tensor(x))
    for i in range(2):
        for c in range(4):
            cands = [(x[l, m, i, c], l, m) for l in range(2) for m in range(3)]
            best = max(v for v, _, _ in cands)
            assert f.values.data[i, c] == best
            first = next((l, m) for v, l, m in cands if v == best)
            assert tuple(f.provenance[i, c]) == first
    same = np.repeat(x[:1, :1], 3, axis=1)
    f = focus_logits(Tensor(same))
    assert not f.provenance.any()
    shifted = focus_logits(Tensor(x + 7.5))
    np.testing.assert_array_equal(shifted.provenance, focus_logits(Tensor(x)).provenance)


def test_focus_requires_heads():
    with pytest.raises(InvalidArgument):
        focus_logits(Tensor(np.zeros((0, 1, 2, 3))))


def _focus(values):
    v = np.asarray(values, dtype=float)
    return focus_logits(Tensor(v[None, None]))


def test_attention_probability_symmetry_and_exclusion():
    q = attention_probability(_focus([[1e6, 2.0, 2.0, 2.0]]), blank_id=0).data
    np.testing.assert_allclose(q, [[0, 1 / 3, 1 / 3, 1 / 3]], atol=1e-15)
    assert q[0, 0] == 0.0


def test_attention_probability_random_row(rng):
    v = rng.normal(size=4)
    q = attention_probability(_focus([v]), blank_id=0).data[0]
    e = [math.exp(x) for x in v[1:]]
    np.testing.assert_allclose(q[1:], [x / sum(e) for x in e], atol=1e-15)
    with pytest.raises(InvalidArgument):
        attention_probability(_focus([[1.0]]), 0)


def test_attention_probability_rows(rng):
    q = attention_probability(_focus(rng.normal(size=(6, 7)) * 20), blank_id=0).data
    assert np.all(q[:, 0] == 0)
    assert np.all(np.abs(q.sum(1) - 1) <= 1e-12)


def test_regularization_loss_values():
    q = np.array([[0, 0.2, 0.8], [0, 0.6, 0.4]])
    assert regularization_loss(Tensor(q), [2, 1], 0.5).item() == pytest.approx(-0.5 * (math.log(0.8) + math.log(0.6)),
                                                                                abs=1e-15)
    assert regularization_loss(Tensor(np.array([[0, 1.0, 0]])), [1], 0.3).item() == 0.0
    assert regularization_loss(Tensor(q), [2, 1], 0.0).item() == 0.0
    floor = regularization_loss(Tensor(np.array([[0, 0, 1.0]])), [1], 1.0).item()
    assert floor == pytest.approx(-math.log(PROB_FLOOR))


def test_regularization_loss_errors():
    q = Tensor(np.array([[0, 0.5, 0.5]]))
    with pytest.raises(InvalidArgument):
        regularization_loss(q, [1], -1.0)
    with pytest.raises(InvalidArgument):
        regularization_loss(q, [0], 1.0, blank_id=0)
    with pytest.raises(InvalidArgument):
        regularization_loss(q, [1, 2], 1.0)


def test_monotone_in_target_probability(rng):
    base = rng.normal(size=4)
    losses = []
    for boost in np.linspace(-3, 3, 13):
        v = base.copy()
        v[2] += boost
        q = attention_probability(_focus([v]), 0)
        losses.append(regularization_loss(q, [2], 1.0).item())
    assert all(a >= b for a, b in zip(losses, losses[1:]))


def _chain(rng, L=3, T=5, D=4, C=6):
    h = Parameter(rng.normal(size=(T, D)), "h")
    s = Parameter(rng.normal(size=(2, 2, L, T)), "scores")
    clf = CtcClassifier(rng.normal(size=(C, D)), rng.normal(size=C))
    from ctcattn.numeric import tensor as T_

    def loss(lam=0.3):
        w = T_.softmax(s, axis=-1)
        fwd = ForwardOutput(None, AttentionRecord([w[0], w[1]]), EncoderOutput(h))
        return reg_loss_for(fwd, clf, [3, 4, 5], lam)

    return h, s, clf, loss


def test_stop_gradient_and_zero_lambda(rng):
    h, s, clf, loss = _chain(rng)
    loss().backward()
    assert not clf.W.grad.any() and not clf.b.grad.any()
    assert np.abs(s.grad).max() > 1e-8 and np.abs(h.grad).max() > 1e-8
    for p in (h, s):
        p.zero_grad()
    loss(0.0).backward()
    assert not h.grad.any() and not s.grad.any()


def test_gradients_match_finite_differences(rng):
    h, s, clf, loss = _chain(rng)
    assert finite_diff_check(loss, [h, s], 1e-6) <= 1e-4
