import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctcattn.errors import InconsistencyError, InvalidArgument
from ctcattn.numeric import Parameter, SeededRng, finite_diff_check, layer_norm, linear_map, softmax_row
from ctcattn.numeric import tensor as T_

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_row([0, 0, 0]), [1 / 3] * 3, atol=1e-15)


def test_softmax_two():
    # 1 / (1 + e) evaluated with mpmath at 30 digits: 0.268941421369995120748...
    np.testing.assert_allclose(softmax_row([1, 2]), [0.26894142137, 0.73105857863], atol=1e-5)


def test_softmax_empty():
    with pytest.raises(InvalidArgument):
        softmax_row([])


@given(arrays(np.float64, st.integers(1, 20), elements=finite), finite)
def test_softmax_normalized_and_shift_invariant(x, c):
    p = softmax_row(x)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-12
    np.testing.assert_allclose(softmax_row(x + c), p, atol=1e-12)


def test_linear_map_identity_and_zero(rng):
    x = rng.normal(size=4)
    np.testing.assert_array_equal(linear_map(np.eye(4), np.zeros(4), x), x)
    b0 = rng.normal(size=3)
    np.testing.assert_array_equal(linear_map(np.zeros((3, 4)), b0, x), b0)


def test_linear_map_random(rng):
    W, b, x = rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=2)
    expected = [sum(W[c, d] * x[d] for d in range(2)) + b[c] for c in range(3)]
    np.testing.assert_allclose(linear_map(W, b, x), expected, atol=1e-14)


def test_linear_map_mismatch():
    with pytest.raises(InvalidArgument):
        linear_map(np.zeros((3, 2)), np.zeros(3), np.zeros(4))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_linear_map_additive_homogeneous(seed):
    r = np.random.default_rng(seed)
    W = r.normal(size=(3, 5))
    x, y, a = r.normal(size=5), r.normal(size=5), r.normal()
    z = np.zeros(3)
    np.testing.assert_allclose(linear_map(W, z, x + y), linear_map(W, z, x) + linear_map(W, z, y), atol=1e-12)
    np.testing.assert_allclose(linear_map(W, z, a * x), a * linear_map(W, z, x), atol=1e-12)


def test_layer_norm_cases(rng):
    np.testing.assert_array_equal(layer_norm(np.full(5, 3.0), np.ones(5), np.zeros(5)), np.zeros(5))
    np.testing.assert_allclose(layer_norm([1.0, -1.0], np.ones(2), np.zeros(2), eps=1e-15), [1, -1], atol=1e-12)
    y = layer_norm(rng.normal(5, 3, size=64), np.ones(64), np.zeros(64), eps=1e-12)
    assert abs(y.mean()) <= 1e-9
    assert abs(y.var() - 1) <= 1e-6
    with pytest.raises(InvalidArgument):
        layer_norm([1.0], [1.0], [0.0], eps=0)


def test_seeded_rng_streams():
    a = SeededRng(7).stream("init").normal(size=5)
    b = SeededRng(7).stream("init").normal(size=5)
    c = SeededRng(7).stream("data").normal(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_parameter_zero_grad():
    p = Parameter(np.ones((2, 3)))
    p.grad += 5
    p.zero_grad()
    assert p.grad.shape == p.shape and not p.grad.any()


def test_gradcheck_quadratic_and_linear(rng):
    x = Parameter(rng.normal(size=6), "x")
    assert finite_diff_check(lambda: (x * x).sum() * 0.5, [x], 1e-5) <= 1e-8
    a = rng.normal(size=6)
    out = (x * a).sum()
    out.backward()
    np.testing.assert_array_equal(x.grad, a)
    assert finite_diff_check(lambda: (x * a).sum(), [x], 1e-5) <= 1e-8


def test_gradcheck_detects_nondeterminism():
    x = Parameter(np.ones(2))
    calls = iter(range(100))
    with pytest.raises(InconsistencyError):
        finite_diff_check(lambda: (x * x).sum() + next(calls), [x])


@pytest.mark.parametrize(
    "build",
    [
        lambda a, b, r: (T_.softmax(a @ b.transpose(1, 0), axis=-1) * r[:3]).sum(),
        lambda a, b, r: T_.log_softmax(a * 2.0 + 1.0).sum(),
        lambda a, b, r: (T_.layer_norm(a, b[0], b[1]) * r[:4]).sum(),
        lambda a, b, r: T_.relu(a - 0.1).sum(),
        lambda a, b, r: T_.max_over(T_.stack([a, b[:3] * 1.5]), axis=0)[0].sum(),
        lambda a, b, r: (T_.log(T_.softmax(a, mask=np.array([True, False, True, True])), floor=1e-30) * r[:4]).sum(),
        lambda a, b, r: T_.pick(a, [0, 2, 3]).sum() + T_.concat([a, b], axis=0).transpose(1, 0).reshape(-1).sum(),
        lambda a, b, r: T_.embedding(b, [0, 0, 2]).sum() * a[1, 1],
    ],
)
def test_tensor_ops_gradcheck(build):
    r = np.random.default_rng(0)
    a = Parameter(r.normal(size=(3, 4)), "a")
    b = Parameter(r.normal(size=(3, 4)), "b")
    consts = r.normal(size=8)
    assert finite_diff_check(lambda: build(a, b, consts), [a, b], 1e-6) <= 1e-6


@given(arrays(np.float64, (3, 5), elements=finite))
def test_tensor_ops_stay_finite(x):
    t = T_.Tensor(x)
    for out in (T_.softmax(t), T_.log_softmax(t), T_.layer_norm(t, T_.Tensor(np.ones(5)), T_.Tensor(np.zeros(5)))):
        assert np.all(np.isfinite(out.data))
