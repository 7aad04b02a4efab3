import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtlcf import diffcore as dc
from mtlcf.diffcore import Tensor


def _vec(x):
    return Tensor(np.asarray(x, dtype=float))


def test_relu_tanh_sigmoid_values():
    assert np.array_equal(dc.relu(_vec([-1.0, 0.0, 2.0])).values, [0.0, 0.0, 2.0])
    assert dc.tanh(_vec(0.0)).item() == 0.0
    assert dc.sigmoid(_vec(0.0)).item() == 0.5


def test_elementwise_dispatch_and_shape_errors():
    a, b = _vec([1.0, 2.0]), _vec([3.0, 4.0])
    assert np.array_equal(dc.elementwise("mul", a, b).values, [3.0, 8.0])
    assert np.array_equal(dc.elementwise("scale", a, 2.0).values, [2.0, 4.0])
    with pytest.raises(dc.ShapeError, match=r"\(2,\).*\(3,\)"):
        dc.add(a, _vec([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        dc.elementwise("cosh", a)


def test_matmul_identity_and_small_product():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(dc.matmul(Tensor(np.eye(2)), m).values, m.values)
    assert np.array_equal(dc.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]])).values, [[0.0]])
    with pytest.raises(dc.ShapeError):
        dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    naive = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                naive[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(dc.matmul(Tensor(a), Tensor(b)).values, naive, rtol=0, atol=1e-12)


def test_log_softmax_examples():
    ln2 = math.log(2.0)
    np.testing.assert_allclose(dc.log_softmax(_vec([0.0, 0.0])).values, [-ln2, -ln2], atol=1e-15)
    np.testing.assert_allclose(dc.log_softmax(_vec([1000.0, 1000.0])).values, [-ln2, -ln2], atol=1e-15)
    # ln(e / (e + 1)) and ln(1 / (e + 1)) evaluated directly
    e = math.e
    expected = [math.log(e / (e + 1)), math.log(1 / (e + 1))]
    np.testing.assert_allclose(dc.log_softmax(_vec([1.0, 0.0])).values, expected, atol=1e-12)
    np.testing.assert_allclose(expected, [-0.31326, -1.31326], atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_log_softmax_normalizes(x):
    y = dc.log_softmax(Tensor(x)).values
    np.testing.assert_allclose(np.exp(y).sum(axis=-1), 1.0, atol=1e-9)


def test_backward_simple_sums():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    dc.backward(dc.sum(w))
    assert np.array_equal(w.grad, [1.0, 1.0, 1.0])
    w = Tensor([1.0, 2.0], requires_grad=True)
    dc.backward(dc.sum(w * w))
    assert np.array_equal(w.grad, [2.0, 4.0])


def test_backward_twice_rejected():
    w = Tensor([1.0], requires_grad=True)
    loss = dc.sum(w * w)
    dc.backward(loss)
    with pytest.raises(dc.BackwardError):
        dc.backward(loss)


def test_backward_needs_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(dc.BackwardError):
        dc.backward(w * w)


def test_frozen_leaf_never_gets_a_buffer():
    frozen = Tensor(np.ones((2, 2)))
    live = Tensor(np.ones((2, 2)), requires_grad=True)
    dc.backward(dc.sum(dc.tanh(dc.matmul(frozen, live))))
    assert frozen.grad is None
    assert live.grad is not None


def test_no_grad_records_nothing():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with dc.no_grad():
        out = dc.sum(w * w)
    assert not out.requires_grad


def test_topological_order_inputs_first():
    x = Tensor([1.0, 2.0], requires_grad=True)
    a = dc.tanh(x)
    b = dc.exp(a)
    loss = dc.sum(a * b)
    order = dc.topological_order(loss)
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for parent in node._parents:
            assert pos[id(parent)] < pos[id(node)]
    assert len(order) == len({id(n) for n in order})


def test_fd_of_sum_is_exact():
    # f is linear, so any step is exact up to roundoff; a coarse step keeps roundoff below 1e-12
    x = np.random.default_rng(0).uniform(-2, 2, size=(4,))
    assert dc.finite_difference_check(dc.sum, x, eps=2.0**-6) <= 1e-12


def test_fd_log_softmax_index():
    err = dc.finite_difference_check(lambda t: dc.log_softmax(t)[0], np.array([1.0, 0.0]))
    assert err < 1e-6


def _composite(t):
    a = dc.sigmoid(t[:, :2]) * dc.tanh(t[:, 2:])
    b = dc.relu(dc.matmul(a, dc.exp(dc.scale(t[:2, :2], 0.5))))
    c = dc.log(dc.exp(b) + 1.0)
    d = dc.log_softmax(dc.concat([c, a], axis=1))
    return dc.sum(dc.stack([d[0], d[1]]) - dc.reshape(d[:2], (2, 4)) * 0.5)


OPS = {
    "add": lambda t: dc.sum(dc.add(t, t * t)),
    "sub": lambda t: dc.sum(dc.sub(t * t, dc.tanh(t))),
    "mul": lambda t: dc.sum(dc.mul(t, dc.sigmoid(t))),
    "scale": lambda t: dc.sum(dc.scale(t * t, -1.7)),
    "tanh": lambda t: dc.sum(dc.tanh(t) * t),
    "sigmoid": lambda t: dc.sum(dc.sigmoid(t) * t),
    "relu": lambda t: dc.sum(dc.relu(t) * t),
    "exp": lambda t: dc.sum(dc.exp(t)),
    "log": lambda t: dc.sum(dc.log(t * t + 1.0)),
    "matmul": lambda t: dc.sum(dc.tanh(dc.matmul(t, dc.scale(t, 0.3)))),
    "affine": lambda t: dc.sum(dc.tanh(dc.affine(t, t, t[0]))),
    "log_softmax": lambda t: dc.log_softmax(t)[1, 2],
    "composite": _composite,
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradients_match_central_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(5):
        x = rng.uniform(-2, 2, size=(4, 4))
        if name == "relu":
            x[np.abs(x) < 1e-3] = 0.5  # stay away from the kink
        assert dc.finite_difference_check(OPS[name], x) < 1e-6


def test_determinism_bit_identical():
    x = np.random.default_rng(1).uniform(-2, 2, size=(4, 4))
    first = _composite(Tensor(x)).values
    second = _composite(Tensor(x)).values
    assert first.tobytes() == second.tobytes()
