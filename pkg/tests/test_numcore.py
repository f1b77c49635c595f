from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normshare import numcore as nc
from normshare.numcore import ContractError, DimensionError, ParameterError, Tensor


def T(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- spec examples ---------------------------------------------------------------------

def test_matmul_shape():
    a, b = T(np.ones((2, 3))), T(np.ones((3, 4)))
    assert nc.forward_op("matmul", a, b).shape == (2, 4)


def test_matmul_mismatch_names_op_and_shapes():
    with pytest.raises(DimensionError, match=r"matmul.*\(2, 3\).*\(2, 4\)"):
        nc.matmul(T(np.ones((2, 3))), T(np.ones((2, 4))))


def test_softmax_uniform():
    np.testing.assert_allclose(nc.softmax(T([0.0, 0.0, 0.0])).value, [1 / 3] * 3)


def test_tanh_at_zero_and_its_gradient():
    x = T([0.0])
    y = nc.tanh(x)
    assert y.value[0] == 0.0
    nc.backward(nc.sum_(y))
    assert x.grad[0] == 1.0


def test_dropout_rejects_bad_p(rng):
    for p in (-0.1, 1.0, 1.5):
        with pytest.raises(ParameterError):
            nc.forward_op("dropout", T(np.ones(3)), p=p, rng=rng)


def test_dropout_identity_when_not_training(rng):
    x = T(np.arange(5.0))
    np.testing.assert_array_equal(nc.dropout(x, 0.5, rng, training=False).value, x.value)


def test_dropout_is_inverted(rng):
    x = T(np.ones(200000), grad=False)
    y = nc.dropout(x, 0.2, rng, training=True).value
    kept = y[y != 0]
    np.testing.assert_allclose(kept, 1.25)
    assert abs(y.mean() - 1.0) < 0.01


def test_cross_entropy_uniform_logits():
    loss = nc.cross_entropy_loss(T(np.zeros((3, 4))), [0, 3, 1])
    assert loss.item() == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_confident():
    loss = nc.cross_entropy_loss(T([[10.0, -10.0]]), [0])
    assert loss.item() == pytest.approx(2.06e-9, rel=1e-2)


def test_cross_entropy_margin_limit():
    losses = [nc.cross_entropy_loss(T([[m, 0.0, 0.0]]), [0]).item() for m in (1, 5, 10, 20, 40)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-16


def test_cross_entropy_index_error():
    with pytest.raises(IndexError):
        nc.cross_entropy_loss(T(np.zeros((2, 4))), [0, 4])


def test_backward_sum():
    w = T([1.0, 2.0, 3.0])
    nc.backward(nc.sum_(w))
    np.testing.assert_array_equal(w.grad, [1, 1, 1])


def test_backward_square():
    w = T([1.0, 2.0])
    nc.backward(nc.sum_(nc.mul(w, w)))
    np.testing.assert_array_equal(w.grad, [2, 4])


def test_backward_requires_scalar():
    w = T([1.0, 2.0])
    with pytest.raises(ContractError):
        nc.backward(nc.tanh(w))


def test_gradient_check_linear_exact(rng):
    W = T(rng.normal(size=(3, 4)))
    x = Tensor(rng.normal(size=(2, 3)))
    assert nc.gradient_check(lambda: nc.sum_(nc.matmul(x, W)), [W]) < 1e-9


def test_gradient_check_two_point_stencil(rng):
    W = T(rng.normal(size=(3, 4)))
    x = Tensor(rng.normal(size=(2, 3)))
    assert nc.gradient_check(lambda: nc.sum_(nc.tanh(nc.matmul(x, W))), [W], h=1e-5, order=2) < 1e-6


def test_gradient_check_detects_nondeterminism(rng):
    W = T(rng.normal(size=(3,)))
    g = np.random.default_rng(0)
    with pytest.raises(ContractError):
        nc.gradient_check(lambda: nc.sum_(nc.dropout(W, 0.5, g, training=True)), [W])


def test_gradient_check_lstm_step(rng):
    # one LSTM step, input 4 -> hidden 5
    x = T(rng.normal(size=(1, 1, 4)))
    W = T(rng.uniform(-0.5, 0.5, size=(9, 20)))
    b = T(rng.uniform(-0.5, 0.5, size=(20,)))
    h0 = T(rng.normal(size=(1, 5)))
    c0 = T(rng.normal(size=(1, 5)))

    def loss():
        hs, h, c = nc.lstm(x, W, b, h0, c0)
        return nc.add(nc.sum_(nc.mul(h, h)), nc.sum_(c))

    assert nc.gradient_check(loss, [x, W, b, h0, c0]) < 1e-4


def test_adam_zero_grad_leaves_params():
    w = T([1.0, -2.0])
    w.grad = np.zeros(2)
    nc.adam_step([w], nc.AdamState(lr=0.1))
    np.testing.assert_array_equal(w.value, [1.0, -2.0])
    assert w.grad is None


def test_adam_first_step_is_lr_sized():
    w = T([0.0, 0.0, 0.0])
    w.grad = np.array([0.3, -7.0, 1e-3])
    nc.adam_step([w], nc.AdamState(lr=0.01))
    np.testing.assert_allclose(np.abs(w.value), 0.01, rtol=1e-4)
    np.testing.assert_array_equal(np.sign(w.value), [-1, 1, -1])


def test_adam_quadratic_converges():
    w = T([0.0])
    state = nc.AdamState(lr=0.1)
    for _ in range(2000):
        d = nc.add(w, Tensor(np.array([-3.0])))
        nc.backward(nc.sum_(nc.mul(d, d)))
        nc.adam_step([w], state)
    assert abs(w.value[0] - 3.0) < 0.01
    assert state.step == 2000


def test_adam_missing_gradient():
    with pytest.raises(ContractError):
        nc.adam_step([T([1.0])], nc.AdamState())


def test_adam_step_counter_increments():
    w = T([1.0])
    s = nc.AdamState()
    for k in range(1, 4):
        w.grad = np.ones(1)
        nc.adam_step([w], s)
        assert s.step == k


def test_no_grad_records_nothing():
    w = T([1.0, 2.0])
    with nc.no_grad():
        y = nc.tanh(w)
    assert y.node is None
    assert nc.grad_enabled()


def test_tape_topological_each_node_once():
    w = T([0.5, -0.5])
    a = nc.tanh(w)
    b = nc.mul(a, a)
    c = nc.add(b, a)
    tape = nc.backward(nc.sum_(c))
    orders = [n.order for n in tape.nodes]
    assert orders == sorted(orders)
    assert len(set(map(id, tape.nodes))) == len(tape.nodes)


# -- properties ------------------------------------------------------------------------

def _unary_cases(rng, shape):
    return rng.normal(size=shape)


OP_BUILDERS = {
    "matmul": lambda r, s: ([r.normal(size=(s[0], s[1])), r.normal(size=(s[1], s[2]))],
                            lambda a, b: nc.forward_op("matmul", a, b)),
    "add": lambda r, s: ([r.normal(size=s[:2]), r.normal(size=s[:2])], lambda a, b: nc.forward_op("add", a, b)),
    "add-bias": lambda r, s: ([r.normal(size=s[:2]), r.normal(size=s[1])], lambda a, b: nc.add(a, b)),
    "elementwise-multiply": lambda r, s: ([r.normal(size=s[:2]), r.normal(size=s[:2])],
                                          lambda a, b: nc.forward_op("elementwise-multiply", a, b)),
    "tanh": lambda r, s: ([r.normal(size=s[:2])], lambda a: nc.forward_op("tanh", a)),
    "sigmoid": lambda r, s: ([r.normal(size=s[:2])], lambda a: nc.forward_op("sigmoid", a)),
    "concat": lambda r, s: ([r.normal(size=s[:2]), r.normal(size=(s[0], s[2]))],
                            lambda a, b: nc.forward_op("concat", a, b, axis=1)),
    "slice": lambda r, s: ([r.normal(size=s[:2])], lambda a: nc.forward_op("slice", a, (slice(None), slice(0, 1)))),
    "softmax": lambda r, s: ([r.normal(size=s[:2])], lambda a: nc.forward_op("softmax", a)),
    "log-softmax": lambda r, s: ([r.normal(size=s[:2])], lambda a: nc.forward_op("log-softmax", a)),
    "embedding-lookup": lambda r, s: ([r.normal(size=s[:2])],
                                      lambda a: nc.forward_op("embedding-lookup", a, [0, s[0] - 1, 0])),
    "sum": lambda r, s: ([r.normal(size=s[:2])], lambda a: nc.forward_op("sum", a)),
    "mean": lambda r, s: ([r.normal(size=s[:2])], lambda a: nc.forward_op("mean", a)),
}


@pytest.mark.parametrize("kind", sorted(OP_BUILDERS))
def test_catalogue_gradients_100_seeds(kind):
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        shape = tuple(int(k) for k in r.integers(1, 9, size=3))
        arrays, fn = OP_BUILDERS[kind](r, shape)
        params = [T(a) for a in arrays]
        proj = [Tensor(r.normal(size=fn(*params).shape))]

        def loss():
            y = fn(*params)
            return nc.sum_(nc.mul(y, proj[0])) if y.shape != () else y

        worst = max(worst, nc.gradient_check(loss, params))
    assert worst < 1e-4


def test_dropout_gradient_matches_mask():
    x = T(np.random.default_rng(3).normal(size=(4, 5)))
    g = np.random.default_rng(9)
    y = nc.dropout(x, 0.3, g, training=True)
    nc.backward(nc.sum_(y))
    np.testing.assert_allclose(x.grad, (y.value != 0) / 0.7)


@pytest.mark.parametrize("seed", range(10))
def test_fused_lstm_gradients(seed):
    r = np.random.default_rng(seed)
    B, L, In, H = 2, 3, 3, 4
    x = T(r.normal(size=(B, L, In)))
    W = T(r.uniform(-0.5, 0.5, size=(In + H, 4 * H)))
    b = T(r.uniform(-0.5, 0.5, size=4 * H))
    h0, c0 = T(r.normal(size=(B, H))), T(r.normal(size=(B, H)))
    mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=float)
    proj = Tensor(r.normal(size=(B, L, H)))

    def loss():
        hs, h, c = nc.lstm(x, W, b, h0, c0, mask)
        return nc.add(nc.sum_(nc.mul(hs, proj)), nc.add(nc.sum_(nc.mul(h, h)), nc.sum_(c)))

    assert nc.gradient_check(loss, [x, W, b, h0, c0]) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_fused_attention_gradients(seed):
    r = np.random.default_rng(seed)
    B, L, H, A = 2, 4, 3, 5
    enc = T(r.normal(size=(B, L, H)))
    keys = T(r.normal(size=(B, L, A)))
    q = T(r.normal(size=(B, A)))
    v = T(r.normal(size=A))
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
    pc, pw = Tensor(r.normal(size=(B, H))), Tensor(r.normal(size=(B, L)))

    def loss():
        ctx, w = nc.attention(enc, keys, q, v, mask)
        return nc.add(nc.sum_(nc.mul(ctx, pc)), nc.sum_(nc.mul(w, pw)))

    assert nc.gradient_check(loss, [enc, keys, q, v]) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_fused_cross_entropy_gradients(seed):
    r = np.random.default_rng(seed)
    logits = T(r.normal(size=(5, 6)))
    targets = r.integers(0, 6, size=5)
    weights = np.array([1, 1, 0, 1, 1], dtype=float)
    for red in ("mean", "sum"):
        assert nc.gradient_check(lambda: nc.cross_entropy(logits, targets, weights, red), [logits]) < 1e-4


def test_attention_weights_respect_mask():
    r = np.random.default_rng(0)
    enc, keys = Tensor(r.normal(size=(1, 3, 2))), Tensor(r.normal(size=(1, 3, 4)))
    _, w = nc.attention(enc, keys, Tensor(r.normal(size=(1, 4))), Tensor(r.normal(size=4)), np.array([[1, 1, 0.0]]))
    assert w.value[0, 2] == 0.0
    assert w.value.sum() == pytest.approx(1.0, abs=1e-12)


def test_lstm_masked_rows_hold_state():
    r = np.random.default_rng(0)
    x = Tensor(r.normal(size=(1, 3, 2)))
    W, b = Tensor(r.normal(size=(5, 12))), Tensor(np.zeros(12))
    h0, c0 = Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3)))
    hs, h, c = nc.lstm(x, W, b, h0, c0, np.array([[1, 1, 0.0]]))
    np.testing.assert_array_equal(h.value[0], hs.value[0, 1])


def test_time_reverse_within_lengths():
    x = Tensor(np.arange(8.0).reshape(2, 4, 1))
    y = nc.time_reverse(x, [4, 2]).value[..., 0]
    np.testing.assert_array_equal(y, [[3, 2, 1, 0], [5, 4, 6, 7]])


def test_accumulation_over_k_uses():
    r = np.random.default_rng(5)
    W = T(r.normal(size=(3, 3)))
    xs = [Tensor(r.normal(size=(2, 3))) for _ in range(3)]
    singles = []
    for x in xs:
        W.grad = None
        nc.backward(nc.sum_(nc.tanh(nc.matmul(x, W))))
        singles.append(W.grad.copy())
    W.grad = None
    total = nc.sum_(nc.tanh(nc.matmul(xs[0], W)))
    for x in xs[1:]:
        total = nc.add(total, nc.sum_(nc.tanh(nc.matmul(x, W))))
    nc.backward(total)
    np.testing.assert_allclose(W.grad, sum(singles), rtol=1e-12, atol=1e-14)


def test_determinism_bitwise():
    def run():
        r = np.random.default_rng(42)
        W = T(r.normal(size=(4, 4)))
        x = Tensor(r.normal(size=(3, 4)))
        y = nc.dropout(nc.tanh(nc.matmul(x, W)), 0.2, r, training=True)
        nc.backward(nc.sum_(nc.softmax(y)))
        return y.value.copy(), W.grad.copy()

    (y1, g1), (y2, g2) = run(), run()
    assert y1.tobytes() == y2.tobytes() and g1.tobytes() == g2.tobytes()


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.floats(-50, 50), st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(rows, cols, shift, seed):
    x = np.random.default_rng(seed).normal(scale=10, size=(rows, cols)) + shift
    y = nc.softmax(Tensor(x)).value
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_values_stay_finite(rows, cols, seed):
    r = np.random.default_rng(seed)
    x = T(r.normal(scale=100, size=(rows, cols)))
    y = nc.log_softmax(nc.tanh(x))
    nc.backward(nc.sum_(y))
    assert np.isfinite(y.value).all() and np.isfinite(x.grad).all()


def test_tensor_invariants():
    t = T(np.ones((2, 3)))
    assert t.size == 6 and len(t.values) == 6
    nc.backward(nc.sum_(t))
    assert t.grad.shape == t.shape


def test_unknown_op():
    with pytest.raises(ParameterError):
        nc.forward_op("conv2d", T([1.0]))
