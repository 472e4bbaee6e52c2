import math

import numpy as np
import pytest

from blockprop import diffcore as dc
from conftest import central_diff, max_rel_err


def test_matvec_identity():
    w = np.eye(2)
    v = np.array([3.0, 4.0])
    assert np.array_equal(dc.matvec(w, v), v)


def test_matvec_hand_computed():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    v = np.array([1.0, 1.0])
    assert np.array_equal(dc.matvec(w, v), np.array([3.0, 7.0]))


def test_matvec_matches_bruteforce_loop(rng):
    # independent oracle: explicit entry-by-entry sum in python floats
    w = rng.uniform(-2, 2, (5, 7))
    v = rng.uniform(-2, 2, 7)
    got = dc.matvec(w, v)
    for i in range(5):
        expect = 0.0
        for j in range(7):
            expect += w[i, j] * v[j]
        assert abs(got[i] - expect) <= 1e-12 * max(1.0, abs(expect))


def test_matvec_shape_error_mentions_both_shapes():
    with pytest.raises(dc.ShapeError) as ei:
        dc.matvec(np.zeros((3, 4)), np.zeros(5))
    assert "(3, 4)" in str(ei.value) and "(5,)" in str(ei.value)


def test_sigmoid_tanh_point_values():
    assert dc.sigmoid(np.zeros(3))[0] == 0.5
    assert dc.tanh_(np.zeros(3))[0] == 0.0


def test_sigmoid_symmetry_and_saturation(rng):
    x = rng.uniform(-30, 30, 64)
    s = dc.sigmoid(x) + dc.sigmoid(-x)
    assert np.all(np.abs(s - 1.0) <= 1e-12)
    big = np.array([-1000.0, 1000.0])
    out = dc.sigmoid(big)
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[1] == 1.0


def test_elementwise_shape_errors():
    with pytest.raises(dc.ShapeError):
        dc.hadamard(np.zeros(3), np.zeros(4))
    with pytest.raises(dc.ShapeError):
        dc.add(np.zeros((2, 2)), np.zeros(4))


def test_softmax_xent_uniform_logits():
    loss, dlogits = dc.softmax_xent(np.zeros(10), 3)
    assert loss == pytest.approx(math.log(10), rel=1e-12)
    # reconstruct the softmax from the returned gradient
    p = dlogits.copy()
    p[3] += 1.0
    assert abs(p.sum() - 1.0) <= 1e-12


def test_softmax_xent_dominant_target():
    logits = np.zeros(10)
    logits[2] = 50.0
    loss, _ = dc.softmax_xent(logits, 2)
    assert 0.0 <= loss <= 1e-12


def test_softmax_xent_loss_nonnegative(rng):
    for _ in range(50):
        logits = rng.uniform(-5, 5, 12)
        t = int(rng.integers(12))
        loss, _ = dc.softmax_xent(logits, t)
        assert loss >= 0.0


def test_softmax_xent_target_out_of_range():
    with pytest.raises(IndexError):
        dc.softmax_xent(np.zeros(4), 4)
    with pytest.raises(IndexError):
        dc.softmax_xent(np.zeros(4), -1)


def test_softmax_xent_gradient_vs_finite_differences(rng):
    logits = rng.uniform(-2, 2, 9)
    target = 5
    _, dlogits = dc.softmax_xent(logits, target)
    num = central_diff(lambda x: dc.softmax_xent(x, target)[0], logits.copy())
    assert max_rel_err(dlogits, num) <= 1e-6


def test_add_backward_passthrough(rng):
    g = rng.uniform(-1, 1, 6)
    da = np.zeros(6)
    db = np.zeros(6)
    dc.add_backward(g, da, db)
    assert np.array_equal(da, g) and np.array_equal(db, g)


def test_hadamard_backward_product_rule(rng):
    a = rng.uniform(-1, 1, 5)
    b = rng.uniform(-1, 1, 5)
    g = rng.uniform(-1, 1, 5)
    da = np.zeros(5)
    db = np.zeros(5)
    dc.hadamard_backward(g, a, b, da, db)
    assert np.array_equal(da, g * b) and np.array_equal(db, g * a)


def test_backward_accumulation_is_exactly_double():
    g = np.array([0.3, -1.7, 2.5])
    y = dc.sigmoid(np.array([0.1, -0.4, 1.2]))
    once = np.zeros(3)
    dc.sigmoid_backward(g, y, once)
    twice = np.zeros(3)
    dc.sigmoid_backward(g, y, twice)
    dc.sigmoid_backward(g, y, twice)
    assert np.array_equal(twice, 2.0 * once)


def _probe_grad_pairs(rng):
    """(name, scalar loss fn of x, analytic grad fn of x) for every diff op."""
    w = rng.uniform(-2, 2, (4, 6))
    v2 = rng.uniform(-2, 2, 6)
    b2 = rng.uniform(-2, 2, 4)
    p4 = rng.uniform(-1, 1, 4)
    p6 = rng.uniform(-1, 1, 6)

    def matvec_loss(x):
        return float(p4 @ dc.matvec(x.reshape(4, 6), v2))

    def matvec_grad(x):
        dw = np.zeros((4, 6))
        dv = np.zeros(6)
        dc.matvec_backward(p4, x.reshape(4, 6), v2, dw, dv)
        return dw.reshape(-1)

    def matvec_v_loss(x):
        return float(p4 @ dc.matvec(w, x))

    def matvec_v_grad(x):
        dw = np.zeros((4, 6))
        dv = np.zeros(6)
        dc.matvec_backward(p4, w, x, dw, dv)
        return dv

    def sigmoid_loss(x):
        return float(p6 @ dc.sigmoid(x))

    def sigmoid_grad(x):
        dx = np.zeros(6)
        dc.sigmoid_backward(p6, dc.sigmoid(x), dx)
        return dx

    def tanh_loss(x):
        return float(p6 @ dc.tanh_(x))

    def tanh_grad(x):
        dx = np.zeros(6)
        dc.tanh_backward(p6, dc.tanh_(x), dx)
        return dx

    def had_loss(x):
        return float(p6 @ dc.hadamard(x, v2))

    def had_grad(x):
        da = np.zeros(6)
        db = np.zeros(6)
        dc.hadamard_backward(p6, x, v2, da, db)
        return da

    def add_loss(x):
        return float(p6 @ dc.add(x, v2))

    def add_grad(x):
        da = np.zeros(6)
        db = np.zeros(6)
        dc.add_backward(p6, da, db)
        return da

    return [
        ("matvec/w", (4, 6), matvec_loss, matvec_grad),
        ("matvec/v", (6,), matvec_v_loss, matvec_v_grad),
        ("sigmoid", (6,), sigmoid_loss, sigmoid_grad),
        ("tanh", (6,), tanh_loss, tanh_grad),
        ("hadamard", (6,), had_loss, had_grad),
        ("add", (6,), add_loss, add_grad),
    ]


def test_every_op_gradient_vs_finite_differences():
    # >= 20 random trials, inputs in [-2, 2], eps=1e-5, rel err <= 1e-4
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        for name, shape, loss_fn, grad_fn in _probe_grad_pairs(rng):
            x = rng.uniform(-2, 2, shape)
            if len(shape) == 2:
                num = central_diff(lambda f: loss_fn(f), x.copy().reshape(-1)).reshape(-1)
                ana = grad_fn(x.reshape(-1))
            else:
                num = central_diff(loss_fn, x.copy())
                ana = grad_fn(x)
            assert max_rel_err(ana, num) <= 1e-4, name


def test_forward_outputs_finite_on_finite_input(rng):
    x = rng.uniform(-2, 2, 16)
    y = rng.uniform(-2, 2, 16)
    for out in (dc.sigmoid(x), dc.tanh_(x), dc.hadamard(x, y), dc.add(x, y)):
        assert np.all(np.isfinite(out))
    loss, dl = dc.softmax_xent(x, 0)
    assert np.isfinite(loss) and np.all(np.isfinite(dl))


def test_backward_of_registry():
    assert dc.backward_of(dc.matvec) is dc.matvec_backward
    assert dc.backward_of(dc.sigmoid) is dc.sigmoid_backward
    assert dc.backward_of(dc.add) is dc.add_backward
    with pytest.raises(ValueError):
        dc.backward_of(dc.softmax_xent)


def test_backward_without_forward_context_raises():
    g = np.ones(3)
    dx = np.zeros(3)
    with pytest.raises(dc.StateError):
        dc.sigmoid_backward(g, None, dx)
    with pytest.raises(dc.StateError):
        dc.matvec_backward(g, None, None, np.zeros((3, 3)), dx)
