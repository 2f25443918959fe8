"""Finite-difference gradient checks and graph-mechanics tests for the
autodiff core."""

import numpy as np
import pytest

from latentmix.nn import tensor as T
from latentmix.nn import (
    ConfigurationError,
    Tensor,
    concat,
    dropout,
    gaussian_reparameterize,
    gru_step,
    linear,
    log_softmax,
    no_grad,
    use_dtype,
)
from oracles import check_gradients, fd_grad, rel_err


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_add_broadcast_gradients():
    rng = np.random.default_rng(0)
    with use_dtype(np.float64):
        a = leaf(rng, 3, 4)
        b = leaf(rng, 4)
        check_gradients(lambda: (a + b).sum(), [a, b])


def test_mul_broadcast_gradients():
    rng = np.random.default_rng(1)
    with use_dtype(np.float64):
        a = leaf(rng, 2, 3)
        b = leaf(rng, 1, 3)
        check_gradients(lambda: (a * b * 0.5).sum(), [a, b])


def test_sub_div_gradients():
    rng = np.random.default_rng(2)
    with use_dtype(np.float64):
        a = leaf(rng, 5)
        b = Tensor(rng.standard_normal(5) + 3.0, requires_grad=True)
        check_gradients(lambda: (a / b - b).sum(), [a, b])


def test_power_gradients():
    rng = np.random.default_rng(3)
    with use_dtype(np.float64):
        a = Tensor(rng.uniform(0.5, 2.0, (4,)), requires_grad=True)
        check_gradients(lambda: (a**3.0).sum(), [a])
        check_gradients(lambda: (a**-1.5).sum(), [a])


def test_matmul_gradients():
    rng = np.random.default_rng(4)
    with use_dtype(np.float64):
        a = leaf(rng, 3, 4)
        b = leaf(rng, 4, 2)
        check_gradients(lambda: (a @ b).sum(), [a, b])


def test_matmul_shape_mismatch_raises():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((2, 3)))
    with pytest.raises(ConfigurationError):
        a @ b


def test_unary_op_gradients():
    rng = np.random.default_rng(5)
    with use_dtype(np.float64):
        a = leaf(rng, 3, 3)
        check_gradients(lambda: T.exp(a).sum(), [a])
        check_gradients(lambda: T.tanh(a).sum(), [a])
        check_gradients(lambda: T.sigmoid(a).sum(), [a])
        pos = Tensor(rng.uniform(0.5, 2.0, (6,)), requires_grad=True)
        check_gradients(lambda: T.log(pos).sum(), [pos])
        # keep relu inputs away from the kink
        shifted = Tensor(rng.standard_normal((8,)) + np.where(rng.random(8) < 0.5, -1.0, 1.0) * 0.7,
                         requires_grad=True)
        shifted.data[np.abs(shifted.data) < 0.05] = 0.5
        check_gradients(lambda: T.relu(shifted).sum(), [shifted])


def test_sum_mean_axis_gradients():
    rng = np.random.default_rng(6)
    with use_dtype(np.float64):
        a = leaf(rng, 2, 3, 4)
        check_gradients(lambda: a.sum(axis=1).sum(), [a])
        check_gradients(lambda: a.mean(axis=2, keepdims=True).sum(), [a])
        check_gradients(lambda: a.mean(), [a])


def test_reshape_take_gradients():
    rng = np.random.default_rng(7)
    with use_dtype(np.float64):
        a = leaf(rng, 2, 6)
        check_gradients(lambda: a.reshape(3, 4).sum(axis=0).sum(), [a])
        idx = np.array([0, 1, 1, 0])
        check_gradients(lambda: a[idx].sum(), [a])


def test_take_duplicate_indices_accumulate():
    a = Tensor(np.arange(4.0), requires_grad=True)
    out = a[np.array([2, 2, 2])]
    out.sum().backward()
    assert a.grad[2] == 3.0
    assert a.grad[0] == a.grad[1] == a.grad[3] == 0.0


def test_concat_gradients():
    rng = np.random.default_rng(8)
    with use_dtype(np.float64):
        a = leaf(rng, 2, 3)
        b = leaf(rng, 2, 2)
        check_gradients(lambda: (concat([a, b], axis=1) ** 2.0).sum(), [a, b])


def test_minimum_clip_gradients():
    rng = np.random.default_rng(9)
    with use_dtype(np.float64):
        a = leaf(rng, 6)
        b = leaf(rng, 6)
        # perturb apart so finite differences never cross the tie
        mask = np.abs(a.data - b.data) < 0.05
        b.data[mask] += 0.5
        check_gradients(lambda: T.minimum(a, b).sum(), [a, b])
        c = Tensor(rng.standard_normal(8) * 2.0, requires_grad=True)
        c.data[np.abs(np.abs(c.data) - 1.0) < 0.05] = 0.0
        check_gradients(lambda: T.clip(c, -1.0, 1.0).sum(), [c])


def test_minimum_tie_routes_to_first():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([1.0, 3.0]), requires_grad=True)
    T.minimum(a, b).sum().backward()
    assert np.array_equal(a.grad, [1.0, 1.0])
    assert np.array_equal(b.grad, [0.0, 0.0])


def test_log_softmax_gradients_and_stability():
    rng = np.random.default_rng(10)
    with use_dtype(np.float64):
        a = leaf(rng, 3, 5)
        w = Tensor(rng.standard_normal((3, 5)))
        check_gradients(lambda: (log_softmax(a, axis=-1) * w).sum(), [a])
    big = Tensor(np.array([[1000.0, 0.0, -1000.0]]))
    out = log_softmax(big, axis=-1)
    assert np.all(np.isfinite(out.data))
    assert abs(out.data[0, 0]) < 1e-6


def test_linear_weight_gradient_closed_form():
    # d sum(xW+b) / dW[i,j] = sum over batch of x[:, i]
    rng = np.random.default_rng(11)
    with use_dtype(np.float64):
        x = leaf(rng, 7, 4)
        W = leaf(rng, 4, 3)
        b = leaf(rng, 3)
        linear(x, W, b).sum().backward()
        expected_W = np.repeat(x.data.sum(axis=0)[:, None], 3, axis=1)
        assert rel_err(W.grad, expected_W) < 1e-12
        assert rel_err(b.grad, np.full(3, 7.0)) < 1e-12
        check_gradients(lambda: linear(x, W, b).sum(), [x, W, b])


def test_gru_two_step_sequence_gradients():
    rng = np.random.default_rng(12)
    with use_dtype(np.float64):
        hid, din, batch = 5, 3, 2
        x0 = leaf(rng, batch, din)
        x1 = leaf(rng, batch, din)
        Wx = leaf(rng, din, 3 * hid)
        Wh = leaf(rng, hid, 3 * hid)
        bx = leaf(rng, 3 * hid)
        bh = leaf(rng, 3 * hid)

        def run():
            h = Tensor(np.zeros((batch, hid)))
            h = gru_step(x0, h, Wx, Wh, bx, bh)
            h = gru_step(x1, h, Wx, Wh, bx, bh)
            return (h * h).sum()

        check_gradients(run, [x0, x1, Wx, Wh, bx, bh])


def test_gru_update_convention():
    # with z forced to 0 the state must stay at h_prev exactly
    hid = 3
    h0 = np.array([[0.3, -0.2, 0.9]])
    x = Tensor(np.zeros((1, 2)))
    Wx = Tensor(np.zeros((2, 3 * hid)))
    Wh = Tensor(np.zeros((hid, 3 * hid)))
    bx = np.zeros(3 * hid)
    bx[:hid] = -50.0  # update gate z -> sigmoid(-50) ~ 0
    h = gru_step(x, Tensor(h0), Wx, Wh, Tensor(bx), Tensor(np.zeros(3 * hid)))
    assert np.allclose(h.data, h0, atol=1e-12)
    bx[:hid] = 50.0  # z -> 1: state becomes candidate tanh(0) = 0
    h = gru_step(x, Tensor(h0), Wx, Wh, Tensor(bx), Tensor(np.zeros(3 * hid)))
    assert np.allclose(h.data, 0.0, atol=1e-12)


def test_dropout_gradients_with_fixed_mask():
    rng = np.random.default_rng(13)
    with use_dtype(np.float64):
        a = leaf(rng, 4, 4)
        check_gradients(
            lambda: dropout(a, 0.5, True, np.random.default_rng(99)).sum(), [a]
        )


def test_dropout_eval_mode_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    out = dropout(x, 0.9, False, np.random.default_rng(0))
    assert np.array_equal(out.data, x.data)
    out = dropout(x, 0.0, True, np.random.default_rng(0))
    assert np.array_equal(out.data, x.data)


def test_dropout_monte_carlo_unbiased():
    rng = np.random.default_rng(14)
    x = Tensor(np.full((200, 500), 2.0))
    acc = np.zeros_like(x.data)
    reps = 10
    for _ in range(reps):
        acc += dropout(x, 0.3, True, rng).data
    mean = acc.mean() / reps
    # 1e6 Bernoulli draws: std of mean ~ 2*sqrt(p/(1-p))/sqrt(n) ~ 0.0013
    assert abs(mean - 2.0) < 0.01
    one = dropout(x, 0.3, True, rng).data
    vals = np.unique(np.round(one, 6))
    assert set(vals) <= {0.0, np.round(2.0 / 0.7, 6)}


def test_dropout_invalid_rate_raises():
    with pytest.raises(ConfigurationError):
        dropout(Tensor(np.zeros(3)), 1.0, True, np.random.default_rng(0))


def test_reparameterize_logvar_gradient_closed_form():
    rng = np.random.default_rng(15)
    with use_dtype(np.float64):
        mu = leaf(rng, 3, 4)
        logvar = leaf(rng, 3, 4)
        noise = Tensor(rng.standard_normal((3, 4)))
        sample = gaussian_reparameterize(mu, logvar, noise)
        sample.sum().backward()
        expected = 0.5 * np.exp(0.5 * logvar.data) * noise.data
        assert rel_err(logvar.grad, expected) < 1e-12
        assert rel_err(mu.grad, np.ones_like(mu.data)) < 1e-12
        numeric = fd_grad(
            lambda: float(gaussian_reparameterize(mu, logvar, noise).sum().data),
            logvar.data,
        )
        assert rel_err(expected, numeric) < 1e-4


def test_reparameterize_shape_mismatch_raises():
    with pytest.raises(ConfigurationError):
        gaussian_reparameterize(
            Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), Tensor(np.zeros(3))
        )


def test_diamond_graph_accumulates_both_paths():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * 3.0 + x * x  # dy/dx = 3 + 2x = 7
    y.backward()
    assert np.allclose(x.grad, [7.0])


def test_reused_subgraph_backward_once():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    s = x * 2.0
    out = (s + s).sum()  # d/dx = 4
    out.backward()
    assert np.allclose(x.grad, [4.0, 4.0])


def test_detach_blocks_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x.detach() * x
    y.backward()
    assert np.allclose(x.grad, [3.0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with no_grad():
        y = x * 2.0 + 1.0
    assert y._parents == () and y._backward is None
    assert not y.requires_grad


def test_grad_accumulation_never_aliases_parameter_grads():
    # two params receiving the same upstream buffer must own separate grads
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    (a + b).sum().backward()
    a.grad += 10.0
    assert np.allclose(b.grad, 1.0)


def test_default_dtype_is_float32_and_use_dtype_switches():
    t = Tensor([1.0, 2.0])
    assert t.data.dtype == np.float32
    with use_dtype(np.float64):
        t64 = Tensor([1.0])
        assert t64.data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


def test_finite_forward_on_finite_inputs():
    rng = np.random.default_rng(16)
    x = Tensor(rng.standard_normal((4, 4)) * 30.0)
    for fn in (T.exp, T.tanh, T.sigmoid, T.relu, lambda t: log_softmax(t, -1)):
        out = fn(x * 1.0)
        assert np.all(np.isfinite(out.data)) or fn is T.exp
    assert np.all(np.isfinite(T.sigmoid(Tensor(np.array([-1e4, 1e4]))).data))
