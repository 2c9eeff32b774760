import math

import numpy as np
import pytest

from gcnlstm.layers import (
    GATES,
    LSTM,
    Conv1D,
    Dense,
    Flatten,
    GraphConv,
    MaxPool1D,
    conv1d_forward,
    dense_forward,
    flatten_forward,
    gcn_forward,
    lstm_forward,
    lstm_step,
    maxpool1d_forward,
)
from gcnlstm.numerics import gradient_check, make_rng


def scalar_lstm_step(w, x, h, c):
    """Plain-Python LSTM step for one sample: lists in, lists out."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    units = len(h)

    def pre(gate, j):
        s = w[f"B_{gate}"][0][j]
        s += sum(x[i] * w[f"W_{gate}"][i][j] for i in range(len(x)))
        s += sum(h[i] * w[f"U_{gate}"][i][j] for i in range(units))
        return s

    f = [sig(pre("F", j)) for j in range(units)]
    i_ = [sig(pre("I", j)) for j in range(units)]
    o = [sig(pre("O", j)) for j in range(units)]
    g = [math.tanh(pre("C", j)) for j in range(units)]
    c_new = [f[j] * c[j] + i_[j] * g[j] for j in range(units)]
    h_new = [o[j] * math.tanh(c_new[j]) for j in range(units)]
    return h_new, c_new


def random_lstm_weights(rng, fan_in, units):
    w = {}
    for g in GATES:
        w[f"W_{g}"] = rng.uniform(-1, 1, (fan_in, units))
        w[f"U_{g}"] = rng.uniform(-1, 1, (units, units))
        w[f"B_{g}"] = rng.uniform(-1, 1, (1, units))
    return w


def zero_lstm_weights(fan_in, units):
    w = {}
    for g in GATES:
        w[f"W_{g}"] = np.zeros((fan_in, units))
        w[f"U_{g}"] = np.zeros((units, units))
        w[f"B_{g}"] = np.zeros((1, units))
    return w


# graph convolution


def test_gcn_identity_case():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_array_equal(gcn_forward(np.eye(2), np.eye(2), x, "identity"), x)


def test_gcn_hand_case():
    a_bar = [[0.5, 0.5], [0.5, 0.5]]
    np.testing.assert_allclose(gcn_forward([[1.0]], a_bar, [[1.0], [3.0]], "identity"), [[2.0], [2.0]])
    np.testing.assert_array_equal(gcn_forward([[-1.0]], a_bar, [[1.0], [3.0]], "relu"), [[0.0], [0.0]])


def test_gcn_with_identity_graph_equals_unbiased_dense_bitwise():
    rng = make_rng(1)
    w, x = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (5, 3))
    g = gcn_forward(w, np.eye(5), x, "relu")
    d = dense_forward(w, np.zeros((1, 4)), x, "relu")
    assert g.tobytes() == d.tobytes()


def test_gcn_shape_errors():
    with pytest.raises(ValueError):
        gcn_forward(np.eye(2), np.eye(3), np.ones((2, 2)))
    with pytest.raises(ValueError):
        gcn_forward(np.eye(3), np.eye(2), np.ones((2, 2)))


# dense


def test_dense_cases():
    x = np.array([[0.3, -0.7]])
    np.testing.assert_array_equal(dense_forward(np.eye(2), np.zeros((1, 2)), x), x)
    np.testing.assert_array_equal(dense_forward([[1.0], [1.0]], [[1.0]], [[1.0, 2.0]]), [[4.0]])
    assert dense_forward([[1.0], [1.0]], [[-3.0]], [[1.0, 2.0]], "sigmoid")[0, 0] == 0.5
    with pytest.raises(ValueError):
        dense_forward(np.eye(3), np.zeros((1, 3)), x)


def test_dense_linear_weight_gradient_is_xT_upstream():
    rng = make_rng(2)
    layer = Dense("d", 3, 2)
    p = layer.init(rng)
    x = rng.normal(size=(4, 3))
    up = rng.normal(size=(4, 2))
    _, cache = layer.forward(p, x)
    dx, grads = layer.backward(p, cache, up)
    np.testing.assert_allclose(grads["d.W"], x.T @ up, rtol=0, atol=1e-14)
    np.testing.assert_allclose(grads["d.b"], up.sum(axis=0, keepdims=True), atol=1e-14)
    np.testing.assert_allclose(dx, up @ p["d.W"].T, atol=1e-14)


def test_gcn_gradient_with_identity_graph_reduces_to_dense():
    rng = make_rng(3)
    w = rng.uniform(-1, 1, (3, 2))
    x = rng.uniform(-1, 1, (4, 3))
    up = rng.normal(size=(4, 2))
    gl = GraphConv("g", 3, 2, np.eye(4), "relu")
    dl = Dense("d", 3, 2, "relu")
    gdx, gg = gl.backward({"g.W": w}, gl.forward({"g.W": w}, x)[1], up)
    pd = {"d.W": w, "d.b": np.zeros((1, 2))}
    ddx, dg = dl.backward(pd, dl.forward(pd, x)[1], up)
    np.testing.assert_allclose(gg["g.W"], dg["d.W"], atol=1e-15)
    np.testing.assert_allclose(gdx, ddx, atol=1e-15)


# LSTM


def test_lstm_step_zero_weights_zero_state():
    h, c = lstm_step(zero_lstm_weights(2, 3), np.ones((1, 2)), np.zeros((1, 3)), np.zeros((1, 3)))
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_array_equal(c, 0.0)


def test_lstm_step_zero_weights_carry_half_the_cell():
    c_prev = np.array([[0.8, -2.0, 3.0]])
    h, c = lstm_step(zero_lstm_weights(2, 3), np.ones((1, 2)), np.zeros((1, 3)), c_prev)
    np.testing.assert_allclose(c, 0.5 * c_prev, atol=1e-15)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)


def test_lstm_step_matches_scalar_oracle():
    rng = make_rng(42)
    w = random_lstm_weights(rng, 2, 2)
    x, h0, c0 = rng.uniform(-1, 1, (1, 2)), rng.uniform(-1, 1, (1, 2)), rng.uniform(-1, 1, (1, 2))
    h, c = lstm_step(w, x, h0, c0)
    wl = {k: v.tolist() for k, v in w.items()}
    h_ref, c_ref = scalar_lstm_step(wl, x[0].tolist(), h0[0].tolist(), c0[0].tolist())
    np.testing.assert_allclose(h[0], h_ref, atol=1e-12, rtol=0)
    np.testing.assert_allclose(c[0], c_ref, atol=1e-12, rtol=0)


def test_lstm_step_shape_error():
    with pytest.raises(ValueError):
        lstm_step(zero_lstm_weights(2, 3), np.ones((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)))


def test_lstm_forward_single_step_equals_step():
    rng = make_rng(5)
    w = random_lstm_weights(rng, 3, 2)
    x = rng.uniform(-1, 1, (1, 3))
    h_step, _ = lstm_step(w, x, np.zeros((1, 2)), np.zeros((1, 2)))
    np.testing.assert_array_equal(lstm_forward(w, [x]), h_step)


def test_lstm_forward_zero_weights_gives_zero():
    seq = [make_rng(i).normal(size=(2, 3)) for i in range(5)]
    np.testing.assert_array_equal(lstm_forward(zero_lstm_weights(3, 4), seq), np.zeros((2, 4)))


def test_lstm_forward_three_steps_match_chained_oracle():
    rng = make_rng(9)
    w = random_lstm_weights(rng, 2, 3)
    seq = [rng.uniform(-1, 1, (1, 2)) for _ in range(3)]
    wl = {k: v.tolist() for k, v in w.items()}
    h, c = [0.0] * 3, [0.0] * 3
    for x in seq:
        h, c = scalar_lstm_step(wl, x[0].tolist(), h, c)
    np.testing.assert_allclose(lstm_forward(w, seq)[0], h, atol=1e-12, rtol=0)
    hs = lstm_forward(w, seq, return_sequence=True)
    assert len(hs) == 3
    np.testing.assert_array_equal(hs[-1], lstm_forward(w, seq))


def test_lstm_forward_rejects_empty():
    with pytest.raises(ValueError):
        lstm_forward(zero_lstm_weights(1, 1), [])


def test_lstm_states_are_bounded():
    rng = make_rng(6)
    layer = LSTM("l", 3, 5, return_sequence=True)
    p = {k: 5 * v for k, v in random_lstm_weights(rng, 3, 5).items()}
    p = {f"l.{k}": v for k, v in p.items()}
    hs, (steps, _, _) = layer.forward(p, rng.uniform(-10, 10, (20, 4, 3)))
    assert np.all(np.abs(hs) < 1)
    for _, _, _, f, i, o, _, _ in steps:
        for gate in (f, i, o):
            assert np.all((gate >= 0) & (gate <= 1))


# conv / pool / flatten


def test_conv_kernel_one_identity():
    x = np.array([1.0, -2.0, 3.5, 0.0])
    np.testing.assert_array_equal(conv1d_forward([1.0], [0.0], x), x)


def test_conv_valid_length_and_values():
    x = np.arange(5.0)
    y = conv1d_forward([1.0, -1.0], [0.5], x)
    np.testing.assert_allclose(y, [-0.5, -0.5, -0.5, -0.5])
    with pytest.raises(ValueError):
        conv1d_forward(np.ones(6), [0.0], x)


def test_maxpool_hand_case():
    np.testing.assert_array_equal(maxpool1d_forward([1.0, 3.0, 2.0, 5.0], 2), [3.0, 5.0])
    np.testing.assert_array_equal(maxpool1d_forward([1.0, 3.0, 2.0, 5.0, 9.0], 2), [3.0, 5.0])
    with pytest.raises(ValueError):
        maxpool1d_forward([1.0], 2)


def test_flatten_preserves_row_order():
    x = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    np.testing.assert_array_equal(flatten_forward(x), [[1, 2, 3, 4, 5, 6]])


def test_backward_before_forward_is_rejected():
    for layer in (Dense("d", 1, 1), LSTM("l", 1, 1), Conv1D("c", 1, 1), MaxPool1D("p"), Flatten()):
        with pytest.raises(RuntimeError):
            layer.backward(layer.init(make_rng(0)), None, np.zeros((1, 1)))


def test_forward_is_deterministic():
    rng = make_rng(12)
    layer = LSTM("l", 2, 3)
    p = layer.init(rng)
    x = rng.uniform(-1, 1, (4, 2, 2))
    assert layer.forward(p, x)[0].tobytes() == layer.forward(p, x)[0].tobytes()


# gradient checks per layer


def check_layer(layer, x, seed=0, perturb=True):
    rng = make_rng(seed)
    p = layer.init(rng)
    if perturb:
        p = {k: v + rng.uniform(-0.5, 0.5, v.shape) for k, v in p.items()}
    y0, _ = layer.forward(p, x)
    target = rng.uniform(-1, 1, y0.shape)
    xin = {"x": x}

    def f(params):
        pp = {k: v for k, v in params.items() if k != "x"}
        y, cache = layer.forward(pp, params["x"])
        d = y - target
        dx, g = layer.backward(pp, cache, d / d.size)
        g["x"] = dx
        return 0.5 * float((d * d).mean()), g

    reports = gradient_check(f, {**p, **xin}, rng)
    return max(r.max_rel_error for r in reports)


@pytest.mark.parametrize(
    "make_layer,shape",
    [
        (lambda: Dense("d", 4, 3, "tanh"), (5, 4)),
        (lambda: Dense("d", 4, 3, "relu"), (5, 4)),
        (lambda: GraphConv("g", 3, 4, np.full((5, 5), 0.2), "relu"), (2, 5, 3)),
        (lambda: GraphConv("g", 3, 4, np.full((5, 5), 0.2), "sigmoid"), (5, 3)),
        (lambda: LSTM("l", 3, 4), (4, 2, 3)),
        (lambda: LSTM("l", 3, 4, return_sequence=True), (4, 2, 3)),
        (lambda: Conv1D("c", 3, 4, kernel_size=2, activation="tanh"), (2, 6, 3)),
        (lambda: Conv1D("c", 3, 4, kernel_size=1), (2, 6, 3)),
        (lambda: MaxPool1D("p", 2), (2, 7, 3)),
        (lambda: Flatten(), (2, 3, 4)),
    ],
)
def test_layer_gradients(make_layer, shape):
    x = make_rng(99).uniform(-1, 1, shape)
    assert check_layer(make_layer(), x) < 1e-5
