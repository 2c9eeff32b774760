"""Layers with hand-written forward/backward passes.

Every layer is a small descriptor that owns no arrays. ``init(rng)`` returns its
parameters as a name -> array dict, ``forward(params, x)`` returns ``(y, cache)`` and
``backward(params, cache, dy)`` returns ``(dx, grads)``. Parameter names are
prefixed with the layer name so a model can keep everything in one flat dict.

Row-vector convention throughout: a dense layer computes ``act(x @ W + b)``.
"""

from __future__ import annotations

import numpy as np

from gcnlstm.numerics import ACTIVATIONS, activate, activation_grad, glorot, sigmoid

GATES = ("F", "I", "O", "C")


def _check_activation(kind):
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}")


def _need_cache(cache, layer):
    if cache is None:
        raise RuntimeError(f"backward called on {layer} before forward")


class Dense:
    def __init__(self, name: str, fan_in: int, fan_out: int, activation: str = "identity"):
        _check_activation(activation)
        self.name, self.fan_in, self.fan_out, self.activation = name, fan_in, fan_out, activation

    def param_shapes(self):
        return {f"{self.name}.W": (self.fan_in, self.fan_out), f"{self.name}.b": (1, self.fan_out)}

    def init(self, rng):
        return {
            f"{self.name}.W": glorot(rng, (self.fan_in, self.fan_out), self.fan_in, self.fan_out),
            f"{self.name}.b": np.zeros((1, self.fan_out)),
        }

    def forward(self, p, x):
        W, b = p[f"{self.name}.W"], p[f"{self.name}.b"]
        if x.shape[-1] != W.shape[0]:
            raise ValueError(f"{self.name}: input width {x.shape[-1]} != weight rows {W.shape[0]}")
        z = x @ W + b
        y = activate(z, self.activation)
        return y, (x, z, y)

    def backward(self, p, cache, dy):
        _need_cache(cache, self.name)
        x, z, y = cache
        W = p[f"{self.name}.W"]
        dz = dy * activation_grad(y, z, self.activation)
        x2 = x.reshape(-1, x.shape[-1])
        dz2 = dz.reshape(-1, dz.shape[-1])
        grads = {f"{self.name}.W": x2.T @ dz2, f"{self.name}.b": dz2.sum(axis=0, keepdims=True)}
        return dz @ W.T, grads


class GraphConv:
    """``act(A_bar @ X @ W)`` over node features ``X`` of shape (..., N, F_in); no bias."""

    def __init__(self, name, fan_in, fan_out, normalized, activation="relu"):
        _check_activation(activation)
        self.name, self.fan_in, self.fan_out, self.activation = name, fan_in, fan_out, activation
        self.normalized = np.asarray(normalized, dtype=np.float64)

    def param_shapes(self):
        return {f"{self.name}.W": (self.fan_in, self.fan_out)}

    def init(self, rng):
        return {f"{self.name}.W": glorot(rng, (self.fan_in, self.fan_out), self.fan_in, self.fan_out)}

    def forward(self, p, x):
        W = p[f"{self.name}.W"]
        n = self.normalized.shape[0]
        if x.ndim < 2 or x.shape[-2] != n or x.shape[-1] != W.shape[0]:
            raise ValueError(
                f"{self.name}: input {x.shape} does not fit graph of {n} nodes and weight {W.shape}"
            )
        ax = self.normalized @ x
        z = ax @ W
        y = activate(z, self.activation)
        return y, (ax, z, y)

    def backward(self, p, cache, dy):
        _need_cache(cache, self.name)
        ax, z, y = cache
        W = p[f"{self.name}.W"]
        dz = dy * activation_grad(y, z, self.activation)
        dW = ax.reshape(-1, ax.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        dx = self.normalized.T @ (dz @ W.T)
        return dx, {f"{self.name}.W": dW}


def _lstm_cell(x, h_prev, c_prev, Wcat, Ucat, bcat):
    u = h_prev.shape[-1]
    z = x @ Wcat + h_prev @ Ucat + bcat
    f = sigmoid(z[:, :u])
    i = sigmoid(z[:, u : 2 * u])
    o = sigmoid(z[:, 2 * u : 3 * u])
    g = np.tanh(z[:, 3 * u :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, f, i, o, g, tc)


class LSTM:
    """LSTM over a time-major sequence of shape (T, B, F_in).

    Parameters per gate: input weights ``W_*`` (F_in x U), recurrent weights ``U_*``
    (U x U) and biases ``B_*`` (1 x U), for gates F (forget), I (update),
    O (output) and C (candidate). The initial hidden and cell states are zero.
    """

    def __init__(self, name, fan_in, units, return_sequence=False):
        self.name, self.fan_in, self.units, self.return_sequence = name, fan_in, units, return_sequence

    def param_shapes(self):
        out = {}
        for g in GATES:
            out[f"{self.name}.W_{g}"] = (self.fan_in, self.units)
        for g in GATES:
            out[f"{self.name}.U_{g}"] = (self.units, self.units)
        for g in GATES:
            out[f"{self.name}.B_{g}"] = (1, self.units)
        return out

    def init(self, rng):
        p = {}
        for g in GATES:
            p[f"{self.name}.W_{g}"] = glorot(rng, (self.fan_in, self.units), self.fan_in, self.units)
        for g in GATES:
            p[f"{self.name}.U_{g}"] = glorot(rng, (self.units, self.units), self.units, self.units)
        for g in GATES:
            p[f"{self.name}.B_{g}"] = np.zeros((1, self.units))
        return p

    def _stacked(self, p):
        n = self.name
        Wcat = np.concatenate([p[f"{n}.W_{g}"] for g in GATES], axis=1)
        Ucat = np.concatenate([p[f"{n}.U_{g}"] for g in GATES], axis=1)
        bcat = np.concatenate([p[f"{n}.B_{g}"] for g in GATES], axis=1)
        return Wcat, Ucat, bcat

    def forward(self, p, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] == 0:
            raise ValueError(f"{self.name}: expected non-empty (T, B, F) sequence, got {x.shape}")
        if x.shape[2] != self.fan_in:
            raise ValueError(f"{self.name}: feature width {x.shape[2]} != {self.fan_in}")
        Wcat, Ucat, bcat = self._stacked(p)
        T, B, _ = x.shape
        h = np.zeros((B, self.units))
        c = np.zeros((B, self.units))
        hs = np.empty((T, B, self.units))
        steps = []
        for t in range(T):
            h, c, step = _lstm_cell(x[t], h, c, Wcat, Ucat, bcat)
            hs[t] = h
            steps.append(step)
        y = hs if self.return_sequence else h
        return y, (steps, Wcat, Ucat)

    def backward(self, p, cache, dy):
        _need_cache(cache, self.name)
        steps, Wcat, Ucat = cache
        T = len(steps)
        u = self.units
        if self.return_sequence:
            dH = dy
        else:
            dH = np.zeros((T,) + dy.shape)
            dH[-1] = dy
        dWcat = np.zeros_like(Wcat)
        dUcat = np.zeros_like(Ucat)
        dbcat = np.zeros((1, 4 * u))
        dx = np.empty((T, dH.shape[1], self.fan_in))
        dh_next = np.zeros_like(dH[0])
        dc_next = np.zeros_like(dH[0])
        for t in range(T - 1, -1, -1):
            x, h_prev, c_prev, f, i, o, g, tc = steps[t]
            dh = dH[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc * c_prev * f * (1.0 - f),
                    dc * g * i * (1.0 - i),
                    dh * tc * o * (1.0 - o),
                    dc * i * (1.0 - g * g),
                ],
                axis=1,
            )
            dWcat += x.T @ dz
            dUcat += h_prev.T @ dz
            dbcat += dz.sum(axis=0, keepdims=True)
            dx[t] = dz @ Wcat.T
            dh_next = dz @ Ucat.T
            dc_next = dc * f
        grads = {}
        for j, gname in enumerate(GATES):
            cols = slice(j * u, (j + 1) * u)
            grads[f"{self.name}.W_{gname}"] = dWcat[:, cols]
            grads[f"{self.name}.U_{gname}"] = dUcat[:, cols]
            grads[f"{self.name}.B_{gname}"] = dbcat[:, cols]
        return dx, grads


class Conv1D:
    """Valid, stride-1 cross-correlation over (B, L, C_in) -> (B, L - K + 1, C_out)."""

    def __init__(self, name, in_channels, filters, kernel_size=1, activation="relu"):
        _check_activation(activation)
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        self.name, self.in_channels, self.filters = name, in_channels, filters
        self.kernel_size, self.activation = kernel_size, activation

    def param_shapes(self):
        return {
            f"{self.name}.W": (self.kernel_size, self.in_channels, self.filters),
            f"{self.name}.b": (1, self.filters),
        }

    def init(self, rng):
        fan_in = self.kernel_size * self.in_channels
        fan_out = self.kernel_size * self.filters
        shape = (self.kernel_size, self.in_channels, self.filters)
        return {f"{self.name}.W": glorot(rng, shape, fan_in, fan_out), f"{self.name}.b": np.zeros((1, self.filters))}

    def forward(self, p, x):
        W, b = p[f"{self.name}.W"], p[f"{self.name}.b"]
        K = self.kernel_size
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ValueError(f"{self.name}: expected (B, L, {self.in_channels}), got {x.shape}")
        L = x.shape[1]
        if L < K:
            raise ValueError(f"{self.name}: input length {L} shorter than kernel {K}")
        out_len = L - K + 1
        z = np.broadcast_to(b, (x.shape[0], out_len, self.filters)).copy()
        for k in range(K):
            z += x[:, k : k + out_len, :] @ W[k]
        y = activate(z, self.activation)
        return y, (x, z, y)

    def backward(self, p, cache, dy):
        _need_cache(cache, self.name)
        x, z, y = cache
        W = p[f"{self.name}.W"]
        K = self.kernel_size
        out_len = z.shape[1]
        dz = dy * activation_grad(y, z, self.activation)
        dW = np.empty_like(W)
        dx = np.zeros_like(x)
        dz2 = dz.reshape(-1, self.filters)
        for k in range(K):
            xs = x[:, k : k + out_len, :]
            dW[k] = xs.reshape(-1, self.in_channels).T @ dz2
            dx[:, k : k + out_len, :] += dz @ W[k].T
        return dx, {f"{self.name}.W": dW, f"{self.name}.b": dz2.sum(axis=0, keepdims=True)}


class MaxPool1D:
    """Non-overlapping window max over (B, L, C) -> (B, L // P, C); trailing remainder dropped."""

    def __init__(self, name, pool_size=2):
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self.name, self.pool_size = name, pool_size

    def param_shapes(self):
        return {}

    def init(self, rng):
        return {}

    def forward(self, p, x):
        P = self.pool_size
        if x.ndim != 3:
            raise ValueError(f"{self.name}: expected (B, L, C), got {x.shape}")
        B, L, C = x.shape
        if L < P:
            raise ValueError(f"{self.name}: input length {L} shorter than pool {P}")
        n = L // P
        win = x[:, : n * P, :].reshape(B, n, P, C)
        arg = win.argmax(axis=2)
        y = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
        return y, (x.shape, arg)

    def backward(self, p, cache, dy):
        _need_cache(cache, self.name)
        shape, arg = cache
        B, L, C = shape
        P = self.pool_size
        n = arg.shape[1]
        dwin = np.zeros((B, n, P, C))
        np.put_along_axis(dwin, arg[:, :, None, :], dy[:, :, None, :], axis=2)
        dx = np.zeros(shape)
        dx[:, : n * P, :] = dwin.reshape(B, n * P, C)
        return dx, {}


class Flatten:
    """(B, ...) -> (B, prod(...)) in row-major order."""

    def __init__(self, name="flatten"):
        self.name = name

    def param_shapes(self):
        return {}

    def init(self, rng):
        return {}

    def forward(self, p, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, p, cache, dy):
        _need_cache(cache, self.name)
        return dy.reshape(cache), {}


# Single-call helpers over explicit arrays.


def gcn_forward(weight, normalized, x, activation="relu"):
    weight = np.asarray(weight, dtype=np.float64)
    layer = GraphConv("gcn", weight.shape[0], weight.shape[1], normalized, activation)
    return layer.forward({"gcn.W": weight}, np.asarray(x, dtype=np.float64))[0]


def dense_forward(weight, bias, x, activation="identity"):
    weight = np.asarray(weight, dtype=np.float64)
    layer = Dense("dense", weight.shape[0], weight.shape[1], activation)
    p = {"dense.W": weight, "dense.b": np.asarray(bias, dtype=np.float64).reshape(1, -1)}
    return layer.forward(p, np.asarray(x, dtype=np.float64))[0]


def _gate_params(weights):
    """Accept ``W_F``-style keys with or without a layer prefix."""
    return {k.rsplit(".", 1)[-1]: np.asarray(v, dtype=np.float64) for k, v in weights.items()}


def lstm_step(weights, x_t, h_prev, c_prev):
    """One LSTM step; ``weights`` maps W_F..W_C, U_F..U_C, B_F..B_C to arrays. Returns (h, c)."""
    w = _gate_params(weights)
    x_t, h_prev, c_prev = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x_t, h_prev, c_prev))
    Wcat = np.concatenate([w[f"W_{g}"] for g in GATES], axis=1)
    Ucat = np.concatenate([w[f"U_{g}"] for g in GATES], axis=1)
    bcat = np.concatenate([w[f"B_{g}"].reshape(1, -1) for g in GATES], axis=1)
    u = Ucat.shape[0]
    if x_t.shape[1] != Wcat.shape[0] or h_prev.shape[1] != u or c_prev.shape != h_prev.shape:
        raise ValueError(
            f"lstm_step shapes do not conform: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}, "
            f"W {Wcat.shape[0]}x{u}"
        )
    h, c, _ = _lstm_cell(x_t, h_prev, c_prev, Wcat, Ucat, bcat)
    return h, c


def lstm_forward(weights, sequence, return_sequence=False):
    w = _gate_params(weights)
    seq = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in sequence]
    if not seq:
        raise ValueError("lstm_forward needs a non-empty sequence")
    fan_in, units = w["W_F"].shape
    layer = LSTM("lstm", fan_in, units, return_sequence)
    shapes = layer.param_shapes()
    p = {f"lstm.{k}": v.reshape(shapes[f"lstm.{k}"]) for k, v in w.items()}
    y, _ = layer.forward(p, np.stack(seq))
    return list(y) if return_sequence else y


def _as_sequence(x):
    """Promote a single sample (L,) or (L, C) to (1, L, C); returns the restore function."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x.reshape(1, -1, 1), lambda y: y.reshape(-1)
    if x.ndim == 2:
        return x[None], lambda y: y[0]
    return x, lambda y: y


def conv1d_forward(weight, bias, x, activation="identity"):
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim == 1:
        weight = weight.reshape(-1, 1, 1)
    K, cin, cout = weight.shape
    layer = Conv1D("conv", cin, cout, K, activation)
    p = {"conv.W": weight, "conv.b": np.asarray(bias, dtype=np.float64).reshape(1, cout)}
    xs, restore = _as_sequence(x)
    return restore(layer.forward(p, xs)[0])


def maxpool1d_forward(x, pool_size=2):
    xs, restore = _as_sequence(x)
    return restore(MaxPool1D("pool", pool_size).forward({}, xs)[0])


def flatten_forward(x):
    """Flatten one sample to a single row."""
    return np.asarray(x, dtype=np.float64).reshape(1, -1)
