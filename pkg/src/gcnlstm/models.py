"""Hybrid GCN -> LSTM -> dense forecaster and the five comparison baselines.

All models map a batch of windows ``(B, N, h)`` (site x lag, oldest lag first) to
forecasts ``(B, N_out, k)``, where ``N_out`` is ``N`` in all-site mode and 1 when a
single ``target_site`` is forecast.

Architectures
-------------
hybrid_gcn_lstm
    The GCN stack embeds each lag's N-site snapshot (N x 1 -> N x F) through the
    normalized adjacency; the h embeddings form a sequence for the LSTM stack with
    nodes on the batch axis; a dense head shared across nodes maps the last hidden
    state to k outputs.
mlp
    Flattened N*h window -> dense 30 -> 25 -> 20 (relu) -> N_out*k.
lstm
    Per-step all-site vector (N features) -> LSTM 10 -> 15 -> 10 -> N_out*k.
cnn
    Time axis as length, sites as channels: Conv1D(16, kernel 1) -> MaxPool(2) ->
    Conv1D(1, kernel 1) -> MaxPool(2) -> flatten -> N_out*k.
gcn
    Node features are the h lags: GCN 20 -> 20 -> 15 -> shared dense k per node.
cnn_lstm
    The cnn stack up to flatten; each flattened value becomes one step of a
    1-feature sequence for an LSTM of 10 units -> N_out*k.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from gcnlstm.layers import LSTM, Conv1D, Dense, Flatten, GraphConv, MaxPool1D
from gcnlstm.numerics import ACTIVATIONS

KINDS = ("hybrid_gcn_lstm", "mlp", "lstm", "cnn", "gcn", "cnn_lstm")
GRAPH_KINDS = ("hybrid_gcn_lstm", "gcn")

_KIND_DEFAULTS = {
    "hybrid_gcn_lstm": {"gcn_widths": (16,), "lstm_units": (32,)},
    "gcn": {"gcn_widths": (20, 20, 15)},
    "lstm": {"lstm_units": (10, 15, 10)},
    "mlp": {"mlp_hidden": (30, 25, 20)},
    "cnn": {"conv_filters": (16, 1)},
    "cnn_lstm": {"conv_filters": (16, 1), "lstm_units": (10,)},
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "hybrid_gcn_lstm"
    h: int = 6
    k: int = 1
    n_sites: int = 8
    gcn_widths: tuple[int, ...] | None = None
    lstm_units: tuple[int, ...] | None = None
    mlp_hidden: tuple[int, ...] | None = None
    conv_filters: tuple[int, ...] | None = None
    kernel_size: int = 1
    pool_size: int = 2
    gcn_activation: str = "relu"
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    target_site: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for name, value in _KIND_DEFAULTS[self.kind].items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        for name in ("gcn_widths", "lstm_units", "mlp_hidden", "conv_filters"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))
                if not value or min(value) < 1:
                    raise ValueError(f"{name} must be a non-empty list of positive widths")
        for name in ("h", "k", "n_sites", "kernel_size", "pool_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("gcn_activation", "hidden_activation", "output_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ValueError(f"{name} {getattr(self, name)!r} is not a known activation")
        if self.target_site is not None and not 0 <= self.target_site < self.n_sites:
            raise ValueError(f"target_site {self.target_site} outside 0..{self.n_sites - 1}")

    @property
    def n_out(self) -> int:
        return self.n_sites if self.target_site is None else 1

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model spec keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


# Shape adapters between layers. They carry no parameters.


class _Transpose:
    def __init__(self, axes):
        self.axes = tuple(axes)
        self.inverse = tuple(np.argsort(self.axes))

    def forward(self, p, x):
        return x.transpose(self.axes), True

    def backward(self, p, cache, dy):
        return dy.transpose(self.inverse), {}


class _Reshape:
    def __init__(self, rule):
        self.rule = rule

    def forward(self, p, x):
        return x.reshape(self.rule(x.shape)), x.shape

    def backward(self, p, cache, dy):
        return dy.reshape(cache), {}


class _SelectNode:
    def __init__(self, node):
        self.node = node

    def forward(self, p, x):
        return x[:, self.node : self.node + 1, :], x.shape

    def backward(self, p, cache, dy):
        dx = np.zeros(cache)
        dx[:, self.node : self.node + 1, :] = dy
        return dx, {}


class Model:
    """A stage chain for one :class:`ModelSpec`, bound to a normalized adjacency.

    ``forward(params, windows)`` is pure; the returned cache is owned by the caller
    and must be handed back to ``backward``.
    """

    def __init__(self, spec: ModelSpec, normalized=None):
        self.spec = spec
        n = spec.n_sites
        if normalized is None:
            normalized = np.eye(n)
        normalized = np.asarray(normalized, dtype=np.float64)
        if normalized.shape != (n, n):
            raise ValueError(f"graph has {normalized.shape[0]} nodes but the model spec expects {n}")
        self.normalized = normalized
        self.stages = getattr(self, f"_stages_{spec.kind}")()
        self._check_chain()

    @property
    def layers(self):
        return [s for s in self.stages if hasattr(s, "init")]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for layer in self.layers:
            out.update(layer.param_shapes())
        return out

    def init_params(self, rng) -> dict[str, np.ndarray]:
        params = {}
        for layer in self.layers:
            params.update(layer.init(rng))
        return params

    def forward(self, params, windows):
        x = np.asarray(windows, dtype=np.float64)
        s = self.spec
        if x.ndim != 3 or x.shape[1:] != (s.n_sites, s.h):
            raise ValueError(f"{s.kind}: windows must be (B, {s.n_sites}, {s.h}), got {x.shape}")
        caches = []
        for stage in self.stages:
            x, cache = stage.forward(params, x)
            caches.append(cache)
        return x, caches

    def backward(self, params, caches, dpred):
        if caches is None:
            raise RuntimeError("backward called before forward")
        grads = {}
        dx = dpred
        for stage, cache in zip(reversed(self.stages), reversed(caches)):
            dx, g = stage.backward(params, cache, dx)
            grads.update(g)
        return grads

    def predict(self, params, windows, batch_size: int = 1024):
        windows = np.asarray(windows, dtype=np.float64)
        outs = [self.forward(params, windows[i : i + batch_size])[0] for i in range(0, len(windows), batch_size)]
        return np.concatenate(outs, axis=0)

    def _check_chain(self):
        s = self.spec
        x = np.zeros((1, s.n_sites, s.h))
        p = {name: np.zeros(shape) for name, shape in self.param_shapes().items()}
        for stage in self.stages:
            try:
                x, _ = stage.forward(p, x)
            except ValueError as exc:
                raise ValueError(f"inconsistent {s.kind} spec: {exc}") from None
        if x.shape[1:] != (s.n_out, s.k):
            raise ValueError(f"inconsistent {s.kind} spec: output {x.shape[1:]} != {(s.n_out, s.k)}")

    # per-kind stage chains

    def _head(self, fan_in):
        s = self.spec
        return [
            Dense("head", fan_in, s.n_out * s.k, s.output_activation),
            _Reshape(lambda shape: (shape[0], s.n_out, s.k)),
        ]

    def _node_head(self, fan_in):
        s = self.spec
        stages = []
        if s.target_site is not None:
            stages.append(_SelectNode(s.target_site))
        stages.append(Dense("head", fan_in, s.k, s.output_activation))
        return stages

    def _gcn_stack(self, fan_in):
        stages = []
        for i, width in enumerate(self.spec.gcn_widths):
            stages.append(GraphConv(f"gcn{i}", fan_in, width, self.normalized, self.spec.gcn_activation))
            fan_in = width
        return stages, fan_in

    def _lstm_stack(self, fan_in):
        units = self.spec.lstm_units
        stages = []
        for i, u in enumerate(units):
            stages.append(LSTM(f"lstm{i}", fan_in, u, return_sequence=i < len(units) - 1))
            fan_in = u
        return stages, fan_in

    def _cnn_stack(self):
        s = self.spec
        stages = [_Transpose((0, 2, 1))]
        channels = s.n_sites
        for i, filters in enumerate(s.conv_filters):
            stages.append(Conv1D(f"conv{i}", channels, filters, s.kernel_size, s.hidden_activation))
            stages.append(MaxPool1D(f"pool{i}", s.pool_size))
            channels = filters
        stages.append(Flatten())
        length = s.h
        for _ in s.conv_filters:
            length = (length - s.kernel_size + 1) // s.pool_size
        return stages, length * channels

    def _stages_hybrid_gcn_lstm(self):
        s = self.spec
        stages = [_Transpose((0, 2, 1)), _Reshape(lambda shape: shape + (1,))]
        gcn, width = self._gcn_stack(1)
        stages += gcn
        # (B, h, N, F) -> (h, B*N, F): nodes ride on the LSTM batch axis
        stages.append(_Transpose((1, 0, 2, 3)))
        stages.append(_Reshape(lambda shape: (shape[0], shape[1] * shape[2], shape[3])))
        lstm, units = self._lstm_stack(width)
        stages += lstm
        stages.append(_Reshape(lambda shape: (shape[0] // s.n_sites, s.n_sites, shape[1])))
        return stages + self._node_head(units)

    def _stages_gcn(self):
        gcn, width = self._gcn_stack(self.spec.h)
        return gcn + self._node_head(width)

    def _stages_mlp(self):
        s = self.spec
        stages = [_Reshape(lambda shape: (shape[0], shape[1] * shape[2]))]
        fan_in = s.n_sites * s.h
        for i, width in enumerate(s.mlp_hidden):
            stages.append(Dense(f"dense{i}", fan_in, width, s.hidden_activation))
            fan_in = width
        return stages + self._head(fan_in)

    def _stages_lstm(self):
        lstm, units = self._lstm_stack(self.spec.n_sites)
        return [_Transpose((2, 0, 1))] + lstm + self._head(units)

    def _stages_cnn(self):
        stages, width = self._cnn_stack()
        return stages + self._head(width)

    def _stages_cnn_lstm(self):
        stages, _ = self._cnn_stack()
        stages.append(_Reshape(lambda shape: (shape[0], shape[1], 1)))
        stages.append(_Transpose((1, 0, 2)))
        lstm, units = self._lstm_stack(1)
        return stages + lstm + self._head(units)


def make_model(spec: ModelSpec, graph=None) -> Model:
    """Model bound to ``graph`` (a SiteGraph or a normalized matrix); graph kinds require one."""
    if graph is None and spec.kind in GRAPH_KINDS:
        raise ValueError(f"{spec.kind} needs a site graph")
    normalized = getattr(graph, "normalized", graph)
    return Model(spec, normalized)


def build(spec: ModelSpec, rng) -> dict[str, np.ndarray]:
    """Freshly initialized parameters for ``spec``."""
    return Model(spec).init_params(rng)


def forward_hybrid(params, graph, window) -> np.ndarray:
    """Forecast N x k from a single N x h window."""
    window = np.asarray(window, dtype=np.float64)
    n, h = window.shape
    shapes = {name: v.shape for name, v in params.items()}
    spec = ModelSpec(
        "hybrid_gcn_lstm",
        h=h,
        k=shapes["head.W"][1],
        n_sites=n,
        gcn_widths=tuple(shapes[f"gcn{i}.W"][1] for i in range(_count(shapes, "gcn"))),
        lstm_units=tuple(shapes[f"lstm{i}.U_F"][0] for i in range(_count(shapes, "lstm"))),
    )
    return make_model(spec, graph).forward(params, window[None])[0][0]


def forward_baseline(params, spec: ModelSpec, window, graph=None) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    return make_model(spec, graph).forward(params, window[None])[0][0]


def _count(shapes, prefix):
    n = 0
    while f"{prefix}{n}.W" in shapes or f"{prefix}{n}.U_F" in shapes:
        n += 1
    return n


# Binary parameter files

MAGIC = b"GCNLSTM\x00"
FORMAT_VERSION = 1


def serialize(params: dict[str, np.ndarray], spec: ModelSpec | None = None) -> bytes:
    """Versioned little-endian dump: header, optional spec JSON, then named float64 tensors."""
    meta = json.dumps(spec.to_dict(), sort_keys=True).encode() if spec is not None else b""
    out = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name, value in params.items():
        raw = name.encode()
        arr = np.ascontiguousarray(value, dtype="<f8")
        out.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = memoryview(data), 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError(f"truncated model payload at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return bytes(chunk)

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> tuple[dict[str, np.ndarray], ModelSpec | None]:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError("not a model file (bad magic header)")
    version, meta_len = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    meta = r.take(meta_len)
    spec = ModelSpec.from_dict(json.loads(meta)) if meta else None
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        name_len, ndim = r.unpack("<HB")
        name = r.take(name_len).decode()
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise ValueError(f"{len(r.data) - r.pos} trailing bytes after the last tensor")
    if spec is not None:
        expected = Model(spec).param_shapes()
        got = {k: v.shape for k, v in params.items()}
        if got != {k: tuple(v) for k, v in expected.items()}:
            raise ValueError("tensor names/shapes disagree with the embedded model spec")
    return params, spec
