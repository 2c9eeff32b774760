"""First-order optimizers sharing one ``step`` interface.

Update rules, with g the gradient, t the 1-based step count and lr the learning rate:

sgd       w -= lr * g
adagrad   G += g^2;                      w -= lr * g / (sqrt(G) + eps)
rmsprop   v = rho v + (1-rho) g^2;       w -= lr * g / (sqrt(v) + eps)
adadelta  v = rho v + (1-rho) g^2;       d = sqrt(D + eps) / sqrt(v + eps) * g
          D = rho D + (1-rho) d^2;       w -= lr * d
adam      m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
          w -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
adamax    m as adam;  u = max(b2 u, |g|);  w -= lr / (1-b1^t) * m / (u + eps)
nadam     m, v as adam;  m_bar = b1 m / (1-b1^(t+1)) + (1-b1) g / (1-b1^t)
          w -= lr * m_bar / (sqrt(v / (1-b2^t)) + eps)

Nadam uses the constant-momentum form (Dozat 2016, without the momentum schedule).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# order in which the optimizer study lists them; also the sweep tie-break order
KINDS = ("adam", "sgd", "rmsprop", "adagrad", "adadelta", "adamax", "nadam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8
    clip_norm: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        for name in ("beta1", "beta2", "rho"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0 when set")


@dataclass
class OptimizerState:
    t: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


class Optimizer:
    def __init__(self, config: OptimizerConfig | None = None, **kwargs):
        self.config = config if config is not None else OptimizerConfig(**kwargs)
        self.state = OptimizerState()

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Return updated parameters; ``params`` is left untouched."""
        new, self.state = step(self.config, self.state, params, grads)
        return new


def _slot(state, name, key, like):
    slots = state.slots.setdefault(name, {})
    if key not in slots:
        slots[key] = np.zeros_like(like)
    return slots[key]


def step(config: OptimizerConfig, state: OptimizerState, params, grads):
    """One update. Returns ``(new_params, new_state)``; inputs are not mutated."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")

    c = config
    if c.clip_norm is not None:
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > c.clip_norm:
            grads = {k: g * (c.clip_norm / total) for k, g in grads.items()}

    state = OptimizerState(state.t + 1, {k: {s: v.copy() for s, v in d.items()} for k, d in state.slots.items()})
    t = state.t
    new = dict(params)
    for name, g in grads.items():
        w = params[name]
        if c.kind == "sgd":
            upd = c.lr * g
        elif c.kind == "adagrad":
            acc = _slot(state, name, "G", w)
            acc += g * g
            upd = c.lr * g / (np.sqrt(acc) + c.eps)
        elif c.kind == "rmsprop":
            v = _slot(state, name, "v", w)
            v *= c.rho
            v += (1 - c.rho) * g * g
            upd = c.lr * g / (np.sqrt(v) + c.eps)
        elif c.kind == "adadelta":
            v = _slot(state, name, "v", w)
            D = _slot(state, name, "D", w)
            v *= c.rho
            v += (1 - c.rho) * g * g
            d = np.sqrt(D + c.eps) / np.sqrt(v + c.eps) * g
            D *= c.rho
            D += (1 - c.rho) * d * d
            upd = c.lr * d
        elif c.kind in ("adam", "nadam"):
            m = _slot(state, name, "m", w)
            v = _slot(state, name, "v", w)
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            v_hat = v / (1 - c.beta2**t)
            if c.kind == "adam":
                m_hat = m / (1 - c.beta1**t)
            else:
                m_hat = c.beta1 * m / (1 - c.beta1 ** (t + 1)) + (1 - c.beta1) * g / (1 - c.beta1**t)
            upd = c.lr * m_hat / (np.sqrt(v_hat) + c.eps)
        else:  # adamax
            m = _slot(state, name, "m", w)
            u = _slot(state, name, "u", w)
            m *= c.beta1
            m += (1 - c.beta1) * g
            np.maximum(c.beta2 * u, np.abs(g), out=u)
            upd = c.lr / (1 - c.beta1**t) * m / (u + c.eps)
        new[name] = w - upd
    return new, state
