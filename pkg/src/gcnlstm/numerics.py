"""Dense float64 arithmetic, activations, seeded RNG and finite-difference gradient checks.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Random streams come
from numpy's PCG64 bit generator, whose output is specified independently of
platform, so a seed reproduces the same draws everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Rng = np.random.Generator

ACTIVATIONS = ("sigmoid", "tanh", "relu", "identity")


def make_rng(seed: int) -> Rng:
    """PCG64 generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(x, kind: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "identity":
        return x
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_grad(y: np.ndarray, z: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of ``activate(z, kind)`` expressed through output ``y`` where cheaper."""
    if kind == "identity":
        return np.ones_like(z)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "relu":
        return (z > 0).astype(np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def glorot(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


@dataclass(frozen=True)
class GradCheckReport:
    name: str
    max_rel_error: float
    step: float


def relative_error(analytic, numeric) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / denom


def gradient_check(
    f: Callable[[dict], tuple[float, dict]],
    params: dict[str, np.ndarray],
    rng: Rng,
    step: float = 1e-5,
    n_coords: int = 16,
) -> list[GradCheckReport]:
    """Compare analytic gradients from ``f`` with central differences.

    ``f(params)`` must return ``(loss, grads)`` with ``grads`` keyed like ``params``.
    For each tensor, up to ``n_coords`` coordinates are sampled (all of them if the
    tensor is smaller).
    """
    loss, grads = f(params)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss!r} at the check point")
    reports = []
    for name, value in params.items():
        g = np.asarray(grads[name])
        if g.shape != value.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {value.shape}")
        flat_idx = np.arange(value.size)
        if value.size > n_coords:
            flat_idx = rng.choice(value.size, size=n_coords, replace=False)
        worst = 0.0
        for i in flat_idx:
            idx = np.unravel_index(int(i), value.shape)
            numeric = _central_difference(f, params, name, idx, step)
            worst = max(worst, float(relative_error(g[idx], numeric)))
        reports.append(GradCheckReport(name, worst, step))
    return reports


def _central_difference(f, params, name, idx, step) -> float:
    shifted = dict(params)
    plus = params[name].copy()
    plus[idx] += step
    shifted[name] = plus
    f_plus, _ = f(shifted)
    minus = params[name].copy()
    minus[idx] -= step
    shifted[name] = minus
    f_minus, _ = f(shifted)
    if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
        raise FloatingPointError(f"non-finite loss while perturbing {name}{idx}")
    return (f_plus - f_minus) / (2.0 * step)
