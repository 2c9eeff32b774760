"""Mini-batch training loop with MAE/MSE losses and per-epoch loss history."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from gcnlstm.models import ModelSpec, make_model
from gcnlstm.numerics import make_rng
from gcnlstm.optim import OptimizerConfig, OptimizerState, step

log = logging.getLogger(__name__)

LOSSES = ("mae", "mse")


class TrainingDiverged(FloatingPointError):
    """Loss or gradient became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    loss: str = "mae"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    patience: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopped_early: bool = False
    wall_time: float = field(default=0.0, compare=False)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def converged(self, ratio: float = 0.5) -> bool:
        """Final train loss at most ``ratio`` times the first epoch's."""
        return self.train_loss[-1] <= ratio * self.train_loss[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, tr in enumerate(self.train_loss):
                va = self.val_loss[i] if i < len(self.val_loss) else float("nan")
                w.writerow([i + 1, repr(tr), repr(va)])


def loss(kind: str, pred, target) -> tuple[float, np.ndarray]:
    """Mean loss over all entries and its gradient with respect to ``pred``.

    The MAE subgradient at a zero residual is 0.
    """
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    if kind == "mae":
        return float(np.abs(diff).mean()), np.sign(diff) / n
    if kind == "mse":
        return float((diff * diff).mean()), 2.0 * diff / n
    raise ValueError(f"unknown loss {kind!r}")


def fit(model, x, y, config: TrainConfig, val=None, params=None) -> tuple[dict, TrainReport]:
    """Train ``model`` (anything with init_params/forward/backward) on arrays ``x``, ``y``."""
    rng = make_rng(config.seed)
    if params is None:
        params = model.init_params(rng)
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("no training samples")
    opt_state = OptimizerState()
    report = TrainReport()
    best, best_val, waited = params, np.inf, 0
    started = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for b, start in enumerate(range(0, n, config.batch_size)):
                idx = order[start : start + config.batch_size]
                pred, cache = model.forward(params, x[idx])
                value, dpred = loss(config.loss, pred, y[idx])
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite {config.loss} loss at epoch {epoch}, batch {b + 1} "
                        f"(lr={config.optimizer.lr}, optimizer={config.optimizer.kind}, "
                        f"max |param| = {_max_abs(params):.3g})"
                    )
                grads = model.backward(params, cache, dpred)
                try:
                    params, opt_state = step(config.optimizer, opt_state, params, grads)
                except FloatingPointError as exc:
                    raise TrainingDiverged(f"epoch {epoch}, batch {b + 1}: {exc}") from None
                total += value * len(idx)
            report.train_loss.append(total / n)
            if val is not None:
                vx, vy = val
                report.val_loss.append(loss(config.loss, _predict(model, params, vx), vy)[0])
            log.debug("epoch %d train %.6g val %s", epoch, report.train_loss[-1], report.val_loss[-1:] or "-")
            if config.patience and val is not None:
                if report.val_loss[-1] < best_val:
                    best, best_val, waited = params, report.val_loss[-1], 0
                else:
                    waited += 1
                    if waited >= config.patience:
                        report.stopped_early = True
                        params = best
                        break
    report.wall_time = time.perf_counter() - started
    return params, report


def _predict(model, params, x):
    if hasattr(model, "predict"):
        return model.predict(params, x)
    return model.forward(params, x)[0]


def _max_abs(params):
    return max((float(np.nanmax(np.abs(v))) for v in params.values() if v.size), default=0.0)


def select_targets(spec: ModelSpec, targets):
    """Restrict (S, N, k) targets to the model spec's output sites."""
    if spec.target_site is None:
        return targets
    return targets[:, spec.target_site : spec.target_site + 1, :]


def train(spec: ModelSpec, graph, dataset, config: TrainConfig) -> tuple[dict, TrainReport]:
    """Train a model of ``spec`` on a prepared dataset (``.train`` and optional ``.val``)."""
    model = make_model(spec, graph)
    tr = dataset.train
    val = None
    if getattr(dataset, "val", None) is not None:
        val = (dataset.val.inputs, select_targets(spec, dataset.val.targets))
    return fit(model, tr.inputs, select_targets(spec, tr.targets), config, val=val)
