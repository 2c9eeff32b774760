"""MAE/RMSE, the persistence baseline and the repeated train/test comparison."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from gcnlstm.data import prepare
from gcnlstm.graph import build_graph
from gcnlstm.models import ModelSpec, make_model
from gcnlstm.training import TrainConfig, select_targets, train

PERSISTENCE = "persistence"


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("metrics need at least one value")
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} observed vs {y_hat.size} forecast")
    return y, y_hat


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def persistence_forecast(window, k: int) -> np.ndarray:
    """Repeat the last observed value of each site ``k`` times: (..., N, h) -> (..., N, k)."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape[-1] < 1:
        raise ValueError("window needs at least one lag")
    return np.repeat(window[..., -1:], k, axis=-1)


@dataclass
class Cell:
    mae: list[float] = field(default_factory=list)
    rmse: list[float] = field(default_factory=list)

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.mae))

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse))


@dataclass
class EvalReport:
    """Test-split metrics in original units, keyed by (model name, horizon k)."""

    cells: dict[tuple[str, int], Cell] = field(default_factory=dict)
    repeats: int = 1
    seed: int = 0

    def cell(self, model: str, k: int) -> Cell:
        return self.cells[(model, k)]

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(m for m, _ in self.cells))

    @property
    def horizons(self) -> list[int]:
        return sorted({k for _, k in self.cells})

    def to_dict(self) -> dict:
        rows = []
        for (model, k), c in self.cells.items():
            rows.append(
                {
                    "model": model,
                    "horizon": k,
                    "mae": c.mean_mae,
                    "rmse": c.mean_rmse,
                    "mae_per_repeat": c.mae,
                    "rmse_per_repeat": c.rmse,
                }
            )
        return {"repeats": self.repeats, "seed": self.seed, "results": rows}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        """Table layout: one row per (horizon, metric), one column per model."""
        models = self.models
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "metric", *models])
            for k in self.horizons:
                for metric in ("mae", "rmse"):
                    row = []
                    for m in models:
                        c = self.cells.get((m, k))
                        row.append("" if c is None else repr(getattr(c, f"mean_{metric}")))
                    w.writerow([k, metric, *row])


def _to_original(scaler, spec: ModelSpec, scaled):
    """Invert min-max scaling for (S, N_out, k) arrays."""
    span = scaler.maxs - scaler.mins
    span = np.where(span == 0, 1.0, span)
    mins = scaler.mins
    if spec.target_site is not None:
        span = span[spec.target_site : spec.target_site + 1]
        mins = mins[spec.target_site : spec.target_site + 1]
    return scaled * span[:, None] + mins[:, None]


def model_name(spec: ModelSpec) -> str:
    return spec.kind


def evaluate(
    specs,
    table,
    repeats: int = 5,
    seed: int = 0,
    train_config: TrainConfig | None = None,
    graph=None,
    tags=None,
    include_persistence: bool = True,
    zero_diagonal: bool = False,
) -> EvalReport:
    """Train every spec ``repeats`` times (seeds seed+1 .. seed+repeats) and score the test split.

    The graph, when not given, is the Pearson graph of the scaled training rows.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    train_config = train_config or TrainConfig()
    report = EvalReport(repeats=repeats, seed=seed)
    baselines = {}
    for spec in specs:
        prep = prepare(table, spec.h, spec.k, tags)
        if prep.test is None:
            raise ValueError(f"no test windows for h={spec.h}, k={spec.k}")
        g = graph
        if g is None:
            train_rows = prep.table.values[prep.tags == "train"]
            g = build_graph(prep.scaler.apply(train_rows), table.sites, zero_diagonal=zero_diagonal)
        model = make_model(spec, g)
        truth = _to_original(prep.scaler, spec, select_targets(spec, prep.test.targets))
        cell = report.cells.setdefault((model_name(spec), spec.k), Cell())
        for r in range(1, repeats + 1):
            params, _ = train(spec, g, prep, replace(train_config, seed=seed + r))
            pred = _to_original(prep.scaler, spec, model.predict(params, prep.test.inputs))
            cell.mae.append(mae(truth, pred))
            cell.rmse.append(rmse(truth, pred))
        if include_persistence and spec.k not in baselines:
            base = select_targets(spec, persistence_forecast(prep.test.inputs, spec.k))
            pred = _to_original(prep.scaler, spec, base)
            baselines[spec.k] = Cell([mae(truth, pred)] * repeats, [rmse(truth, pred)] * repeats)
    # persistence is deterministic: one score repeated, listed after the trained models
    for k, cell in baselines.items():
        report.cells[(PERSISTENCE, k)] = cell
    return report
