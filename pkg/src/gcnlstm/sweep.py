"""One-knob-at-a-time hyperparameter studies with a resumable CSV ledger.

Axes: past length ``h``, the ``depth`` grid (GCN layers x LSTM layers), learning
rate ``lr`` and ``optimizer``. Each point is trained ``repeats`` times with seeds
``seed + 1 .. seed + repeats``; the best point minimises mean validation MAE (in
original units), ties going to the smaller h, the shallower network, the smaller
learning rate or the optimizer listed first.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from gcnlstm.data import fit_scaler, prepare, seasonal_split
from gcnlstm.evaluation import _to_original, mae
from gcnlstm.graph import build_graph
from gcnlstm.models import ModelSpec, make_model
from gcnlstm.optim import KINDS as OPTIMIZERS
from gcnlstm.optim import OptimizerConfig
from gcnlstm.training import TrainConfig, select_targets, train

log = logging.getLogger(__name__)

AXES = ("h", "depth", "lr", "optimizer")
LEDGER_FIELDS = (
    "point",
    "axis",
    "value",
    "repeat",
    "seed",
    "status",
    "val_mae",
    "test_mae",
    "first_loss",
    "final_loss",
    "converged",
    "error",
)

# paper-study defaults: 2 GCN + 2 LSTM layers, Adam at 1e-3; 100 epochs at desk scale
DEFAULT_SPEC = ModelSpec("hybrid_gcn_lstm", gcn_widths=(16, 16), lstm_units=(32, 32))
DEFAULT_TRAIN = TrainConfig(epochs=100)


def knobs(spec: ModelSpec, config: TrainConfig) -> dict:
    return {
        "h": spec.h,
        "depth": (len(spec.gcn_widths or ()), len(spec.lstm_units or ())),
        "lr": config.optimizer.lr,
        "optimizer": config.optimizer.kind,
    }


def apply_knob(spec: ModelSpec, config: TrainConfig, axis: str, value):
    if axis == "h":
        return spec.with_(h=int(value)), config
    if axis == "depth":
        if spec.kind != "hybrid_gcn_lstm":
            raise ValueError(f"depth sweeps need the hybrid model, got {spec.kind!r}")
        g, l = (int(v) for v in value)
        return spec.with_(gcn_widths=(spec.gcn_widths[0],) * g, lstm_units=(spec.lstm_units[0],) * l), config
    if axis == "lr":
        return spec, replace(config, optimizer=replace(config.optimizer, lr=float(value)))
    if axis == "optimizer":
        return spec, replace(config, optimizer=replace(config.optimizer, kind=str(value)))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


def tie_key(axis: str, value):
    if axis == "depth":
        g, l = value
        return (g + l, g, l)
    if axis == "optimizer":
        return (OPTIMIZERS.index(value),)
    return (value,)


@dataclass(frozen=True)
class SweepPlan:
    axis: str
    values: tuple
    spec: ModelSpec = DEFAULT_SPEC
    train_config: TrainConfig = DEFAULT_TRAIN
    repeats: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {AXES}")
        if not self.values:
            raise ValueError("a sweep needs at least one value")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        vals = tuple(tuple(int(x) for x in v) if self.axis == "depth" else v for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(set(vals)) != len(vals):
            raise ValueError("sweep values must be distinct")
        self.points()  # validates each value and the one-knob rule

    @classmethod
    def depth_grid(cls, max_gcn=4, max_lstm=4, **kw) -> "SweepPlan":
        values = tuple((g, l) for g in range(1, max_gcn + 1) for l in range(1, max_lstm + 1))
        return cls("depth", values, **kw)

    def points(self) -> list[tuple[ModelSpec, TrainConfig]]:
        pts = [apply_knob(self.spec, self.train_config, self.axis, v) for v in self.values]
        check_one_knob([knobs(s, c) for s, c in pts])
        return pts

    @classmethod
    def from_dict(cls, d: dict) -> "SweepPlan":
        """Build from JSON: either ``axis`` + ``values``, or explicit ``points`` overrides."""
        d = dict(d)
        spec = ModelSpec.from_dict(d.pop("model", {}) or {}) if "model" in d else DEFAULT_SPEC
        tc = train_config_from_dict(d.pop("train")) if "train" in d else DEFAULT_TRAIN
        repeats = int(d.pop("repeats", 1))
        seed = int(d.pop("seed", 0))
        if "points" in d:
            points = d.pop("points")
            if d:
                raise ValueError(f"unknown sweep plan keys: {sorted(d)}")
            axis, values = axis_from_points(points)
        else:
            try:
                axis, values = d.pop("axis"), d.pop("values")
            except KeyError as exc:
                raise ValueError(f"sweep plan missing {exc.args[0]!r}") from None
            if d:
                raise ValueError(f"unknown sweep plan keys: {sorted(d)}")
        return cls(axis, tuple(values), spec, tc, repeats, seed)


def check_one_knob(configs: list[dict]) -> None:
    """Every pair of point configs must differ in exactly one knob."""
    for i in range(len(configs)):
        for j in range(i + 1, len(configs)):
            diff = [k for k in configs[i] if configs[i][k] != configs[j][k]]
            if len(diff) != 1:
                raise ValueError(f"points {i} and {j} differ in {diff or 'nothing'}; exactly one knob may vary")


def axis_from_points(points: list[dict]) -> tuple[str, list]:
    if not points:
        raise ValueError("a sweep needs at least one point")
    varied = set()
    for p in points:
        unknown = set(p) - set(AXES)
        if unknown:
            raise ValueError(f"unknown knobs in sweep point: {sorted(unknown)}")
        varied |= set(p)
    if len(varied) != 1:
        raise ValueError(f"sweep points vary {sorted(varied)}; exactly one knob may vary")
    axis = varied.pop()
    if any(axis not in p for p in points):
        raise ValueError(f"every point must set {axis!r}")
    return axis, [p[axis] for p in points]


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    opt = d.pop("optimizer", None)
    unknown = set(d) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown train keys: {sorted(unknown)}")
    if opt is not None:
        if isinstance(opt, str):
            opt = {"kind": opt}
        bad = set(opt) - set(OptimizerConfig.__dataclass_fields__)
        if bad:
            raise ValueError(f"unknown optimizer keys: {sorted(bad)}")
        d["optimizer"] = OptimizerConfig(**opt)
    return TrainConfig(**d)


@dataclass
class SweepResult:
    axis: str
    values: list
    rows: list[dict] = field(default_factory=list)

    def point_summary(self) -> list[dict]:
        out = []
        for i, v in enumerate(self.values):
            rows = [r for r in self.rows if int(r["point"]) == i]
            ok = [r for r in rows if r["status"] == "ok"]
            out.append(
                {
                    "point": i,
                    "value": v,
                    "repeats": len(rows),
                    "failed": len(rows) - len(ok),
                    "val_mae": float(np.mean([float(r["val_mae"]) for r in ok])) if ok else math.nan,
                    "test_mae": float(np.mean([float(r["test_mae"]) for r in ok])) if ok else math.nan,
                    "converged": bool(ok) and all(r["converged"] in (True, "True", "1") for r in ok),
                }
            )
        return out

    @property
    def best(self) -> int | None:
        """Index of the winning point (None if every point failed)."""
        cands = [p for p in self.point_summary() if not math.isnan(p["val_mae"])]
        if not cands:
            return None
        return min(cands, key=lambda p: (p["val_mae"], tie_key(self.axis, p["value"])))["point"]

    def table(self) -> list[dict]:
        best = self.best
        return [dict(p, best=p["point"] == best) for p in self.point_summary()]


def _ledger_value(axis, value):
    return json.dumps(list(value) if axis == "depth" else value)


def read_ledger(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _run_point(args):
    """Train and score one (point, repeat). Top-level so worker processes can pickle it."""
    point, repeat, spec, config, table, tags, graph, axis, value = args
    seed = config.seed + repeat
    row = {"point": point, "axis": axis, "value": _ledger_value(axis, value), "repeat": repeat, "seed": seed}
    try:
        prep = prepare(table, spec.h, spec.k, tags)
        params, report = train(spec, graph, prep, replace(config, seed=seed))
        model = make_model(spec, graph)
        scores = {}
        for split in ("val", "test"):
            ds = getattr(prep, split)
            if ds is None:
                scores[split] = math.nan
                continue
            truth = _to_original(prep.scaler, spec, select_targets(spec, ds.targets))
            pred = _to_original(prep.scaler, spec, model.predict(params, ds.inputs))
            scores[split] = mae(truth, pred)
        row.update(
            status="ok",
            val_mae=repr(scores["val"]),
            test_mae=repr(scores["test"]),
            first_loss=repr(report.train_loss[0]),
            final_loss=repr(report.train_loss[-1]),
            converged=str(report.converged()),
            error="",
        )
    except Exception as exc:  # a failed point is recorded, the sweep goes on
        log.warning("sweep point %s repeat %s failed: %s", point, repeat, exc)
        row.update(
            status="failed", val_mae="nan", test_mae="nan", first_loss="nan", final_loss="nan",
            converged="False", error=f"{type(exc).__name__}: {exc}".replace("\n", " "),
        )
    return {k: str(v) for k, v in row.items()}


def run_sweep(plan: SweepPlan, table, graph=None, tags=None, ledger=None, workers: int = 1) -> SweepResult:
    """Run every (point, repeat) not already present in ``ledger`` and return the full table."""
    tags = seasonal_split(table) if tags is None else np.asarray(tags)
    if graph is None:
        scaler = fit_scaler(table, tags)
        graph = build_graph(scaler.apply(table.values[tags == "train"]), table.sites)
    done = {}
    for r in read_ledger(ledger) if ledger else []:
        done[(int(r["point"]), int(r["repeat"]))] = r
    base_seed = plan.seed
    jobs = []
    for i, (spec, config) in enumerate(plan.points()):
        config = replace(config, seed=base_seed)
        for rep in range(1, plan.repeats + 1):
            if (i, rep) not in done:
                jobs.append((i, rep, spec, config, table, tags, graph, plan.axis, plan.values[i]))

    lock = threading.Lock()
    new_file = ledger is not None and not Path(ledger).exists()

    def record(row):
        done[(int(row["point"]), int(row["repeat"]))] = row
        if ledger is None:
            return
        with lock, open(ledger, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LEDGER_FIELDS, lineterminator="\n")
            nonlocal new_file
            if new_file:
                w.writeheader()
                new_file = False
            w.writerow(row)
            fh.flush()
            os.fsync(fh.fileno())

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_point, jobs):
                record(row)
    else:
        for job in jobs:
            record(_run_point(job))

    rows = [done[key] for key in sorted(done)]
    return SweepResult(plan.axis, list(plan.values), rows)
