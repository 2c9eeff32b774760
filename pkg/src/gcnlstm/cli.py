"""Command-line front end: ``gcnlstm {synth,graph,train,eval,sweep}``.

Every command reads an optional JSON config, applies flag overrides (flags win),
validates the merged config against a schema, and writes its artifacts into
``--out`` together with a ``<artifact>.provenance.json`` sidecar.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure,
5 output conflict (existing artifact would change; pass --force).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from gcnlstm import __version__
from gcnlstm.data import (
    DataError,
    SynthConfig,
    fit_scaler,
    load_csv,
    prepare,
    seasonal_split,
    synth_generate,
    write_csv,
)
from gcnlstm.evaluation import evaluate
from gcnlstm.graph import build_graph, graph_from_adjacency, read_adjacency_csv, write_adjacency_csv
from gcnlstm.models import KINDS, ModelSpec, serialize
from gcnlstm.numerics import make_rng
from gcnlstm.optim import KINDS as OPTIMIZERS
from gcnlstm.sweep import AXES, SweepPlan, read_ledger, run_sweep, train_config_from_dict
from gcnlstm.training import TrainConfig, train

log = logging.getLogger("gcnlstm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CONFLICT = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


class OutputConflict(RuntimeError):
    pass


_POS_INT = {"type": "integer", "minimum": 1}
_WIDTHS = {"type": "array", "items": _POS_INT, "minItems": 1}

_SYNTH = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_sites": {"type": "integer", "minimum": 2},
        "n_rows": {"type": "integer", "minimum": 3},
        "coupling": {"type": "number"},
        "noise": {"type": "number", "minimum": 0},
        "ar1": {"type": "number"},
        "ar2": {"type": "number"},
        "lag": _POS_INT,
        "diurnal": {"type": "boolean"},
        "level": {"type": "number"},
        "scale": {"type": "number"},
        "step_minutes": _POS_INT,
        "start": {"type": "string"},
        "burn_in": {"type": "integer", "minimum": 0},
    },
}

_DATA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "csv": {"type": "string"},
        "timestamp_column": {"type": "string"},
        "synth": _SYNTH,
    },
}

_GRAPH = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "adjacency": {"type": "string"},
        "zero_diagonal": {"type": "boolean"},
        "min_std": {"type": "number", "exclusiveMinimum": 0},
    },
}

_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "h": _POS_INT,
        "k": _POS_INT,
        "n_sites": _POS_INT,
        "gcn_widths": _WIDTHS,
        "lstm_units": _WIDTHS,
        "mlp_hidden": _WIDTHS,
        "conv_filters": _WIDTHS,
        "kernel_size": _POS_INT,
        "pool_size": _POS_INT,
        "gcn_activation": {"type": "string"},
        "hidden_activation": {"type": "string"},
        "output_activation": {"type": "string"},
        "target_site": {"type": ["integer", "null"], "minimum": 0},
    },
}

_OPTIMIZER = {
    "oneOf": [
        {"enum": list(OPTIMIZERS)},
        {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(OPTIMIZERS)},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "beta1": {"type": "number"},
                "beta2": {"type": "number"},
                "rho": {"type": "number"},
                "eps": {"type": "number"},
                "clip_norm": {"type": ["number", "null"]},
            },
        },
    ]
}

_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "epochs": _POS_INT,
        "batch_size": _POS_INT,
        "loss": {"enum": ["mae", "mse"]},
        "optimizer": _OPTIMIZER,
        "patience": {"type": "integer", "minimum": 0},
    },
}

_EVAL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "models": {"type": "array", "items": _MODEL, "minItems": 1},
        "repeats": _POS_INT,
        "include_persistence": {"type": "boolean"},
    },
}

_SWEEP = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "axis": {"enum": list(AXES)},
        "values": {"type": "array", "minItems": 1},
        "points": {"type": "array", "minItems": 1, "items": {"type": "object"}},
        "repeats": _POS_INT,
        "workers": _POS_INT,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "data": _DATA,
        "graph": _GRAPH,
        "model": _MODEL,
        "train": _TRAIN,
        "eval": _EVAL,
        "sweep": _SWEEP,
    },
}


# config handling


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def validate(cfg: dict) -> None:
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg))
    if err is not None:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {err.message}")


def _set(cfg, section, key, value):
    if value is not None:
        cfg.setdefault(section, {})[key] = value


def apply_overrides(cfg: dict, args) -> dict:
    """Merge command-line flags into ``cfg``; flags win."""
    cfg = json.loads(json.dumps(cfg))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "data", None) is not None:
        cfg["data"] = {"csv": args.data}
    if getattr(args, "adjacency", None) is not None:
        _set(cfg, "graph", "adjacency", args.adjacency)
    if getattr(args, "zero_diagonal", False):
        _set(cfg, "graph", "zero_diagonal", True)
    for flag, key in (("rows", "n_rows"), ("sites", "n_sites"), ("coupling", "coupling"), ("noise", "noise")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg.setdefault("data", {}).setdefault("synth", {})[key] = v
    for flag in ("kind", "h", "k"):
        _set(cfg, "model", flag, getattr(args, flag, None))
    for flag in ("epochs", "batch_size", "loss"):
        _set(cfg, "train", flag, getattr(args, flag, None))
    lr, opt = getattr(args, "lr", None), getattr(args, "optimizer", None)
    if lr is not None or opt is not None:
        current = cfg.setdefault("train", {}).get("optimizer", {})
        current = {"kind": current} if isinstance(current, str) else dict(current)
        if lr is not None:
            current["lr"] = lr
        if opt is not None:
            current["kind"] = opt
        cfg["train"]["optimizer"] = current
    _set(cfg, "eval", "repeats", getattr(args, "repeats", None) if args.command == "eval" else None)
    if args.command == "sweep":
        _set(cfg, "sweep", "repeats", getattr(args, "repeats", None))
        _set(cfg, "sweep", "workers", getattr(args, "workers", None))
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# artifacts


class Output:
    """Writes artifacts atomically; refuses to change existing bytes unless forced."""

    def __init__(self, directory, command: str, cfg: dict, force: bool = False):
        self.dir = Path(directory)
        self.command = command
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.force = force
        self.written: list[Path] = []

    def check(self, names) -> None:
        """Fail fast if this command already wrote an artifact here under a different config.

        Artifacts left by other commands are compared byte for byte at write time instead.
        """
        if self.force:
            return
        for name in names:
            side = self.dir / f"{name}.provenance.json"
            if side.exists():
                meta = json.loads(side.read_text())
                if meta.get("command") == self.command and meta.get("config_sha256") != self.hash:
                    raise OutputConflict(f"{self.dir / name} was produced by a different config; use --force to overwrite")

    def write(self, name: str, data: bytes) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        if path.exists() and not self.force and path.read_bytes() != data:
            raise OutputConflict(f"{path} exists with different content; use --force to overwrite")
        _atomic_write(path, data)
        side = {
            "artifact": name,
            "command": self.command,
            "config_sha256": self.hash,
            "seed": self.cfg.get("seed", 0),
            "version": __version__,
            "sha256": hashlib.sha256(data).hexdigest(),
        }
        _atomic_write(self.dir / f"{name}.provenance.json", (json.dumps(side, indent=2, sort_keys=True) + "\n").encode())
        self.written.append(path)
        return path

    def write_via(self, name: str, writer) -> Path:
        """Render with ``writer(path)`` into a scratch file, then commit its bytes."""
        with tempfile.TemporaryDirectory() as tmp:
            scratch = Path(tmp) / name
            writer(scratch)
            return self.write(name, scratch.read_bytes())


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# pipeline pieces


def _table(cfg):
    data = cfg.get("data")
    if not data:
        raise ConfigError("no data source: give data.csv, data.synth or --data")
    if "csv" in data and "synth" in data:
        raise ConfigError("data.csv and data.synth are mutually exclusive")
    if "csv" in data:
        try:
            return load_csv(data["csv"], data.get("timestamp_column"))
        except OSError as exc:
            raise DataError(f"cannot read {data['csv']}: {exc.strerror}") from None
    return synth_generate(_synth_config(data["synth"]), make_rng(cfg.get("seed", 0)))


def _synth_config(d):
    try:
        return SynthConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"data.synth: {exc}") from None


def _graph(cfg, table, tags):
    g = cfg.get("graph", {})
    if "adjacency" in g:
        try:
            adj, sites = read_adjacency_csv(g["adjacency"])
        except OSError as exc:
            raise DataError(f"cannot read {g['adjacency']}: {exc.strerror}") from None
        if tuple(sites) != tuple(table.sites):
            raise DataError(f"adjacency sites {list(sites)} do not match data sites {list(table.sites)}")
        return graph_from_adjacency(adj, sites)
    train_rows = table.values[tags == "train"]
    scaled = fit_scaler(table, tags).apply(train_rows)
    return build_graph(scaled, table.sites, min_std=g.get("min_std", 1e-9), zero_diagonal=g.get("zero_diagonal", False))


def _spec(d, table) -> ModelSpec:
    d = dict(d or {})
    if d.setdefault("n_sites", table.n_sites) != table.n_sites:
        raise ConfigError(f"model.n_sites={d['n_sites']} but the data has {table.n_sites} sites")
    try:
        return ModelSpec.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None


def _train_config(cfg) -> TrainConfig:
    try:
        tc = train_config_from_dict(cfg.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None
    return replace(tc, seed=cfg.get("seed", 0))


def _adjacency_bytes(graph) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "a.csv"
        write_adjacency_csv(p, graph.adjacency, graph.sites)
        return p.read_bytes()


# commands


def cmd_synth(cfg, out: Output):
    out.check(["data.csv"])
    cfg.setdefault("data", {}).setdefault("synth", {})
    if "csv" in cfg["data"]:
        raise ConfigError("synth generates data; drop data.csv")
    table = _table(cfg)
    path = out.write_via("data.csv", lambda p: write_csv(p, table))
    log.info("wrote %s (%d rows x %d sites)", path, table.n_rows, table.n_sites)


def cmd_graph(cfg, out: Output):
    out.check(["adjacency.csv"])
    table = _table(cfg)
    graph = _graph(cfg, table, seasonal_split(table))
    path = out.write("adjacency.csv", _adjacency_bytes(graph))
    log.info("wrote %s", path)


def cmd_train(cfg, out: Output):
    names = ["model.bin", "loss.csv", "adjacency.csv"]
    out.check(names)
    table = _table(cfg)
    spec = _spec(cfg.get("model"), table)
    tc = _train_config(cfg)
    prep = prepare(table, spec.h, spec.k)
    graph = _graph(cfg, table, prep.tags)
    params, report = train(spec, graph, prep, tc)
    blob = serialize(params, spec)
    out.write("model.bin", blob)
    out.write_via("loss.csv", report.to_csv)
    out.write("adjacency.csv", _adjacency_bytes(graph))
    log.info(
        "trained %s for %d epochs: loss %.6g -> %.6g (%s)",
        spec.kind, report.epochs, report.train_loss[0], report.train_loss[-1],
        "converged" if report.converged() else "not converged",
    )


def cmd_eval(cfg, out: Output):
    out.check(["report.csv", "report.json"])
    table = _table(cfg)
    ev = cfg.get("eval", {})
    base = cfg.get("model", {})
    models = ev.get("models") or [base or {"kind": "hybrid_gcn_lstm"}, {**base, "kind": "mlp"}]
    specs = []
    for m in models:
        d = dict(m)
        for key in ("h", "k"):
            if key in base and key not in d:
                d[key] = base[key]
        specs.append(_spec(d, table))
    tags = seasonal_split(table)
    graph = _graph(cfg, table, tags)
    report = evaluate(
        specs, table,
        repeats=ev.get("repeats", 5), seed=cfg.get("seed", 0), train_config=_train_config(cfg),
        graph=graph, tags=tags, include_persistence=ev.get("include_persistence", True),
    )
    out.write_via("report.csv", report.to_csv)
    out.write_via("report.json", report.to_json)
    for (model, k), cell in report.cells.items():
        log.info("%-16s k=%d  MAE %.6g  RMSE %.6g", model, k, cell.mean_mae, cell.mean_rmse)


def cmd_sweep(cfg, out: Output):
    out.check(["sweep.csv"])
    table = _table(cfg)
    sw = dict(cfg.get("sweep") or {})
    if not sw:
        raise ConfigError("sweep needs a plan: sweep.axis + sweep.values, or sweep.points")
    workers = sw.pop("workers", 1)
    plan_dict = {**sw, "seed": cfg.get("seed", 0)}
    if "model" in cfg:
        plan_dict["model"] = {**cfg["model"], "n_sites": cfg["model"].get("n_sites", table.n_sites)}
    else:
        plan_dict["model"] = {"kind": "hybrid_gcn_lstm", "gcn_widths": [16, 16], "lstm_units": [32, 32], "n_sites": table.n_sites}
    plan_dict["train"] = {**{"epochs": 100}, **cfg.get("train", {})}
    try:
        plan = SweepPlan.from_dict(plan_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep: {exc}") from None
    _spec(plan.spec.to_dict(), table)
    tags = seasonal_split(table)
    graph = _graph(cfg, table, tags)

    ledger = out.dir / "ledger.csv"
    side = out.dir / "ledger.csv.provenance.json"
    if ledger.exists():
        old = json.loads(side.read_text()).get("config_sha256") if side.exists() else None
        if old != out.hash:
            if not out.force:
                raise OutputConflict(f"{ledger} belongs to a different plan; use --force to start over")
            ledger.unlink()
    out.dir.mkdir(parents=True, exist_ok=True)
    # the sidecar goes first so an interrupted run can still be resumed
    meta = {"artifact": "ledger.csv", "command": "sweep", "config_sha256": out.hash,
            "seed": cfg.get("seed", 0), "version": __version__}
    _atomic_write(side, (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())
    result = run_sweep(plan, table, graph=graph, tags=tags, ledger=ledger, workers=workers)

    def write_table(path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point", "value", "repeats", "failed", "val_mae", "test_mae", "converged", "best"])
            for p in result.table():
                value = json.dumps(list(p["value"]) if plan.axis == "depth" else p["value"])
                w.writerow([p["point"], value, p["repeats"], p["failed"], repr(p["val_mae"]), repr(p["test_mae"]), p["converged"], p["best"]])

    out.write_via("sweep.csv", write_table)
    best = result.best
    log.info("sweep over %s: %d ledger rows, best point %s", plan.axis, len(read_ledger(ledger)),
             "none" if best is None else f"{best} ({plan.values[best]})")


COMMANDS = {"synth": cmd_synth, "graph": cmd_graph, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcnlstm", description="GCN-LSTM renewable power forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true", help="overwrite artifacts that would change")
        p.add_argument("-v", "--verbose", action="store_true")

    def data_flags(p):
        p.add_argument("--data", help="input CSV (replaces the config's data section)")

    def graph_flags(p):
        p.add_argument("--adjacency", help="load this adjacency CSV instead of computing one")
        p.add_argument("--zero-diagonal", action="store_true", help="omit self-correlation from the adjacency")

    def model_flags(p):
        p.add_argument("--kind", choices=KINDS)
        p.add_argument("--h", type=int, help="lookback length")
        p.add_argument("--k", type=int, help="forecast horizon")

    def train_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--loss", choices=("mae", "mse"))
        p.add_argument("--optimizer", choices=OPTIMIZERS)
        p.add_argument("--lr", type=float)

    p = sub.add_parser("synth", help="generate a synthetic ring of sites")
    common(p)
    p.add_argument("--rows", type=int)
    p.add_argument("--sites", type=int)
    p.add_argument("--coupling", type=float)
    p.add_argument("--noise", type=float)

    p = sub.add_parser("graph", help="write the Pearson adjacency of the training rows")
    common(p), data_flags(p), graph_flags(p)

    p = sub.add_parser("train", help="train one model and save it")
    common(p), data_flags(p), graph_flags(p), model_flags(p), train_flags(p)

    p = sub.add_parser("eval", help="repeated train/test comparison of several models")
    common(p), data_flags(p), graph_flags(p), model_flags(p), train_flags(p)
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("sweep", help="one-knob hyperparameter study with a resumable ledger")
    common(p), data_flags(p), graph_flags(p), model_flags(p), train_flags(p)
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        validate(cfg)
        out = Output(args.out, args.command, cfg, force=args.force)
        with np.errstate(all="ignore"):
            COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except FloatingPointError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except OutputConflict as exc:
        log.error("%s", exc)
        return EXIT_CONFLICT
    except ValueError as exc:  # remaining validation failures come from config values
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
