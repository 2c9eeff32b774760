"""Acceptance suite: one recorded PASS/FAIL line per criterion (see the terminal summary).

Measured numbers are also written to ``acceptance_artifacts/`` for inspection; the
reference run that froze the thresholds lives in ``tests/reference_run.json``.

Run alone with ``pytest tests/test_acceptance.py -v``; the slow criteria (4 to 6)
take roughly a quarter of an hour on one core.
"""

import csv
import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from gcnlstm.cli import main as cli_main
from gcnlstm.data import SeriesTable, SynthConfig, make_windows, prepare, season_blocks, seasonal_split, split_sizes, synth_generate
from gcnlstm.evaluation import PERSISTENCE, evaluate, mae, rmse
from gcnlstm.graph import build_graph, normalize
from gcnlstm.layers import LSTM, Conv1D, Dense, GraphConv, MaxPool1D
from gcnlstm.models import ModelSpec, build, forward_hybrid, make_model
from gcnlstm.numerics import gradient_check, make_rng
from gcnlstm.optim import KINDS, OptimizerConfig
from gcnlstm.training import TrainConfig, TrainingDiverged, train

ARTIFACTS = Path(__file__).resolve().parent.parent / "acceptance_artifacts"
SHIPPED = SynthConfig()  # N=8, T=2000
SHIPPED_SEED = 42
MARGIN = 0.95  # hybrid must be at least 5% below each baseline
_RUNS = {}


def save(name, payload):
    ARTIFACTS.mkdir(exist_ok=True)
    (ARTIFACTS / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@pytest.fixture(scope="module")
def shipped():
    table = synth_generate(SHIPPED, make_rng(SHIPPED_SEED))
    prep = prepare(table, 6, 1)
    graph = build_graph(prep.scaler.apply(table.values[prep.tags == "train"]), table.sites)
    return table, prep, graph


def shipped_run(shipped, kind="adam", lr=1e-3):
    """Hybrid on the shipped scenario for 100 epochs; cached so criteria 4 and 5 share runs."""
    key = (kind, lr)
    if key not in _RUNS:
        _, prep, graph = shipped
        cfg = TrainConfig(epochs=100, optimizer=OptimizerConfig(kind, lr=lr), seed=SHIPPED_SEED)
        try:
            _RUNS[key] = train(ModelSpec(), graph, prep, cfg)[1]
        except TrainingDiverged as exc:
            _RUNS[key] = exc
    return _RUNS[key]


# 1


def _layer_error(layer, x, rng):
    p = {k: v + rng.uniform(-0.5, 0.5, v.shape) for k, v in layer.init(rng).items()}
    target = rng.uniform(-1, 1, layer.forward(p, x)[0].shape)

    def f(params):
        pp = {k: v for k, v in params.items() if k != "x"}
        y, cache = layer.forward(pp, params["x"])
        d = y - target
        dx, grads = layer.backward(pp, cache, d)
        return 0.5 * float((d * d).sum()), {**grads, "x": dx}

    return max(r.max_rel_error for r in gradient_check(f, {**p, "x": x}, rng))


def _hybrid_error(rng):
    n, h, k = 4, 4, 2
    a = rng.uniform(0, 1, (n, n))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 1.0)
    model = make_model(ModelSpec(h=h, k=k, n_sites=n, gcn_widths=(5, 4), lstm_units=(6, 3)), normalize(a))
    params = {key: v + rng.uniform(-0.3, 0.3, v.shape) for key, v in model.init_params(rng).items()}
    x, y = rng.uniform(0, 1, (3, n, h)), rng.uniform(0, 1, (3, n, k))

    def f(p):
        pred, cache = model.forward(p, x)
        d = pred - y
        return 0.5 * float((d * d).sum()), model.backward(p, cache, d)

    return max(r.max_rel_error for r in gradient_check(f, params, rng))


def test_criterion_1_gradients(criterion):
    start = time.perf_counter()
    rng = make_rng(2024)
    a_norm = normalize(np.full((5, 5), 0.3))
    errors = {
        "gcn": _layer_error(GraphConv("g", 3, 4, a_norm), rng.uniform(-1, 1, (2, 5, 3)), rng),
        "lstm": _layer_error(LSTM("l", 3, 4, return_sequence=True), rng.uniform(-1, 1, (4, 2, 3)), rng),
        "dense": _layer_error(Dense("d", 4, 3, "tanh"), rng.uniform(-1, 1, (5, 4)), rng),
        "conv1d": _layer_error(Conv1D("c", 3, 4, kernel_size=2, activation="tanh"), rng.uniform(-1, 1, (2, 6, 3)), rng),
        "maxpool1d": _layer_error(MaxPool1D("p", 2), rng.uniform(-1, 1, (2, 7, 3)), rng),
        "hybrid_h4": _hybrid_error(rng),
    }
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    detail = f"max rel error {worst:.2e} (< 1e-5) over {sorted(errors)}; {elapsed:.1f}s (< 60s)"
    criterion(1, worst < 1e-5 and elapsed < 60, detail)


# 2


def _oracle_normalize(a):
    n = len(a)
    a_hat = [[a[i][j] + (1.0 if i == j else 0.0) for j in range(n)] for i in range(n)]
    deg = [math.fsum(row) for row in a_hat]
    return np.array([[a_hat[i][j] / math.sqrt(deg[i] * deg[j]) for j in range(n)] for i in range(n)])


def test_criterion_2_normalization(criterion):
    hand = normalize(np.array([[0.0, 1.0], [1.0, 0.0]]))
    hand_err = float(np.abs(hand - 0.5).max())
    rng = make_rng(7)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 10))
        a = rng.uniform(0, 1, (n, n))
        a = (a + a.T) / 2
        worst = max(worst, float(np.abs(normalize(a) - _oracle_normalize(a.tolist())).max()))
    detail = f"hand case err {hand_err:.1e}, oracle max err {worst:.1e} on 20 matrices (tol 1e-12)"
    criterion(2, hand_err <= 1e-12 and worst <= 1e-12, detail)


# 3


def test_criterion_3_metrics(criterion):
    m, r = mae([1, 2], [2, 4]), rmse([1, 2], [2, 4])
    hand_ok = abs(m - 1.5) <= 1e-12 and abs(r - math.sqrt(2.5)) <= 1e-12
    rng = make_rng(3)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        y, y_hat = rng.normal(0, 10, n), rng.normal(0, 10, n)
        violations += rmse(y, y_hat) < mae(y, y_hat) * (1 - 1e-15)
    detail = f"MAE {m!r}, RMSE {r!r}; RMSE < MAE in {violations}/1000 fuzzed vectors"
    criterion(3, hand_ok and violations == 0, detail)


# 4


def test_criterion_4_learning_rate(criterion, shipped):
    start = time.perf_counter()
    good, bad = shipped_run(shipped, lr=1e-3), shipped_run(shipped, lr=1e2)
    elapsed = time.perf_counter() - start
    good_ok = good.converged()
    bad_ok = isinstance(bad, TrainingDiverged) or not bad.converged()
    bad_desc = "diverged" if isinstance(bad, TrainingDiverged) else f"final/first {bad.train_loss[-1] / bad.train_loss[0]:.3f}"
    save("criterion4.json", {
        "lr_1e-3": good.train_loss,
        "lr_1e2": None if isinstance(bad, TrainingDiverged) else bad.train_loss,
    })
    detail = (f"lr=1e-3 final/first {good.train_loss[-1] / good.train_loss[0]:.3f} (need <= 0.5); "
              f"lr=1e2 {bad_desc} (need > 0.5); {elapsed:.0f}s (< 600s)")
    criterion(4, good_ok and bad_ok and elapsed < 600, detail)


# 5


def test_criterion_5_optimizers(criterion, shipped):
    curves, ratios = {}, {}
    for kind in KINDS:
        run = shipped_run(shipped, kind)
        if isinstance(run, TrainingDiverged):
            ratios[kind] = math.inf
            continue
        curves[kind] = run.train_loss
        ratios[kind] = run.train_loss[-1] / run.train_loss[0]
    ARTIFACTS.mkdir(exist_ok=True)
    with open(ARTIFACTS / "optimizer_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", *curves])
        for e in range(100):
            w.writerow([e + 1, *(repr(c[e]) for c in curves.values())])
    required = ("adam", "rmsprop", "adamax", "nadam")
    ok = all(ratios[k] <= 0.5 for k in required)
    detail = "final/first " + ", ".join(f"{k} {ratios[k]:.3f}" for k in KINDS) + f"; required {required} <= 0.5"
    criterion(5, ok, detail)


# 6


def test_criterion_6_table_ordering(criterion, shipped):
    table, _, graph = shipped
    start = time.perf_counter()
    report = evaluate([ModelSpec(), ModelSpec("mlp")], table, repeats=5, seed=SHIPPED_SEED,
                      train_config=TrainConfig(epochs=100), graph=graph)
    elapsed = time.perf_counter() - start
    hybrid = report.cell("hybrid_gcn_lstm", 1).mean_mae
    mlp = report.cell("mlp", 1).mean_mae
    persistence = report.cell(PERSISTENCE, 1).mean_mae
    save("criterion6.json", {**report.to_dict(), "elapsed_s": round(elapsed, 1)})
    ok = hybrid <= MARGIN * mlp and hybrid <= MARGIN * persistence and elapsed < 1800
    detail = (f"mean test MAE hybrid {hybrid:.4f}, mlp {mlp:.4f} (ratio {hybrid / mlp:.3f}), "
              f"persistence {persistence:.4f} (ratio {hybrid / persistence:.3f}); need both <= {MARGIN}; {elapsed:.0f}s")
    criterion(6, ok, detail)


# 7


def test_criterion_7_determinism(criterion, tmp_path):
    cfg = {"seed": 11, "data": {"synth": {}}, "train": {"epochs": 10}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    codes = [cli_main(["train", "--config", str(path), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = {
        name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for name in ("model.bin", "loss.csv")
    }
    criterion(7, codes == [0, 0] and all(same.values()), f"exit codes {codes}; byte-identical {same}")


# 8


def test_criterion_8_split_protocol(criterion):
    stamps = np.arange("2007-01-01T00", "2009-01-01T00", dtype="datetime64[h]").astype("datetime64[s]")
    table = SeriesTable(stamps, make_rng(0).uniform(0, 1, (len(stamps), 2)), ("a", "b"))
    tags = seasonal_split(table)
    blocks = season_blocks(stamps)
    layout_ok = True
    for a, b in blocks:
        n_train, n_val, n_test = split_sizes(b - a)
        layout_ok &= list(tags[a:b]) == ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
        layout_ok &= n_train == (8 * (b - a)) // 10
    block_of = np.empty(len(stamps), dtype=int)
    for i, (a, b) in enumerate(blocks):
        block_of[a:b] = i
    crossing, total = 0, 0
    h, k = 6, 3
    for split in ("train", "val", "test"):
        ds = make_windows(table, None, h, k, split, tags)
        for r in ds.rows:
            span = slice(r - h + 1, r + k + 1)
            total += 1
            crossing += len(set(tags[span])) != 1 or tags[r] != split or len(set(block_of[span])) != 1
    detail = f"{len(blocks)} season-year blocks split 80/10/10: {layout_ok}; {crossing}/{total} windows cross a boundary"
    criterion(8, layout_ok and crossing == 0 and total > 0, detail)


# 9


def test_criterion_9_permutation_equivariance(criterion):
    worst = 0.0
    for seed in range(10):
        rng = make_rng(seed)
        n, h, k = int(rng.integers(3, 9)), int(rng.integers(2, 7)), int(rng.integers(1, 4))
        graph = build_graph(rng.normal(size=(50, n)) @ rng.normal(size=(n, n)))
        params = build(ModelSpec(h=h, k=k, n_sites=n, gcn_widths=(5, 4), lstm_units=(6,)), rng)
        window = rng.uniform(0, 1, (n, h))
        perm = rng.permutation(n)
        out = forward_hybrid(params, graph, window)
        out_p = forward_hybrid(params, graph.permuted(perm), window[perm])
        worst = max(worst, float(np.abs(out_p - out[perm]).max()))
    criterion(9, worst <= 1e-10, f"max deviation {worst:.1e} over 10 seeded instances (tol 1e-10)")
