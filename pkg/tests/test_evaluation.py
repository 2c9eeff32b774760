import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gcnlstm.data import SynthConfig, synth_generate
from gcnlstm.evaluation import evaluate, mae, persistence_forecast, rmse
from gcnlstm.models import ModelSpec
from gcnlstm.numerics import make_rng
from gcnlstm.training import TrainConfig


@pytest.fixture(scope="module")
def ring():
    return synth_generate(SynthConfig(n_rows=300), make_rng(42))


def test_metrics_hand_case():
    assert mae([1, 2], [2, 4]) == pytest.approx(1.5, abs=1e-12)
    assert rmse([1, 2], [2, 4]) == pytest.approx(math.sqrt(2.5), abs=1e-12)


def test_perfect_forecast():
    assert mae([3.0, 4.0], [3.0, 4.0]) == 0.0 == rmse([3.0, 4.0], [3.0, 4.0])


def test_constant_error_makes_metrics_equal():
    y = np.arange(10.0)
    assert mae(y, y - 0.75) == pytest.approx(0.75, abs=1e-15)
    assert rmse(y, y - 0.75) == pytest.approx(0.75, abs=1e-15)


def test_metric_preconditions():
    with pytest.raises(ValueError):
        mae([], [])
    with pytest.raises(ValueError, match="length"):
        rmse([1.0, 2.0], [1.0])


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e6, 1e6)), st.integers(0, 2**16))
def test_rmse_bounds_mae(y, seed):
    y_hat = y + make_rng(seed).normal(0, 10, y.shape)
    assert rmse(y, y_hat) >= mae(y, y_hat) * (1 - 1e-12)


def test_persistence_cases():
    flat = np.full((2, 5), 3.0)
    np.testing.assert_array_equal(persistence_forecast(flat, 2), np.full((2, 2), 3.0))
    ramp = np.arange(6.0)
    assert mae([6.0], persistence_forecast(ramp[None, :], 1)) == 1.0
    assert mae([6.0, 7.0, 8.0], persistence_forecast(ramp[None, :], 3)) == 2.0


def test_evaluate_report_shape(ring, tmp_path):
    specs = [ModelSpec("mlp", h=4, k=2), ModelSpec(h=4, k=2, gcn_widths=(4,), lstm_units=(4,))]
    rep = evaluate(specs, ring, repeats=2, seed=3, train_config=TrainConfig(epochs=2))
    assert rep.models == ["mlp", "hybrid_gcn_lstm", "persistence"]
    for cell in rep.cells.values():
        assert len(cell.mae) == 2
        assert all(r >= m >= 0 for m, r in zip(cell.mae, cell.rmse))
    rep.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "horizon,metric,mlp,hybrid_gcn_lstm,persistence"
    assert [line.split(",")[:2] for line in lines[1:]] == [["2", "mae"], ["2", "rmse"]]
    rep.to_json(tmp_path / "t.json")
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["repeats"] == 2 and len(doc["results"]) == 3


def test_repeat_seeds_are_offsets(ring):
    spec = [ModelSpec("mlp", h=4)]
    cfg = TrainConfig(epochs=2)
    two = evaluate(spec, ring, repeats=2, seed=10, train_config=cfg, include_persistence=False)
    one = evaluate(spec, ring, repeats=1, seed=11, train_config=cfg, include_persistence=False)
    assert two.cell("mlp", 1).mae[1] != two.cell("mlp", 1).mae[0]
    # seed 11 with one repeat trains at seed 12, the second repeat of the seed-10 run
    assert one.cell("mlp", 1).mae[0] == two.cell("mlp", 1).mae[1]
    again = evaluate(spec, ring, repeats=2, seed=10, train_config=cfg, include_persistence=False)
    assert again.cell("mlp", 1).mae == two.cell("mlp", 1).mae


@pytest.mark.parametrize("c", [4.0, 3.7])
def test_metrics_scale_with_the_data(ring, c):
    spec = [ModelSpec(h=4, gcn_widths=(4,), lstm_units=(4,))]
    cfg = TrainConfig(epochs=2)
    base = evaluate(spec, ring, 1, 0, cfg)
    scaled = evaluate(spec, ring.with_values(ring.values * c), 1, 0, cfg)
    for key, cell in base.cells.items():
        assert scaled.cells[key].mean_mae == pytest.approx(c * cell.mean_mae, rel=1e-9)
        assert scaled.cells[key].mean_rmse == pytest.approx(c * cell.mean_rmse, rel=1e-9)


def test_repeats_must_be_positive(ring):
    with pytest.raises(ValueError):
        evaluate([ModelSpec("mlp")], ring, repeats=0)
