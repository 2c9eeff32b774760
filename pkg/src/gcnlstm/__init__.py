"""Hybrid graph-convolution + LSTM forecasting for multi-site renewable power."""

__version__ = "0.1.0"

from gcnlstm.numerics import Rng, activate, make_rng, gradient_check, hadamard, matmul
from gcnlstm.graph import SiteGraph, build_graph, normalize, pearson_adjacency
from gcnlstm.models import Model, ModelSpec, build, deserialize, make_model, serialize
from gcnlstm.optim import Optimizer, OptimizerConfig
from gcnlstm.data import (
    Scaler,
    SeriesTable,
    SynthConfig,
    WindowedDataset,
    load_csv,
    make_windows,
    prepare,
    seasonal_split,
    synth_generate,
)
from gcnlstm.training import TrainConfig, TrainReport, fit, train
from gcnlstm.evaluation import EvalReport, evaluate, mae, persistence_forecast, rmse
from gcnlstm.sweep import SweepPlan, SweepResult, run_sweep

__all__ = [
    "EvalReport",
    "Model",
    "ModelSpec",
    "Optimizer",
    "OptimizerConfig",
    "Rng",
    "Scaler",
    "SeriesTable",
    "SiteGraph",
    "SweepPlan",
    "SweepResult",
    "SynthConfig",
    "TrainConfig",
    "TrainReport",
    "WindowedDataset",
    "activate",
    "build",
    "build_graph",
    "deserialize",
    "evaluate",
    "fit",
    "gradient_check",
    "hadamard",
    "load_csv",
    "mae",
    "make_model",
    "make_rng",
    "make_windows",
    "matmul",
    "normalize",
    "pearson_adjacency",
    "persistence_forecast",
    "prepare",
    "rmse",
    "run_sweep",
    "seasonal_split",
    "serialize",
    "synth_generate",
    "train",
]
