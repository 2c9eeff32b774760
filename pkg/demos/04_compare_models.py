"""
Comparing the hybrid with the baselines
=======================================

Every model is trained several times with different seeds on the same split and
scored on the test rows in original units. Persistence (repeat the last value)
is the floor any forecaster should clear.

Pass ``--full`` for five repeats of 100 epochs on the 2000-row ring (slow).
"""

import sys

from gcnlstm import ModelSpec, SynthConfig, TrainConfig, evaluate, make_rng, synth_generate

full = "--full" in sys.argv
table = synth_generate(SynthConfig(n_rows=2000 if full else 600), make_rng(42))
kinds = ["hybrid_gcn_lstm", "mlp", "lstm", "gcn", "cnn", "cnn_lstm"]
specs = [ModelSpec(kind, h=8, k=1, n_sites=table.n_sites) for kind in kinds]

report = evaluate(specs, table, repeats=5 if full else 2, train_config=TrainConfig(epochs=100 if full else 15))

print(f"{'model':<16} {'MAE':>8} {'RMSE':>8}   per-repeat MAE")
for (model, k), cell in sorted(report.cells.items(), key=lambda kv: kv[1].mean_mae):
    runs = " ".join(f"{v:.3f}" for v in cell.mae)
    print(f"{model:<16} {cell.mean_mae:>8.4f} {cell.mean_rmse:>8.4f}   {runs}")
