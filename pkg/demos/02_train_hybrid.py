"""
Training the hybrid forecaster
==============================

Windows of h past values per site go through a graph convolution at every lag,
an LSTM runs over the lags for each site, and a dense head emits k future
values per site. Training is plain mini-batch Adam on the MAE.
"""

import numpy as np

from gcnlstm import ModelSpec, SynthConfig, TrainConfig, build_graph, make_model, make_rng, prepare, synth_generate, train
from gcnlstm.evaluation import mae, persistence_forecast

table = synth_generate(SynthConfig(n_rows=1000), make_rng(42))
prep = prepare(table, h=6, k=1)
print(f"windows: train {len(prep.train)}, val {len(prep.val)}, test {len(prep.test)}")

# the graph only ever sees (scaled) training rows
graph = build_graph(prep.scaler.apply(table.values[prep.tags == "train"]), table.sites)

spec = ModelSpec("hybrid_gcn_lstm", h=6, k=1, n_sites=table.n_sites)
params, report = train(spec, graph, prep, TrainConfig(epochs=30, seed=1))

for epoch in (1, 5, 10, 20, 30):
    print(f"epoch {epoch:3d}  train {report.train_loss[epoch - 1]:.4f}  val {report.val_loss[epoch - 1]:.4f}")
print("halved the first-epoch loss:", report.converged())

# compare with simply repeating the last value, both in original units
model = make_model(spec, graph)
truth = prep.scaler.invert_sites(prep.test.targets)
pred = prep.scaler.invert_sites(model.predict(params, prep.test.inputs))
naive = prep.scaler.invert_sites(persistence_forecast(prep.test.inputs, 1))
print(f"\ntest MAE  hybrid {mae(truth, pred):.4f}   persistence {mae(truth, naive):.4f}")
print("per-site MAE:", np.round(np.abs(truth - pred).mean(axis=(0, 2)), 3))
