"""
How the learning rate shapes the loss curve
===========================================

One knob at a time: every point shares the model and data and differs only in
the Adam learning rate. A point counts as converged when its last training loss
is at most half of the first epoch's. Very small rates barely move; very large
rates bounce around or blow up.

Pass ``--full`` for the 100-epoch, 2000-row version (slow).
"""

import sys

from gcnlstm import ModelSpec, SweepPlan, SynthConfig, TrainConfig, make_rng, run_sweep, synth_generate

full = "--full" in sys.argv
table = synth_generate(SynthConfig(n_rows=2000 if full else 600), make_rng(42))
plan = SweepPlan(
    "lr",
    (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2),
    spec=ModelSpec(h=6),
    train_config=TrainConfig(epochs=100 if full else 20),
)
result = run_sweep(plan, table)

print(f"{'lr':>8} {'first':>10} {'final':>10} {'val MAE':>9}  converged")
rows = {int(r["point"]): r for r in result.rows}
for i, point in enumerate(result.table()):
    row = rows[i]
    print(f"{point['value']:>8g} {float(row['first_loss']):>10.4g} {float(row['final_loss']):>10.4g} "
          f"{point['val_mae']:>9.4f}  {point['converged']}{'  <- best' if point['best'] else ''}")
