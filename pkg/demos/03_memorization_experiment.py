"""Noiseless memorization at small scale, end to end.

Trains a gated cell to hold 4 random bits across delays up to 10 steps,
rank-reduces its recurrent matrix, maps each rank to its perturbation
size delta, sweeps recall error over (rank x delay), and collapses the
surface into beta(T) with a linear fit. Runs in a couple of minutes on
one core; scale hidden/n_bits/t_max up for the paper-sized run.
"""

import numpy as np

from rnnsvd import linearity_fit, beta
from rnnsvd.experiments import memorization_task, train_memorization
from rnnsvd.sweep import temporal_sweep
from rnnsvd.training import TrainingConfig

HIDDEN, N_BITS, T_MAX = 32, 4, 10

cfg = TrainingConfig(learning_rate=1e-3, batch_size=64, epochs=60, clip_norm=1.0, seed=1)
model, log = train_memorization("mgru", cfg, hidden=HIDDEN, n_bits=N_BITS, t_max=T_MAX,
                                rms_threshold=0.05, batches_per_epoch=150,
                                eval_trials=100)
print(f"trained {len(log)} epochs, recall rms {log[-1]['rms']:.4f}")

ranks = sorted(set(list(range(1, HIDDEN + 1, 3)) + [HIDDEN]))
grid = temporal_sweep(model, memorization_task(N_BITS), ranks,
                      list(range(0, T_MAX + 1)), trials=200, seed=5)
print(f"swept {grid.values.shape[0]} ranks x {grid.values.shape[1]} delays")

deltas = grid.delta[:, 0]
print("rank -> delta:", {int(r): round(float(d), 4) for r, d in zip(grid.axis1, deltas)})

keep = []
seen = set()
for i in np.argsort(deltas, kind="stable"):
    key = round(float(deltas[i]), 12)
    if key not in seen:
        seen.add(key)
        keep.append(i)
keep = np.array(keep)
delta_f = float(np.percentile(deltas, 40))
curve = beta(deltas[keep], grid.axis2.astype(int), grid.values[keep], delta_f)

pts = [(t, b) for t, b in zip(curve.t_values, curve.beta) if t >= 2]
slope, intercept, r2 = linearity_fit(pts)
print(f"\nbeta(T) up to delta_f={delta_f:.4f}:")
for t, b in zip(curve.t_values, curve.beta):
    bar = "#" * int(b * 400)
    print(f"  T={t:>2} beta={b:.4f} {bar}")
print(f"linear fit: slope={slope:.5f} intercept={intercept:.5f} R^2={r2:.3f}")
