"""The first-order perturbation law for recurrent weights.

Perturb a contraction W_r by a small delta, unroll T steps, and compare
the exact error (W_r+delta)^T x - W_r^T x against the first-order
prediction: the gap shrinks four-fold when delta is halved, and the
predicted error grows linearly in T while the spectral radius stays
under one.
"""

import numpy as np

from rnnsvd import exact_linear_error, predict_error, spectral_radius

rng = np.random.default_rng(3)
n = 32
w = rng.normal(size=(n, n))
w *= 0.85 / np.linalg.svd(w, compute_uv=False)[0]
rho = spectral_radius(w)
print(f"spectral radius: {rho.value:.4f} (bound only: {rho.bound_only})")

delta = rng.normal(size=(n, n))
delta *= 1e-3 / np.sqrt(np.mean(delta ** 2))
x = rng.normal(size=n)

print(f"\n{'T':>3} {'|exact|':>12} {'|predicted|':>12} {'gap':>12} {'gap(d/2)x4':>12}")
for t in (1, 2, 5, 10, 20):
    exact = exact_linear_error(w, delta, x, t)
    pred = predict_error(w, delta, x, t)
    gap = np.linalg.norm(exact - pred)
    half_gap = np.linalg.norm(exact_linear_error(w, delta / 2, x, t)
                              - predict_error(w, delta / 2, x, t))
    print(f"{t:>3} {np.linalg.norm(exact):>12.3e} {np.linalg.norm(pred):>12.3e} "
          f"{gap:>12.3e} {4 * half_gap:>12.3e}")

# linear growth in T for a commuting perturbation
print("\nscaled-identity recurrence: |prediction| / T stays constant")
w_id = 1.0 * np.eye(n)
for t in (2, 8, 16, 24):
    norm = np.linalg.norm(predict_error(w_id, delta, x, t))
    print(f"  T={t:>2}: |prediction|/T = {norm / t:.6e}")
