"""Rank reduction of a dense weight matrix, step by step.

Decomposes a matrix with a one-sided Jacobi SVD, truncates it at a few
ranks, checks the optimal-approximation identity against the discarded
singular values, and tallies what the factored form costs at inference.
"""

import numpy as np

from rnnsvd import compress_matrix, factored_apply, rms_diff, svd, truncate

rng = np.random.default_rng(7)

# a synthetic weight matrix with decaying spectrum, like a trained layer
m, n = 64, 48
base = rng.normal(size=(m, n))
f0 = svd(base)
w = (f0.u * (f0.sigma * np.exp(-0.08 * np.arange(f0.sigma.size)))) @ f0.v.T

factors = svd(w)
print("singular values (first 8):", np.round(factors.sigma[:8], 4))

recon = factors.reconstruct()
print("full reconstruction error:", f"{np.abs(recon - w).max():.2e}")

print(f"\n{'rank':>4} {'rms delta':>10} {'eckart-young':>13} {'params':>8} {'dense':>8}")
for r in (1, 4, 8, 16, 32, 48):
    q, vt = truncate(factors, r)
    delta = rms_diff(w, q @ vt)
    closed_form = np.sqrt(np.sum(factors.sigma[r:] ** 2) / w.size)
    print(f"{r:>4} {delta:>10.5f} {closed_form:>13.5f} {r * (m + n):>8} {m * n:>8}")

# the factored layer applies as two linear stages and matches the dense map
fl = compress_matrix(w, 8, bias=rng.normal(size=m))
x = rng.normal(size=n)
dense = np.tanh((fl.q @ fl.vt) @ x + fl.bias)
fast = factored_apply(fl, x, "tanh")
print("\nfactored vs dense apply:", f"{np.abs(dense - fast).max():.2e}")
print("multiply-adds factored:", fl.multiply_adds, "vs dense:", m * n + m)
