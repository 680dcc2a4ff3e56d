"""Dense matrix kernels: one-sided Jacobi SVD, rank truncation, spectral radius.

Everything works on 2-D float64 numpy arrays. The SVD is a hand-rolled
Hestenes one-sided Jacobi with a fixed cyclic sweep order and a fixed sign
convention, so byte-identical inputs always produce byte-identical factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Jacobi rotations stop once every column pair is orthogonal to this
# relative coherence; well below the 1e-10 contract so orthonormality
# holds with margin.
_JACOBI_TOL = 1e-14
_JACOBI_MAX_SWEEPS = 60

# Power iteration defaults for spectral_radius.
_POWER_TOL = 1e-8
_POWER_MAX_ITER = 20_000


class ConvergenceError(RuntimeError):
    """Iterative decomposition failed to converge; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a C-contiguous float64 2-D array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {np.shape(a)}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of an M x N matrix: u (M x K), sigma (K,), v (N x K), K = min(M, N).

    sigma is sorted descending; columns of u and v are orthonormal; the
    entry of largest magnitude in each u column is non-negative (ties
    broken by lowest row index).
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def _orthonormal_fill(u: np.ndarray, start: int) -> None:
    # Columns start.. carry zero singular values; complete them to an
    # orthonormal basis by Gram-Schmidt, picking for each slot the
    # canonical basis vector with the largest residual (ties resolve to
    # the lowest index, so the completion is deterministic).
    m = u.shape[0]
    for k in range(start, u.shape[1]):
        resid2 = 1.0 - np.einsum("mk,mk->m", u[:, :k], u[:, :k])
        best = int(np.argmax(resid2))
        e = np.zeros(m)
        e[best] = 1.0
        # two rounds of projection for numerical safety
        for _ in range(2):
            e -= u[:, :k] @ (u[:, :k].T @ e)
        norm = np.linalg.norm(e)
        if norm < 1e-8:
            raise ConvergenceError("could not complete orthonormal basis", residual=norm)
        u[:, k] = e / norm


def _apply_sign_convention(u: np.ndarray, v: np.ndarray) -> None:
    # Largest-magnitude entry of each u column made non-negative; ties
    # resolve to the lowest row index via argmax on the absolute values.
    for k in range(u.shape[1]):
        lead = int(np.argmax(np.abs(u[:, k])))
        if u[lead, k] < 0.0:
            u[:, k] = -u[:, k]
            v[:, k] = -v[:, k]


def _round_robin_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule covering every column pair once per sweep with
    disjoint pairs per round, so each round rotates in one vector op."""
    padded = n if n % 2 == 0 else n + 1
    players = list(range(padded))
    rounds = []
    for _ in range(padded - 1):
        half = padded // 2
        left = np.array(players[:half])
        right = np.array(players[half:][::-1])
        keep = (left < n) & (right < n)
        ii = np.minimum(left[keep], right[keep])
        jj = np.maximum(left[keep], right[keep])
        rounds.append((ii, jj))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def svd(w) -> SvdFactors:
    """One-sided Jacobi SVD of a dense real matrix.

    Deterministic: fixed round-robin pair schedule (disjoint pairs per
    round, applied simultaneously), fixed sign convention. Raises
    ConvergenceError if the sweep cap is hit (does not happen for
    matrices in this package's size range).
    """
    a = as_matrix(w)
    m, n = a.shape
    if m < n:
        f = svd(a.T)
        u, v = f.v.copy(), f.u.copy()
        _apply_sign_convention(u, v)
        return SvdFactors(u=u, sigma=f.sigma, v=v)

    # columns live as contiguous rows while sweeping
    bt = np.ascontiguousarray(a.T)
    vt = np.eye(n)
    rounds = _round_robin_rounds(n)
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        # cached squared norms drift by rounding; refresh once per sweep
        norms2 = np.einsum("km,km->k", bt, bt)
        for ii, jj in rounds:
            alpha = norms2[ii]
            beta = norms2[jj]
            gamma = np.einsum("km,km->k", bt[ii], bt[jj])
            need = (alpha > 0.0) & (beta > 0.0) & (
                np.abs(gamma) > _JACOBI_TOL * np.sqrt(alpha * beta))
            if not np.any(need):
                continue
            rotated = True
            sel_i = ii[need]
            sel_j = jj[need]
            a_s, b_s, g_s = alpha[need], beta[need], gamma[need]
            zeta = (b_s - a_s) / (2.0 * g_s)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0.0] = 1.0
            c1 = 1.0 / np.sqrt(1.0 + t * t)
            s1 = c1 * t
            c = c1[:, None]
            s = s1[:, None]
            bi = bt[sel_i]
            bj = bt[sel_j]
            bt[sel_i] = c * bi - s * bj
            bt[sel_j] = s * bi + c * bj
            vi = vt[sel_i]
            vj = vt[sel_j]
            vt[sel_i] = c * vi - s * vj
            vt[sel_j] = s * vi + c * vj
            cc, ss, cs = c1 * c1, s1 * s1, c1 * s1
            norms2[sel_i] = np.maximum(cc * a_s - 2.0 * cs * g_s + ss * b_s, 0.0)
            norms2[sel_j] = np.maximum(ss * a_s + 2.0 * cs * g_s + cc * b_s, 0.0)
        if not rotated:
            break
    else:
        off = _max_coherence(bt.T)
        raise ConvergenceError("Jacobi SVD did not converge", residual=off)

    sigma = np.linalg.norm(bt, axis=1)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    b = np.ascontiguousarray(bt[order].T)
    v = np.ascontiguousarray(vt[order].T)

    u = np.zeros((m, n))
    # columns whose norm is at machine-zero get a basis completion instead
    cutoff = np.finfo(np.float64).eps * max(m, n) * (sigma[0] if sigma[0] > 0 else 1.0)
    nz = int(np.sum(sigma > cutoff))
    u[:, :nz] = b[:, :nz] / sigma[:nz]
    sigma[nz:] = 0.0
    if nz < n:
        _orthonormal_fill(u, nz)
    _apply_sign_convention(u, v)
    return SvdFactors(u=u, sigma=sigma, v=v)


def _max_coherence(b: np.ndarray) -> float:
    norms = np.linalg.norm(b, axis=0)
    norms[norms == 0.0] = 1.0
    g = (b / norms).T @ (b / norms)
    np.fill_diagonal(g, 0.0)
    return float(np.max(np.abs(g)))


def truncate(f: SvdFactors, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Rank-r factors (q, vt) with q = u[:, :r] * sigma[:r] and vt = v[:, :r].T.

    q @ vt is the best rank-r Frobenius approximation of the decomposed
    matrix (Eckart-Young).
    """
    k = f.sigma.shape[0]
    if not 1 <= r <= k:
        raise ValueError(f"rank must be in [1, {k}], got {r}")
    q = f.u[:, :r] * f.sigma[:r]
    vt = f.v[:, :r].T.copy()
    return q, vt


class SpectralRadius(NamedTuple):
    value: float
    bound_only: bool  # True when power iteration stalled and sigma_max is reported


def singular_value_max(w, tol: float = _POWER_TOL, max_iter: int = _POWER_MAX_ITER) -> float:
    """Largest singular value via power iteration on w.T @ w (deterministic start)."""
    a = as_matrix(w)
    g = a.T @ a
    n = g.shape[0]
    x = 1.0 + np.arange(n) / (2.0 * n)  # fixed, never orthogonal to top eigenspace in practice
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = g @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        lam_new = float(x @ y)
        x = y / ny
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def spectral_radius(w, tol: float = _POWER_TOL, max_iter: int = _POWER_MAX_ITER) -> SpectralRadius:
    """Spectral radius by power iteration with a sigma_max fallback.

    Returns (value, bound_only). bound_only=True means the iteration
    stalled (e.g. complex dominant pair) and value is the sigma_max upper
    bound instead of the radius itself.
    """
    a = as_matrix(w)
    m, n = a.shape
    if m != n:
        raise ValueError(f"spectral_radius needs a square matrix, got {m}x{n}")
    x = 1.0 + np.arange(n) / (2.0 * n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = a @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # iterate died in the nullspace; cannot certify the radius
            return SpectralRadius(value=singular_value_max(a), bound_only=True)
        lam_new = float(x @ y)  # Rayleigh quotient, |x| = 1
        x = y / ny
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            resid = float(np.linalg.norm(a @ x - lam_new * x))
            if resid <= 1e-6 * max(abs(lam_new), 1.0):
                return SpectralRadius(value=abs(lam_new), bound_only=False)
        lam = lam_new
    return SpectralRadius(value=singular_value_max(a), bound_only=True)


def rms_diff(a, b) -> float:
    """Root mean squared entrywise difference of two same-shape matrices."""
    ma = as_matrix(a, "a")
    mb = as_matrix(b, "b")
    if ma.shape != mb.shape:
        raise ValueError(f"shape mismatch: {ma.shape} vs {mb.shape}")
    d = ma - mb
    return float(np.sqrt(np.mean(d * d)))


def frobenius(a) -> float:
    return float(np.linalg.norm(as_matrix(a)))
