"""First-order model of how a recurrent-weight perturbation corrupts
short-term memory, plus the empirical machinery that tests it.

For a linearized recurrence the exact effect of replacing W_r by
W_r + delta after T steps is (W_r + delta)^T x - W_r^T x. Its first-order
term is sum_j W_r^j delta W_r^(T-1-j) x over the T slots the perturbation
can occupy; when delta commutes with W_r (e.g. a scalar perturbation)
this collapses to T * delta * W_r^(T-1) * x. Either way the error grows
linearly in both the perturbation size and the temporal coherence T,
provided the spectral radius of W_r stays at or below one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .compression import CompressionPlan, ModelFactors, compress_model
from .linalg import as_matrix
from .network import Batch, SequenceModel, forward


def _check_pair(wr, delta, x):
    wr = as_matrix(wr, "wr")
    if wr.shape[0] != wr.shape[1]:
        raise ValueError(f"recurrent matrix must be square, got {wr.shape}")
    delta = as_matrix(delta, "delta")
    if delta.shape != wr.shape:
        raise ValueError(f"delta shape {delta.shape} does not match {wr.shape}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (wr.shape[0],):
        raise ValueError(f"x must have length {wr.shape[0]}")
    return wr, delta, x


def predict_error(wr, delta, x, t: int) -> np.ndarray:
    """First-order prediction of the T-step output error.

    Computes the exact first-order term sum_j W_r^j delta W_r^(T-1-j) x
    by Horner recursion (2T matrix-vector products). For commuting delta
    this is T * delta * W_r^(T-1) * x; in general only this full sum
    leaves an O(delta^2) residual against exact_linear_error. t = 0 means
    no unfolding: the prediction is identically zero.
    """
    wr, delta, x = _check_pair(wr, delta, x)
    if t < 0:
        raise ValueError("delay must be >= 0")
    if t == 0:
        return np.zeros_like(x)
    powers = np.empty((t, x.size))
    powers[0] = x
    for k in range(1, t):
        powers[k] = wr @ powers[k - 1]
    acc = delta @ powers[0]
    for j in range(t - 2, -1, -1):
        acc = wr @ acc + delta @ powers[t - 1 - j]
    return acc


def exact_linear_error(wr, delta, x, t: int) -> np.ndarray:
    """(W_r + delta)^T x - W_r^T x, the linearized network's exact error."""
    wr, delta, x = _check_pair(wr, delta, x)
    if t < 0:
        raise ValueError("delay must be >= 0")
    a = x.copy()
    b = x.copy()
    wp = wr + delta
    for _ in range(t):
        a = wp @ a
        b = wr @ b
    return a - b


@dataclass(frozen=True)
class PerturbationPrediction:
    delay: int
    delta: np.ndarray
    predicted_error: np.ndarray


def predict(wr, delta, x, t: int) -> PerturbationPrediction:
    return PerturbationPrediction(delay=t, delta=np.asarray(delta, dtype=np.float64),
                                  predicted_error=predict_error(wr, delta, x, t))


TaskGenerator = Callable[[int, int, np.random.Generator], Batch]


def measure_error(model: SequenceModel, task_generator: TaskGenerator,
                  rank: Optional[int], t: int, trials: int, seed: int = 0,
                  factors: Optional[ModelFactors] = None) -> float:
    """Measured RMS recall error of a rank-reduced model at delay t.

    Runs `trials` fresh task samples in one batched pass and returns the
    RMS of (real-valued network output - target) over every scored
    position. rank=None evaluates the uncompressed model. Deterministic
    in (seed, t, trials).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, t))))
    batch = task_generator(t, trials, rng)
    plan = CompressionPlan(forward_rank=None, recurrent_rank=rank)
    target_model = compress_model(model, plan, factors=factors).model if rank is not None else model
    cache = forward(target_model, batch.inputs)
    mask = batch.mask
    if mask is None:
        mask = np.ones(cache.outputs.shape[:2])
    diff2 = ((cache.outputs - batch.targets) ** 2).sum(axis=-1)
    total = float(mask.sum())
    if total == 0.0:
        raise ValueError("task mask scores no positions")
    return float(np.sqrt(np.sum(diff2 * mask) / total))


@dataclass
class BetaCurve:
    """Mean integrated RMS error up to a peak perturbation, one value per T."""

    delta_grid: np.ndarray   # ascending deltas included in the mean, starting at 0
    t_values: np.ndarray     # the delays (> 0) the curve is defined over
    beta: np.ndarray         # (len(t_values),)


def beta(delta_values, t_values, errors, delta_f: float) -> BetaCurve:
    """Collapse an (delta, T) error surface into beta(T).

    For each delay T:  beta = mean over grid deltas <= delta_f of
    sqrt((1/T) * sum over grid delays t <= T of err(delta, t)^2).
    The delta grid must be ascending and begin at 0 (the unperturbed row);
    delta_f must be at or above the first grid point. T = 0 columns
    contribute to the inner sums but get no beta value of their own.
    """
    deltas = np.asarray(delta_values, dtype=np.float64)
    ts = np.asarray(t_values)
    errs = np.asarray(errors, dtype=np.float64)
    if errs.shape != (deltas.size, ts.size):
        raise ValueError(f"surface shape {errs.shape} does not match axes "
                         f"({deltas.size}, {ts.size})")
    if deltas.size == 0 or deltas[0] != 0.0 or np.any(np.diff(deltas) <= 0):
        raise ValueError("delta grid must be strictly ascending and start at 0")
    if delta_f < deltas[0]:
        raise ValueError(f"delta_f={delta_f} below the first grid point")
    include = deltas <= delta_f
    n_delta = int(include.sum())
    out_ts = ts[ts > 0]
    values = np.empty(out_ts.size)
    for k, t_cap in enumerate(out_ts):
        cols = ts <= t_cap
        inner = np.sqrt(np.sum(errs[np.ix_(include, cols)] ** 2, axis=1) / float(t_cap))
        values[k] = float(inner.mean())
    return BetaCurve(delta_grid=deltas[include].copy(), t_values=out_ts.copy(), beta=values)


def linearity_fit(points) -> tuple[float, float, float]:
    """Ordinary least squares of beta against T: (slope, intercept, r_squared).

    r_squared uses the zero-total-variance convention: if the responses
    are constant, the fit is flat and r_squared is reported as 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (T, beta) points")
    x = pts[:, 0]
    y = pts[:, 1]
    if np.ptp(x) == 0.0:
        raise ValueError("zero variance in T")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    sxy = float(np.sum((x - xm) * (y - ym)))
    slope = sxy / sxx
    intercept = ym - slope * xm
    sst = float(np.sum((y - ym) ** 2))
    if sst == 0.0:
        return slope, intercept, 0.0
    sse = float(np.sum((y - (slope * x + intercept)) ** 2))
    return slope, intercept, 1.0 - sse / sst
