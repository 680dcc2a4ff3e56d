"""Rank sweeps, rank x delay sweeps, the perplexity-dB scale, and isoline
extraction: the machinery that turns one trained model into a metric
surface over compression levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .compression import CompressionPlan, compress_model, compression_delta, model_factors
from .network import SequenceModel
from .perturbation import TaskGenerator, measure_error


@dataclass
class SweepGrid:
    """A metric surface over two ordered axes, with per-cell metadata.

    values holds NaN for failed cells; delta carries the recurrent-matrix
    RMS compression error of each cell (NaN where not applicable); n is
    the evaluation sample count behind each cell.
    """

    axis1_name: str
    axis1: np.ndarray
    axis2_name: str
    axis2: np.ndarray
    metric: str
    values: np.ndarray
    delta: np.ndarray
    n: np.ndarray
    failures: list = field(default_factory=list)

    def __post_init__(self):
        shape = (len(self.axis1), len(self.axis2))
        for name in ("values", "delta", "n"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
        for ax in (self.axis1, self.axis2):
            if len(ax) > 1 and not (np.all(np.diff(ax) > 0) or np.all(np.diff(ax) < 0)):
                raise ValueError("axis values must be strictly ordered")

    @property
    def failed_fraction(self) -> float:
        return float(np.isnan(self.values).sum()) / self.values.size


def geometric_ranks(full_rank: int, base: float = 2.0) -> list[int]:
    """1, 2, 4, ... capped at and always including the full rank."""
    if full_rank < 1:
        raise ValueError("full rank must be >= 1")
    out = []
    r = 1.0
    while r < full_rank:
        out.append(int(round(r)))
        r *= base
    out.append(full_rank)
    return sorted(set(out))


def linear_ranks(full_rank: int, count: int) -> list[int]:
    return sorted(set(np.linspace(1, full_rank, count).round().astype(int).tolist()))


Evaluator = Callable[[SequenceModel], "float | tuple[float, int]"]


def _eval_cell(evaluator: Evaluator, model: SequenceModel):
    out = evaluator(model)
    if isinstance(out, tuple):
        return float(out[0]), int(out[1])
    return float(out), 1


def rank_sweep(model: SequenceModel, forward_ranks: Sequence[int],
               recurrent_ranks: Sequence[int], evaluator: Evaluator,
               metric: str = "metric",
               cell_order: Optional[Sequence[tuple[int, int]]] = None) -> SweepGrid:
    """Compress at every (forward rank, recurrent rank) cell and evaluate.

    The base model is never modified; each cell gets a fresh compressed
    view, so any evaluation order gives the identical grid. Evaluator
    failures mark their cell NaN and the sweep continues.
    """
    f_ranks = np.asarray(sorted(set(int(r) for r in forward_ranks)))
    r_ranks = np.asarray(sorted(set(int(r) for r in recurrent_ranks)))
    factors = model_factors(model)
    shape = (f_ranks.size, r_ranks.size)
    values = np.full(shape, np.nan)
    delta = np.full(shape, np.nan)
    counts = np.zeros(shape, dtype=np.int64)
    failures: list = []
    order = cell_order if cell_order is not None else [
        (i, j) for i in range(shape[0]) for j in range(shape[1])]
    rec_deltas = {int(r): compression_delta(model.cell.wr, int(r), factors=factors.recurrent)
                  for r in r_ranks}
    for i, j in order:
        plan = CompressionPlan(forward_rank=int(f_ranks[i]), recurrent_rank=int(r_ranks[j]))
        cm = compress_model(model, plan, factors=factors)
        delta[i, j] = rec_deltas[int(r_ranks[j])]
        try:
            values[i, j], counts[i, j] = _eval_cell(evaluator, cm.model)
        except Exception as e:  # cell failure is data, not a crash
            failures.append((int(f_ranks[i]), int(r_ranks[j]), repr(e)))
    return SweepGrid(axis1_name="forward_rank", axis1=f_ranks,
                     axis2_name="recurrent_rank", axis2=r_ranks,
                     metric=metric, values=values, delta=delta, n=counts,
                     failures=failures)


def temporal_sweep(model: SequenceModel, task_generator: TaskGenerator,
                   ranks: Sequence[int], t_values: Sequence[int], trials: int = 1000,
                   seed: int = 0) -> SweepGrid:
    """Recall RMS error over (recurrent rank, delay T); forward weights stay
    untouched. Each rank row is annotated with its compression delta so the
    rank axis can be rescaled to delta."""
    ranks_arr = np.asarray(sorted(set(int(r) for r in ranks)))
    ts = np.asarray(sorted(set(int(t) for t in t_values)))
    factors = model_factors(model)
    values = np.full((ranks_arr.size, ts.size), np.nan)
    delta = np.full((ranks_arr.size, ts.size), np.nan)
    counts = np.full((ranks_arr.size, ts.size), trials, dtype=np.int64)
    failures: list = []
    for i, r in enumerate(ranks_arr):
        d = compression_delta(model.cell.wr, int(r), factors=factors.recurrent)
        for j, t in enumerate(ts):
            delta[i, j] = d
            try:
                values[i, j] = measure_error(model, task_generator, int(r), int(t),
                                             trials, seed=seed, factors=factors)
            except Exception as e:
                failures.append((int(r), int(t), repr(e)))
    return SweepGrid(axis1_name="recurrent_rank", axis1=ranks_arr,
                     axis2_name="delay", axis2=ts,
                     metric="rms_error", values=values, delta=delta, n=counts,
                     failures=failures)


def perplexity_db(p: float, p_min: float) -> float:
    """20 log10(p / p_min); one dB is roughly a 12% perplexity increase."""
    if p <= 0.0 or p_min <= 0.0:
        raise ValueError("perplexities must be positive")
    return 20.0 * math.log10(p / p_min)


def grid_to_db(grid: SweepGrid) -> SweepGrid:
    """Rescale a perplexity grid to dB over its own observed minimum, so the
    best cell sits at 0 dB and every other cell is non-negative."""
    finite = grid.values[np.isfinite(grid.values)]
    if finite.size == 0:
        raise ValueError("grid has no finite cells")
    p_min = float(finite.min())
    if p_min <= 0.0:
        raise ValueError("perplexity grid must be positive")
    vals = np.full_like(grid.values, np.nan)
    ok = np.isfinite(grid.values)
    vals[ok] = 20.0 * np.log10(grid.values[ok] / p_min)
    return SweepGrid(axis1_name=grid.axis1_name, axis1=grid.axis1.copy(),
                     axis2_name=grid.axis2_name, axis2=grid.axis2.copy(),
                     metric=grid.metric + "_db", values=vals, delta=grid.delta.copy(),
                     n=grid.n.copy(), failures=list(grid.failures))


@dataclass(frozen=True)
class IsolineSpec:
    """A constant-metric contour level and the tolerance for treating a
    cell as lying exactly on it."""

    level: float
    tolerance: float = 0.0


def extract_isoline(grid: SweepGrid, spec: IsolineSpec) -> np.ndarray:
    """Linear-interpolation crossings of the level along grid rows and
    columns, ordered by the first axis then the second; empty (0, 2) array
    if the level is never crossed. Cells within tolerance of the level
    contribute their own centers (so a grid sitting entirely at the level
    yields all cell centers). NaN cells are skipped.
    """
    level = spec.level
    pts: list[tuple[float, float]] = []
    seen: set[tuple[float, float]] = set()

    def push(a1: float, a2: float):
        key = (round(a1, 12), round(a2, 12))
        if key not in seen:
            seen.add(key)
            pts.append((a1, a2))

    v = grid.values
    a1s = np.asarray(grid.axis1, dtype=np.float64)
    a2s = np.asarray(grid.axis2, dtype=np.float64)
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            if np.isfinite(v[i, j]) and abs(v[i, j] - level) <= spec.tolerance:
                push(a1s[i], a2s[j])
    for i in range(v.shape[0]):          # crossings along axis2
        for j in range(v.shape[1] - 1):
            v1, v2 = v[i, j], v[i, j + 1]
            if not (np.isfinite(v1) and np.isfinite(v2)):
                continue
            if (v1 - level) * (v2 - level) < 0.0:
                frac = (level - v1) / (v2 - v1)
                push(a1s[i], a2s[j] + frac * (a2s[j + 1] - a2s[j]))
    for j in range(v.shape[1]):          # crossings along axis1
        for i in range(v.shape[0] - 1):
            v1, v2 = v[i, j], v[i + 1, j]
            if not (np.isfinite(v1) and np.isfinite(v2)):
                continue
            if (v1 - level) * (v2 - level) < 0.0:
                frac = (level - v1) / (v2 - v1)
                push(a1s[i] + frac * (a1s[i + 1] - a1s[i]), a2s[j])
    out = np.array(sorted(pts), dtype=np.float64).reshape(-1, 2)
    return out


def crossing_rank(ranks, values, level: float) -> Optional[float]:
    """Smallest (interpolated) rank keeping a rank-decreasing metric curve
    at or under the level, scanning from the largest rank downward.
    Returns the smallest sampled rank when the whole curve sits under the
    level, and None when even the largest rank exceeds it."""
    ranks = np.asarray(ranks, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(vals)
    ranks, vals = ranks[ok], vals[ok]
    if ranks.size == 0 or vals[-1] > level:
        return None
    for k in range(ranks.size - 1, 0, -1):
        v_hi, v_lo = vals[k], vals[k - 1]
        if v_hi <= level < v_lo:
            frac = (level - v_lo) / (v_hi - v_lo)
            return float(ranks[k - 1] + frac * (ranks[k] - ranks[k - 1]))
    return float(ranks[0])


def write_grid_csv(path, grid: SweepGrid, digest: str = "") -> None:
    """One row per cell: axis1, axis2, metric, delta, n. A digest comment
    makes reruns byte-comparable."""
    lines = []
    if digest:
        lines.append(f"# run_digest={digest}")
    lines.append(f"{grid.axis1_name},{grid.axis2_name},{grid.metric},delta,n")
    for i, a1 in enumerate(grid.axis1):
        for j, a2 in enumerate(grid.axis2):
            val = grid.values[i, j]
            d = grid.delta[i, j]
            lines.append(f"{a1},{a2},{_fmt(val)},{_fmt(d)},{grid.n[i, j]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def read_grid_csv(path) -> SweepGrid:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    lines = [ln for ln in lines if not ln.startswith("#")]
    header = lines[0].split(",")
    if len(header) != 5:
        raise ValueError(f"expected 5 columns, got {header}")
    axis1_name, axis2_name, metric = header[0], header[1], header[2]
    rows = [ln.split(",") for ln in lines[1:]]
    a1 = sorted(set(float(r[0]) for r in rows))
    a2 = sorted(set(float(r[1]) for r in rows))
    idx1 = {v: i for i, v in enumerate(a1)}
    idx2 = {v: i for i, v in enumerate(a2)}
    shape = (len(a1), len(a2))
    values = np.full(shape, np.nan)
    delta = np.full(shape, np.nan)
    counts = np.zeros(shape, dtype=np.int64)
    for r in rows:
        i, j = idx1[float(r[0])], idx2[float(r[1])]
        values[i, j] = float(r[2]) if r[2] else np.nan
        delta[i, j] = float(r[3]) if r[3] else np.nan
        counts[i, j] = int(r[4])
    return SweepGrid(axis1_name=axis1_name, axis1=np.array(a1),
                     axis2_name=axis2_name, axis2=np.array(a2),
                     metric=metric, values=values, delta=delta, n=counts)
