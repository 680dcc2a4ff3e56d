import numpy as np
import pytest

from rnnsvd.compression import CompressionPlan, compress_model
from rnnsvd.network import MEAN_POOL, PER_STEP_MSE, forward, init_model
from rnnsvd.perturbation import measure_error
from rnnsvd.sweep import (
    IsolineSpec,
    SweepGrid,
    crossing_rank,
    extract_isoline,
    geometric_ranks,
    grid_to_db,
    linear_ranks,
    perplexity_db,
    rank_sweep,
    read_grid_csv,
    temporal_sweep,
    write_grid_csv,
)
from rnnsvd.tasks import gen_memorization_batch


def test_perplexity_db_identities():
    assert perplexity_db(7.0, 7.0) == 0.0
    assert abs(perplexity_db(1.122 * 80.0, 80.0) - 1.0) <= 0.01
    assert abs(perplexity_db(10.0, 1.0) - 20.0) <= 1e-12
    assert perplexity_db(90.0, 80.0) < perplexity_db(95.0, 80.0)
    with pytest.raises(ValueError):
        perplexity_db(0.0, 1.0)
    with pytest.raises(ValueError):
        perplexity_db(1.0, -2.0)


def test_geometric_and_linear_ranks():
    assert geometric_ranks(128) == [1, 2, 4, 8, 16, 32, 64, 128]
    assert geometric_ranks(100) == [1, 2, 4, 8, 16, 32, 64, 100]
    assert geometric_ranks(1) == [1]
    assert linear_ranks(10, 4) == [1, 4, 7, 10]
    with pytest.raises(ValueError):
        geometric_ranks(0)


def make_grid(values, a1=None, a2=None, metric="m"):
    values = np.asarray(values, dtype=np.float64)
    a1 = np.arange(values.shape[0], dtype=np.float64) if a1 is None else np.asarray(a1, dtype=np.float64)
    a2 = np.arange(values.shape[1], dtype=np.float64) if a2 is None else np.asarray(a2, dtype=np.float64)
    return SweepGrid(axis1_name="a", axis1=a1, axis2_name="b", axis2=a2,
                     metric=metric, values=values,
                     delta=np.zeros_like(values), n=np.ones(values.shape, dtype=np.int64))


def test_isoline_on_synthetic_plane():
    a1 = np.arange(6.0)
    a2 = np.arange(5.0)
    vals = a1[:, None] + a2[None, :]
    grid = make_grid(vals, a1, a2)
    pts = extract_isoline(grid, IsolineSpec(level=3.5))
    assert len(pts) > 0
    for x, y in pts:
        assert abs((x + y) - 3.5) <= 1.0  # within one cell spacing (exact here)
        assert abs((x + y) - 3.5) <= 1e-12  # plane: interpolation is exact


def test_isoline_constant_grid_returns_cell_centers():
    grid = make_grid(np.full((3, 4), 2.0))
    pts = extract_isoline(grid, IsolineSpec(level=2.0))
    assert len(pts) == 12
    assert {(x, y) for x, y in pts} == {(float(i), float(j)) for i in range(3) for j in range(4)}


def test_isoline_monotone_grid_gives_monotone_contour():
    a1 = np.arange(8.0)
    a2 = np.arange(8.0)
    vals = 2.0 * a1[:, None] + 1.0 * a2[None, :]
    grid = make_grid(vals, a1, a2)
    pts = extract_isoline(grid, IsolineSpec(level=7.3))
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    assert xs == sorted(xs)
    assert ys == sorted(ys, reverse=True)


def test_isoline_never_crossed_is_empty():
    grid = make_grid(np.ones((2, 2)))
    pts = extract_isoline(grid, IsolineSpec(level=5.0))
    assert pts.shape == (0, 2)


def test_isoline_skips_nan_cells():
    vals = np.array([[1.0, np.nan], [3.0, 4.0]])
    grid = make_grid(vals)
    pts = extract_isoline(grid, IsolineSpec(level=2.0))
    assert all(np.isfinite(p).all() for p in pts)


def fixed_input_evaluator(xs):
    def evaluate(model):
        return float(forward(model, xs).outputs.sum())
    return evaluate


def test_rank_sweep_full_corner_equals_uncompressed():
    rng = np.random.default_rng(0)
    model = init_model("rnn", 4, 6, 3, MEAN_POOL, rng)
    xs = rng.normal(size=(5, 2, 4))
    ev = fixed_input_evaluator(xs)
    grid = rank_sweep(model, [4], [6], ev)
    assert grid.values.shape == (1, 1)
    assert grid.values[0, 0] == ev(model)
    assert grid.delta[0, 0] == 0.0


def test_rank_sweep_matches_per_point_recompute():
    rng = np.random.default_rng(1)
    model = init_model("mgru", 4, 5, 3, MEAN_POOL, rng)
    xs = rng.normal(size=(4, 2, 4))
    ev = fixed_input_evaluator(xs)
    grid = rank_sweep(model, [1, 2, 4], [5], ev)
    for i, rf in enumerate([1, 2, 4]):
        cm = compress_model(model, CompressionPlan(rf, 5))
        assert abs(grid.values[i, 0] - ev(cm.model)) <= 1e-12


def test_rank_sweep_order_independent():
    rng = np.random.default_rng(2)
    model = init_model("rnn", 4, 5, 2, MEAN_POOL, rng)
    xs = rng.normal(size=(3, 2, 4))
    ev = fixed_input_evaluator(xs)
    cells = [(i, j) for i in range(3) for j in range(2)]
    g1 = rank_sweep(model, [1, 2, 4], [2, 5], ev)
    g2 = rank_sweep(model, [1, 2, 4], [2, 5], ev, cell_order=list(reversed(cells)))
    assert np.array_equal(g1.values, g2.values)
    assert np.array_equal(g1.delta, g2.delta)


def test_rank_sweep_records_failures_and_continues():
    rng = np.random.default_rng(3)
    model = init_model("rnn", 4, 5, 2, MEAN_POOL, rng)
    xs = rng.normal(size=(3, 2, 4))
    calls = []

    def flaky(m):
        calls.append(1)
        if len(calls) == 2:
            raise RuntimeError("boom")
        return float(forward(m, xs).outputs.sum())

    grid = rank_sweep(model, [1, 4], [2, 5], flaky)
    assert np.isnan(grid.values).sum() == 1
    assert len(grid.failures) == 1
    assert grid.failed_fraction == 0.25


def test_temporal_sweep_properties():
    rng = np.random.default_rng(4)
    model = init_model("rnn", 2, 10, 1, PER_STEP_MSE, rng)

    def gen(t, b, r):
        return gen_memorization_batch(4, t, b, r)

    grid = temporal_sweep(model, gen, ranks=[2, 5, 10], t_values=[0, 2, 4], trials=16, seed=7)
    assert grid.values.shape == (3, 3)
    assert np.all(np.isfinite(grid.values))
    # delta non-increasing along the rank axis, zero at full rank
    assert np.all(np.diff(grid.delta[:, 0]) <= 1e-12)
    assert abs(grid.delta[-1, 0]) <= 1e-12
    # full-rank row equals the uncompressed measurement
    direct = measure_error(model, gen, rank=None, t=2, trials=16, seed=7)
    assert abs(grid.values[-1, 1] - direct) <= 1e-12
    assert np.all(grid.n == 16)


def test_grid_csv_round_trip(tmp_path):
    vals = np.array([[1.0, np.nan], [0.5, 2.5]])
    grid = make_grid(vals, [1.0, 2.0], [10.0, 20.0], metric="rms_error")
    grid.delta[0, 0] = 0.125
    p = tmp_path / "grid.csv"
    write_grid_csv(p, grid, digest="abc123")
    assert p.read_text().startswith("# run_digest=abc123\n")
    back = read_grid_csv(p)
    assert back.axis1_name == "a" and back.axis2_name == "b" and back.metric == "rms_error"
    assert np.array_equal(back.axis1, grid.axis1)
    assert np.allclose(back.values, grid.values, equal_nan=True)
    assert back.delta[0, 0] == 0.125
    assert np.array_equal(back.n, grid.n)


def test_grid_to_db():
    grid = make_grid(np.array([[80.0, 89.76], [160.0, 800.0]]), metric="perplexity")
    db = grid_to_db(grid)
    assert db.metric == "perplexity_db"
    assert db.values[0, 0] == 0.0
    assert abs(db.values[0, 1] - 1.0) <= 0.01
    assert abs(db.values[1, 1] - 20.0) <= 1e-9
    assert np.all(db.values >= 0.0)


def test_crossing_rank_interpolates():
    ranks = [1, 2, 4, 8]
    vals = [9.0, 5.0, 3.0, 1.0]  # decreasing metric, level 4 crossed between 2 and 4
    r = crossing_rank(ranks, vals, 4.0)
    assert 2.0 < r < 4.0
    assert abs(r - 3.0) <= 1e-12  # linear between (2,5) and (4,3)
    assert crossing_rank(ranks, [0.5, 0.4, 0.3, 0.2], 1.0) == 1.0  # whole curve under
    assert crossing_rank(ranks, vals, 9.0) == 1.0
    assert crossing_rank(ranks, [9.0, 5.0, 3.0, 2.0], 1.0) is None  # never reaches level
