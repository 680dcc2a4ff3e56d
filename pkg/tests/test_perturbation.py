import numpy as np
import pytest

from rnnsvd.linalg import spectral_radius
from rnnsvd.network import PER_STEP_MSE, init_model
from rnnsvd.perturbation import (
    beta,
    exact_linear_error,
    linearity_fit,
    measure_error,
    predict_error,
)
from rnnsvd.tasks import gen_memorization_batch


def scaled_random(rng, n, sigma_max):
    w = rng.normal(size=(n, n))
    return w * (sigma_max / np.linalg.svd(w, compute_uv=False)[0])


def test_predict_error_zero_delta():
    rng = np.random.default_rng(0)
    wr = scaled_random(rng, 5, 0.8)
    x = rng.normal(size=5)
    assert np.allclose(predict_error(wr, np.zeros((5, 5)), x, 7), 0.0)
    assert np.allclose(predict_error(wr, np.zeros((5, 5)), x, 0), 0.0)


def test_predict_error_identity_recurrence():
    eps = 1e-3
    x = np.array([1.0, -2.0, 0.5])
    for t in (1, 4, 9):
        got = predict_error(np.eye(3), eps * np.eye(3), x, t)
        assert np.allclose(got, t * eps * x, atol=1e-15)


def test_exact_error_zero_delta_and_t1():
    rng = np.random.default_rng(1)
    wr = scaled_random(rng, 4, 0.9)
    delta = rng.normal(size=(4, 4)) * 1e-3
    x = rng.normal(size=4)
    assert np.allclose(exact_linear_error(wr, np.zeros((4, 4)), x, 6), 0.0)
    # at t = 1 the exact error is delta @ x and the prediction agrees exactly
    e1 = exact_linear_error(wr, delta, x, 1)
    assert np.allclose(e1, delta @ x, atol=1e-15)
    assert np.allclose(predict_error(wr, delta, x, 1), e1, atol=1e-15)


def test_exact_error_hand_cube():
    # W = [[1,1],[0,1]], delta = [[0,0],[1,0]], x = [1,2]:
    # (W+d)^3 x = [12,12], W^3 x = [7,2]  ->  difference [5,10]
    wr = np.array([[1.0, 1.0], [0.0, 1.0]])
    delta = np.array([[0.0, 0.0], [1.0, 0.0]])
    x = np.array([1.0, 2.0])
    assert np.allclose(exact_linear_error(wr, delta, x, 3), [5.0, 10.0], atol=1e-12)


def test_prediction_residual_is_second_order():
    # halving delta must shrink |exact - predicted| by ~4x
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(3, 9))
        wr = scaled_random(rng, n, 0.8)
        delta = rng.normal(size=(n, n))
        delta *= 1e-3 / np.sqrt(np.mean(delta ** 2))
        x = rng.normal(size=n)
        t = int(rng.integers(2, 11))
        gap1 = np.linalg.norm(exact_linear_error(wr, delta, x, t) - predict_error(wr, delta, x, t))
        half = delta / 2
        gap2 = np.linalg.norm(exact_linear_error(wr, half, x, t) - predict_error(wr, half, x, t))
        assert 3.5 <= gap1 / gap2 <= 4.5


def test_prediction_norm_growth_closed_form():
    # W_r = rho*I: prediction is T rho^(T-1) delta x exactly
    rng = np.random.default_rng(3)
    delta = rng.normal(size=(4, 4)) * 1e-3
    x = rng.normal(size=4)
    base = np.linalg.norm(delta @ x)
    for rho in (1.0, 0.7):
        for t in (1, 3, 8, 15):
            got = np.linalg.norm(predict_error(rho * np.eye(4), delta, x, t))
            assert abs(got - t * rho ** (t - 1) * base) <= 1e-12 * max(base, 1.0)


def test_predict_error_shape_checks():
    with pytest.raises(ValueError):
        predict_error(np.eye(3), np.eye(2), np.zeros(3), 2)
    with pytest.raises(ValueError):
        predict_error(np.ones((2, 3)), np.ones((2, 3)), np.zeros(3), 2)
    with pytest.raises(ValueError):
        predict_error(np.eye(3), np.eye(3), np.zeros(4), 2)


def test_rho_bound_keeps_prediction_from_blowing_up():
    # with rho <= 1 the T-step prediction stays O(T); with rho > 1 it grows
    rng = np.random.default_rng(4)
    delta = rng.normal(size=(4, 4)) * 1e-3
    x = rng.normal(size=4)
    tame = 0.9 * np.eye(4)
    wild = 1.3 * np.eye(4)
    rho_tame = spectral_radius(tame)
    assert rho_tame.value <= 1.0
    n_tame = [np.linalg.norm(predict_error(tame, delta, x, t)) for t in (5, 10, 20)]
    n_wild = [np.linalg.norm(predict_error(wild, delta, x, t)) for t in (5, 10, 20)]
    assert n_tame[2] <= 20 * np.linalg.norm(delta @ x)
    assert n_wild[2] > 50 * n_tame[2]


def test_beta_zero_surface():
    deltas = np.array([0.0, 0.01, 0.02])
    ts = np.arange(0, 6)
    curve = beta(deltas, ts, np.zeros((3, 6)), delta_f=0.02)
    assert np.all(curve.beta == 0.0)
    assert curve.t_values.tolist() == [1, 2, 3, 4, 5]


def test_beta_constant_surface_is_constant():
    deltas = np.array([0.0, 0.01, 0.02])
    ts = np.arange(0, 5)
    c = 0.37
    curve = beta(deltas, ts, np.full((3, 5), c), delta_f=0.02)
    # inner sqrt((1/T) * (T+1) * c^2) = c * sqrt((T+1)/T); approaches c
    for t_cap, val in zip(curve.t_values, curve.beta):
        assert abs(val - c * np.sqrt((t_cap + 1) / t_cap)) <= 1e-12


def test_beta_linear_surface_matches_double_sum_oracle():
    # err(delta, t) = delta * t, computed against explicit loops
    deltas = np.array([0.0, 0.01, 0.02, 0.03])
    ts = np.arange(0, 8)
    surface = deltas[:, None] * ts[None, :]
    delta_f = 0.02
    curve = beta(deltas, ts, surface, delta_f)
    included = [d for d in deltas if d <= delta_f]
    for t_cap, val in zip(curve.t_values, curve.beta):
        acc = 0.0
        for d in included:
            inner = 0.0
            for t in ts:
                if t <= t_cap:
                    inner += (d * t) ** 2
            acc += np.sqrt(inner / t_cap)
        expected = acc / len(included)
        assert abs(val - expected) <= 1e-12
    # frozen spot value: T=3, deltas {0, .01, .02}, sqrt(14/3)*mean(deltas)
    spot = curve.beta[curve.t_values.tolist().index(3)]
    assert abs(spot - 0.021602468994692867) <= 1e-15


def test_beta_validation():
    ts = np.arange(3)
    with pytest.raises(ValueError):
        beta(np.array([0.01, 0.02]), ts, np.zeros((2, 3)), 0.02)  # grid must start at 0
    with pytest.raises(ValueError):
        beta(np.array([0.0, 0.0, 0.01]), ts, np.zeros((3, 3)), 0.01)  # strictly ascending
    with pytest.raises(ValueError):
        beta(np.array([0.0, 0.01]), ts, np.zeros((2, 3)), -0.5)  # below first point
    with pytest.raises(ValueError):
        beta(np.array([0.0, 0.01]), ts, np.zeros((3, 2)), 0.01)  # shape mismatch


def test_linearity_fit_exact_line():
    t = np.arange(5, 31)
    slope, intercept, r2 = linearity_fit(np.stack([t, 2.0 * t], axis=1))
    assert abs(slope - 2.0) <= 1e-12
    assert abs(intercept) <= 1e-10
    assert abs(r2 - 1.0) <= 1e-12


def test_linearity_fit_constant_convention():
    t = np.arange(4)
    slope, _, r2 = linearity_fit(np.stack([t, np.full(4, 3.0)], axis=1))
    assert slope == 0.0
    assert r2 == 0.0


def test_linearity_fit_matches_normal_equations():
    rng = np.random.default_rng(5)
    x = np.linspace(0, 10, 40)
    y = 1.7 * x + 0.3 + rng.normal(size=40) * 0.25
    slope, intercept, r2 = linearity_fit(np.stack([x, y], axis=1))
    # closed-form normal equations, solved independently
    a = np.stack([x, np.ones_like(x)], axis=1)
    coef = np.linalg.solve(a.T @ a, a.T @ y)
    assert abs(slope - coef[0]) <= 1e-10
    assert abs(intercept - coef[1]) <= 1e-10
    assert 0.9 <= r2 <= 1.0


def test_linearity_fit_validation():
    with pytest.raises(ValueError):
        linearity_fit([(1.0, 2.0), (2.0, 3.0)])
    with pytest.raises(ValueError):
        linearity_fit([(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)])


def memorization_generator(n_bits):
    def gen(t, batch_size, rng):
        return gen_memorization_batch(n_bits, t, batch_size, rng)
    return gen


def test_measure_error_deterministic_and_rank_sensitive():
    rng = np.random.default_rng(6)
    model = init_model("rnn", 2, 12, 1, PER_STEP_MSE, rng)
    gen = memorization_generator(4)
    a = measure_error(model, gen, rank=None, t=3, trials=1, seed=11)
    b = measure_error(model, gen, rank=None, t=3, trials=1, seed=11)
    assert a == b
    c = measure_error(model, gen, rank=None, t=3, trials=1, seed=12)
    assert c != a  # different task seed, different trial
    full = measure_error(model, gen, rank=12, t=3, trials=64, seed=0)
    dense = measure_error(model, gen, rank=None, t=3, trials=64, seed=0)
    assert abs(full - dense) <= 1e-9  # full rank == no compression


def test_measure_error_validation():
    rng = np.random.default_rng(7)
    model = init_model("rnn", 2, 6, 1, PER_STEP_MSE, rng)
    with pytest.raises(ValueError):
        measure_error(model, memorization_generator(4), rank=None, t=2, trials=0)
