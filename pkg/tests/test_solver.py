import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from tailcp.core import Dataset, TestConfig, WeightedLossSpec
from tailcp.solver import (SolverConfig, cross_validate_lambda, fit_weighted_lasso, kkt_residual,
                           lambda_max, objective, select_lambda)

from conftest import make_data


def lp_oracle(data, spec, lam):
    """Composite quantile lasso (alpha = 0) as a linear programme (HiGHS)."""
    X, y = data.X, data.y
    m, p = X.shape
    K, taus = spec.K, spec.tau_array
    nv = K + 2 * p + 2 * m * K
    c = np.r_[np.zeros(K), lam * np.ones(2 * p), np.tile(taus, m) / (m * K),
              np.tile(1 - taus, m) / (m * K)]
    A = np.zeros((m * K, nv))
    for i in range(m):
        for k in range(K):
            r = i * K + k
            A[r, k] = 1
            A[r, K:K + p] = X[i]
            A[r, K + p:K + 2 * p] = -X[i]
            A[r, K + 2 * p + r] = 1
            A[r, K + 2 * p + m * K + r] = -1
    bounds = [(None, None)] * K + [(0, None)] * (nv - K)
    res = linprog(c, A_eq=A, b_eq=np.repeat(y, K), bounds=bounds, method="highs")
    assert res.status == 0
    return res.fun


@pytest.mark.parametrize("seed", range(20))
def test_least_squares_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((50, 2))
    y = X @ np.array([1.0, -2.0]) + rng.standard_normal(50)
    fit = fit_weighted_lasso(Dataset(X, y), WeightedLossSpec(1.0), 0.0)
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    assert fit.converged
    assert np.max(np.abs(fit.beta_hat - ols)) <= 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_median_regression_lp_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    m = 2 * int(rng.integers(5, 30)) + 1
    X = rng.standard_normal((m, 1))
    y = 0.7 * X[:, 0] + rng.standard_t(3, m)
    data, spec = Dataset(X, y), WeightedLossSpec(0.0)
    fit = fit_weighted_lasso(data, spec, 0.0)
    assert fit.objective <= lp_oracle(data, spec, 0.0) + 1e-8


@pytest.mark.parametrize("seed", range(6))
def test_penalised_composite_quantile_lp_oracle(seed):
    rng = np.random.default_rng(200 + seed)
    X = rng.standard_normal((60, 8))
    y = X[:, :2] @ np.ones(2) + rng.standard_normal(60)
    data, spec = Dataset(X, y), WeightedLossSpec(0.0, (0.25, 0.5, 0.75))
    lam = 0.1
    fit = fit_weighted_lasso(data, spec, lam)
    assert fit.objective <= lp_oracle(data, spec, lam) + 1e-6


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_mixed_loss_matches_convex_solver(alpha):
    cp = pytest.importorskip("cvxpy")
    data = make_data(60, 8, seed=3, beta=[1, -1, 0, 0, 0, 0, 0, 0], tail=3)
    spec, lam = WeightedLossSpec(alpha, (0.3, 0.7)), 0.05
    b, beta = cp.Variable(2), cp.Variable(8)
    r = data.y - data.X @ beta
    quant = sum(cp.sum(cp.maximum(t * (r - b[k]), (t - 1) * (r - b[k])))
                for k, t in enumerate(spec.taus)) / (60 * 2)
    prob = cp.Problem(cp.Minimize((1 - alpha) * quant + alpha / 120 * cp.sum_squares(r)
                                  + lam * cp.norm1(beta)))
    prob.solve(solver="CLARABEL")
    fit = fit_weighted_lasso(data, spec, lam)
    assert fit.converged
    assert fit.objective <= prob.value + 1e-6
    assert objective(data, spec, b.value, beta.value, lam) == pytest.approx(prob.value, abs=1e-6)


def test_large_lambda_gives_zero_and_median():
    rng = np.random.default_rng(1)
    data = Dataset(rng.standard_normal((41, 5)), rng.standard_normal(41))
    spec = WeightedLossSpec(0.0)
    fit = fit_weighted_lasso(data, spec, 10.0)
    assert np.all(fit.beta_hat == 0)
    srt = np.sort(data.y)
    assert srt[19] <= fit.b_hat[0] <= srt[21]
    assert fit.b_hat[0] == pytest.approx(np.median(data.y))


@given(st.sampled_from([0.0, 0.3, 1.0]), st.integers(0, 10 ** 5))
@settings(max_examples=15)
def test_lambda_max_zeroes_beta(alpha, seed):
    data = make_data(40, 5, seed=seed, beta=[1, 0, 0, 0, 0])
    spec = WeightedLossSpec(alpha)
    fit = fit_weighted_lasso(data, spec, lambda_max(data, spec) * (1 + 1e-9))
    assert np.all(fit.beta_hat == 0) and fit.converged


def test_select_lambda_examples():
    d = Dataset(np.zeros((100, 100)) + np.eye(100), np.zeros(100))
    spec = WeightedLossSpec(0.5)
    assert select_lambda(d, spec, TestConfig(lambda_scale=1.0)) == pytest.approx(0.30349, abs=1e-5)
    assert select_lambda(d, spec, TestConfig(lambda_scale=2.0)) == pytest.approx(0.60697, abs=1e-5)
    assert select_lambda(d, spec, TestConfig(lambda_scale=0.0)) == 0.0


@given(st.sampled_from([0.0, 0.5, 1.0]), st.integers(0, 10 ** 5))
@settings(max_examples=10)
def test_support_shrinks_along_lambda_path(alpha, seed):
    data = make_data(60, 10, seed=seed, beta=[2, -1.5, 1, 0.5, 0, 0, 0, 0, 0, 0])
    spec = WeightedLossSpec(alpha)
    top = lambda_max(data, spec)
    sizes = [np.count_nonzero(np.abs(fit_weighted_lasso(data, spec, top * f).beta_hat) > 1e-8)
             for f in np.linspace(1.0, 0.05, 10)]
    assert all(b >= a - 1 for a, b in zip(sizes, sizes[1:]))  # tolerance-level ties
    assert sizes[0] == 0 and sizes[-1] >= sizes[0]


@given(st.floats(0, 1), st.integers(0, 10 ** 5))
@settings(max_examples=15)
def test_objective_below_zero_vector_and_history_monotone(alpha, seed):
    data = make_data(50, 6, seed=seed, beta=[1, 1, 0, 0, 0, 0], tail=3)
    spec = WeightedLossSpec(alpha, (0.25, 0.75))
    lam = 0.05
    fit = fit_weighted_lasso(data, spec, lam)
    zero = fit_weighted_lasso(data, spec, 1e6)
    assert fit.objective <= objective(data, spec, zero.b_hat, np.zeros(6), lam) + 1e-12
    h = np.asarray(fit.history)
    assert np.all(np.diff(h) <= 1e-15)
    assert fit.objective == pytest.approx(objective(data, spec, fit.b_hat, fit.beta_hat, lam))
    if fit.converged:
        assert fit.kkt_residual <= 1e-6 * max(1.0, np.max(np.abs(data.y)))


def test_kkt_residual_detects_suboptimal_point():
    data = make_data(40, 3, seed=2, beta=[1, 0, 0])
    spec = WeightedLossSpec(1.0)
    fit = fit_weighted_lasso(data, spec, 0.01)
    assert kkt_residual(data, spec, 0.01, fit.b_hat, fit.beta_hat) < 1e-6
    assert kkt_residual(data, spec, 0.01, fit.b_hat, fit.beta_hat + 0.1) > 1e-3


def test_nonconvergence_is_reported_not_raised(caplog):
    data = make_data(60, 10, seed=4, beta=[1, 1, 0, 0, 0, 0, 0, 0, 0, 0], tail=2)
    spec = WeightedLossSpec(0.5, (0.2, 0.5, 0.8))
    fit = fit_weighted_lasso(data, spec, 0.02, SolverConfig(max_iter=3, polish_every=1000))
    assert not fit.converged
    assert math.isfinite(fit.objective)
    assert "without certifying" in caplog.text


def test_errors():
    data = make_data(10, 2)
    with pytest.raises(ValueError):
        fit_weighted_lasso(data.window(0, 2), WeightedLossSpec(0.0, (0.2, 0.5, 0.8)), 0.1)
    with pytest.raises(ValueError):
        fit_weighted_lasso(data, WeightedLossSpec(0.0), -1.0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0)


def test_smoothing_warm_start_reaches_same_optimum():
    data = make_data(80, 6, seed=5, beta=[1, 0, 0, 0, 0, 0], tail=3)
    spec = WeightedLossSpec(0.0, (0.5,))
    a = fit_weighted_lasso(data, spec, 0.05)
    b = fit_weighted_lasso(data, spec, 0.05, SolverConfig(smoothing_bandwidth=0.5))
    assert a.objective == pytest.approx(b.objective, abs=1e-7)


def test_cross_validation_returns_a_grid_multiple():
    data = make_data(100, 5, seed=6, beta=[1, 0, 0, 0, 0])
    spec, cfg = WeightedLossSpec(1.0), TestConfig()
    lam = cross_validate_lambda(data, spec, cfg)
    base = select_lambda(data, spec, cfg)
    assert any(lam == pytest.approx(base * m) for m in (0.25, 0.5, 1, 2, 4))
