import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tailcp.core import TestConfig, WeightedLossSpec, s0_norm
from tailcp.cusum import cusum, estimate_changepoint, max_statistic, score_series, split_grid
from tailcp.solver import fit_weighted_lasso

from conftest import make_data


def cusum_double_loop(Z, sigma, q0):
    n = len(Z)
    out = []
    for k in range(math.ceil(n * q0 - 1e-9), math.floor(n * (1 - q0) + 1e-9) + 1):
        if not 1 <= k <= n - 1:
            continue
        left = [sum(Z[i][j] for i in range(k)) for j in range(len(Z[0]))]
        full = [sum(Z[i][j] for i in range(n)) for j in range(len(Z[0]))]
        out.append([(left[j] - k / n * full[j]) / (math.sqrt(n) * sigma) for j in range(len(left))])
    return np.array(out)


@given(st.integers(2, 50), st.integers(1, 10), st.floats(0.01, 0.45), st.integers(0, 10 ** 6))
def test_prefix_sum_equals_double_loop(n, p, q0, seed):
    Z = np.random.default_rng(seed).standard_normal((n, p))
    try:
        grid = split_grid(n, q0)
    except ValueError:
        return
    proc = cusum(Z, 1.3, q0)
    np.testing.assert_allclose(proc.values, cusum_double_loop(Z.tolist(), 1.3, q0), atol=1e-12)
    assert np.array_equal(proc.grid, grid)


@given(st.sampled_from([8, 16, 32, 64]), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_shift_invariance_and_scale_equivariance_exact(n, p, seed):
    # integer data and n a power of two keep every operation exact in binary floating point
    rng = np.random.default_rng(seed)
    Z = rng.integers(-8, 8, size=(n, p)).astype(float)
    shift = rng.integers(-5, 5, size=p).astype(float)
    base = cusum(Z, 1.0, 0.1).values
    np.testing.assert_array_equal(cusum(Z + shift, 1.0, 0.1).values, base)
    np.testing.assert_array_equal(cusum(2.0 * Z, 2.0, 0.1).values, base)
    np.testing.assert_array_equal(cusum(4.0 * Z, 1.0, 0.1).values, 4.0 * base)


@given(st.integers(4, 50), st.integers(1, 6), st.floats(0.1, 10), st.integers(0, 10 ** 6))
def test_shift_invariance_and_scale_equivariance(n, p, c, seed):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p))
    base = cusum(Z, 1.0, 0.1).values
    np.testing.assert_allclose(cusum(Z + rng.normal(size=p), 1.0, 0.1).values, base, atol=1e-12)
    np.testing.assert_allclose(cusum(c * Z, c, 0.1).values, base, atol=1e-12)


def test_split_grid_examples_and_errors():
    assert list(split_grid(10, 0.1)) == list(range(1, 10))
    assert list(split_grid(200, 0.1)) == list(range(20, 181))
    assert list(split_grid(2, 0.4)) == [1]
    with pytest.raises(ValueError):
        split_grid(3, 0.45)


def test_two_rows_single_split_by_hand():
    Z = np.array([[1.0, -2.0], [3.0, 5.0]])
    proc = cusum(Z, 1.0, 0.4)
    expected = (Z[0] - 0.5 * Z.sum(axis=0)) / math.sqrt(2)
    np.testing.assert_allclose(proc.values[0], expected)
    T, k = max_statistic(proc, 1)
    assert k == 1 and T == pytest.approx(np.max(np.abs(expected)))


@given(st.integers(10, 40), st.integers(1, 6), st.integers(0, 10 ** 6), st.data())
def test_max_statistic_is_first_argmax(n, p, seed, data):
    Z = np.random.default_rng(seed).standard_normal((n, p))
    s0 = data.draw(st.integers(1, p))
    proc = cusum(Z, 1.0, 0.1)
    norms = [s0_norm(v, s0) for v in proc.values]
    T, k = max_statistic(proc, s0)
    assert T == pytest.approx(max(norms))
    assert k == proc.grid[int(np.argmax(norms))]


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        cusum(np.ones((5, 1)), 0.0)


def test_score_series_and_changepoint_estimate():
    data = make_data(200, 5, seed=1, beta=[1, 0, 0, 0, 0])
    y = np.array(data.y)
    y[120:] += 3 * data.X[120:, 1]
    from tailcp.core import Dataset

    data = Dataset(data.X, y)
    cfg = TestConfig()
    spec = WeightedLossSpec(1.0)
    fit = fit_weighted_lasso(data, spec, 0.05)
    Z = score_series(data, spec, fit)
    assert Z.shape == (200, 5)
    est = estimate_changepoint(data, spec, cfg, fit)
    assert abs(est.t_hat - 0.6) <= 0.05
    assert est.k_hat == round(est.t_hat * 200)
