import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from tailcp.core import TestConfig
from tailcp.simlab import (ErrorDist, ScenarioSpec, experiment_from_dict, generate, hausdorff,
                           load_experiment, parse_dist, preset_cells, run_experiment,
                           signal_vector, snr, snr_curve, strong_jump, write_csv, write_json)


# --- SNR ---------------------------------------------------------------------


def snr_by_quadrature(alpha, taus, frozen):
    """Direct numeric integration of every moment in the SNR ratio."""
    taus = np.asarray(taus, float)
    b = frozen.ppf(taus)
    num = (1 - alpha) * np.mean(frozen.pdf(b)) + alpha
    var_e = sum(min(a, c) - a * c for a in taus for c in taus) / len(taus) ** 2
    var_eps = integrate.quad(lambda x: x * x * frozen.pdf(x), -np.inf, np.inf,
                             epsabs=0, epsrel=1e-12, limit=400)[0]
    cov = np.mean([integrate.quad(lambda x: x * frozen.pdf(x), -np.inf, bk, epsabs=0,
                                  epsrel=1e-12, limit=400)[0] for bk in b])
    s2 = (1 - alpha) ** 2 * var_e + alpha ** 2 * var_eps - 2 * alpha * (1 - alpha) * cov
    return num / math.sqrt(s2)


def test_snr_examples():
    assert snr(0.0, (0.5,), "normal") == pytest.approx(2 * stats.norm.pdf(0), abs=1e-12)
    assert snr(0.0, (0.5,), "normal") == pytest.approx(0.79788, abs=1e-5)
    assert snr(0.0, (0.5,), "laplace") == pytest.approx(1.0, abs=1e-12)
    for law, sd in [("normal:2", 2.0), ("laplace:1", math.sqrt(2)), ("t:5", math.sqrt(5 / 3))]:
        assert snr(1.0, (0.5,), law) == pytest.approx(1 / sd, rel=1e-12)


@pytest.mark.parametrize("law,frozen", [
    ("normal:0.7", stats.norm(0, 0.7)),
    ("laplace", stats.laplace()),
    ("t:3", stats.t(3)),
    ("t:6", stats.t(6)),
])
@pytest.mark.parametrize("alpha", [0.0, 0.1, 0.5, 0.9, 1.0])
@pytest.mark.parametrize("taus", [(0.5,), (0.1, 0.3, 0.5, 0.7, 0.9)])
def test_snr_matches_quadrature(law, frozen, alpha, taus):
    assert snr(alpha, taus, law) == pytest.approx(snr_by_quadrature(alpha, taus, frozen),
                                                  abs=1e-6)


@pytest.mark.parametrize("df", [2.5, 3.0, 7.0])
@pytest.mark.parametrize("b", [-2.0, -0.3, 0.0, 1.1])
def test_student_t_partial_mean_closed_form(df, b):
    # E[eps 1{eps <= b}] = -(df + b^2) / (df - 1) * f(b)
    exact = -(df + b * b) / (df - 1) * stats.t.pdf(b, df)
    assert ErrorDist("student_t", 1.0, df).partial_mean(b) == pytest.approx(exact, rel=1e-8)


def test_snr_argmax_shapes():
    assert snr_curve("normal:" + repr(math.sqrt(0.5))).argmax == 1.0
    assert snr_curve("laplace").argmax == 0.0


def test_snr_errors_for_infinite_variance():
    with pytest.raises(ValueError, match="undefined"):
        snr(0.5, (0.5,), "cauchy")
    with pytest.raises(ValueError):
        snr(0.1, (0.5,), "t:2")
    assert snr(0.0, (0.5,), "cauchy") > 0
    curve = snr_curve("cauchy")
    assert curve.argmax == 0.0 and np.isnan(curve.values[1:]).all()


@given(st.sampled_from(["normal", "laplace", "t:3", "t:10", "normal:3"]),
       st.floats(0.0, 1.0))
def test_snr_positive_and_finite(law, alpha):
    v = snr(alpha, (0.5,), law)
    assert np.isfinite(v) and v > 0


def test_parse_dist():
    assert parse_dist("t:3") == ErrorDist("student_t", 1.0, 3.0)
    assert parse_dist("normal:0.5") == ErrorDist("normal", 0.5)
    assert parse_dist({"name": "laplace", "scale": 2.0}).scale == 2.0
    with pytest.raises(ValueError):
        parse_dist("gamma")


# --- scenarios ---------------------------------------------------------------


def test_generate_is_seed_deterministic():
    cell = ScenarioSpec(n=50, p=8, changepoints=(0.5,), c=1.0)
    a = generate(cell, np.random.default_rng(5))
    b = generate(cell, np.random.default_rng(5))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)


def test_sample_covariance_matches_sigma():
    cell = ScenarioSpec(n=10000, p=15)
    X = generate(cell, np.random.default_rng(0)).X
    assert np.max(np.abs(np.cov(X, rowvar=False) - cell.sigma())) <= 0.05


def test_banded_sigma_structure():
    S = ScenarioSpec(p=20, rho=0.5, bandwidth=3).sigma()
    assert S[0, 3] == pytest.approx(0.125) and S[0, 4] == 0.0
    np.testing.assert_allclose(S, S.T)


def test_non_pd_covariance_rejected():
    with pytest.raises(ValueError):
        ScenarioSpec(p=30, rho=0.99, bandwidth=2).sigma()


def test_noiseless_piecewise_exact():
    cell = ScenarioSpec(n=60, p=6, changepoints=(0.5,), c=2.0,
                        error=ErrorDist("normal", 0.0))
    d = generate(cell, np.random.default_rng(1))
    B = cell.segment_betas()
    np.testing.assert_allclose(d.y[:30], d.X[:30] @ B[0], atol=1e-12)
    np.testing.assert_allclose(d.y[30:], d.X[30:] @ B[1], atol=1e-12)


def test_zero_jump_gives_one_segment():
    B = ScenarioSpec(p=10, changepoints=(0.3, 0.6), c=0.0).segment_betas()
    assert (B == B[0]).all()


def test_invalid_scenarios():
    with pytest.raises(ValueError):
        ScenarioSpec(changepoints=(0.6, 0.4))
    with pytest.raises(ValueError):
        ScenarioSpec(covariance="toeplitz")
    with pytest.raises(ValueError):
        ScenarioSpec(p=5, s=6)


# --- signal vector -----------------------------------------------------------


def test_signal_vector_zero_jump():
    assert not signal_vector(ScenarioSpec(p=10, changepoints=(0.5,), c=0.0), 0.5).any()


def test_signal_vector_identity_formula():
    cell = ScenarioSpec(p=10, covariance="identity", changepoints=(0.5,), c=1.5,
                        betas=((0,) * 10, (1.5,) + (0,) * 9))
    D = signal_vector(cell, 0.0)
    assert D[0] == pytest.approx(snr(0.0, (0.5,), "normal") * 1.5 / 4)
    assert not D[1:].any()


def test_signal_vector_banded_dense_oracle():
    cell = ScenarioSpec(p=25, changepoints=(0.3,), c=0.8)
    B = cell.segment_betas()
    S = cell.sigma()
    dense = np.array([sum(S[j, k] * (B[0, k] - B[1, k]) for k in range(25)) for j in range(25)])
    want = snr(0.5, (0.5,), "normal") * np.abs(0.3 * 0.7 * dense)
    want[B[0] == B[1]] = 0.0
    np.testing.assert_allclose(signal_vector(cell, 0.5), want, rtol=1e-12)


def test_signal_vector_needs_single_change():
    with pytest.raises(ValueError):
        signal_vector(ScenarioSpec(changepoints=(0.3, 0.6), c=1.0), 0.5)


def test_strong_jump_meets_target():
    cell = ScenarioSpec(n=200, p=50, changepoints=(0.5,))
    c = strong_jump(cell)
    cell = cell.with_(c=c)
    best = max(np.sqrt(np.sum(np.sort(signal_vector(cell, a) ** 2)[-5:]))
               for a in (0, 0.1, 0.5, 0.9, 1))
    assert best == pytest.approx(5 * math.sqrt(math.log(50 * 200) / 200), rel=1e-9)


# --- Hausdorff ---------------------------------------------------------------


def test_hausdorff_cases():
    assert hausdorff([], []) == 0.0
    assert hausdorff([], [0.5]) == 1.0
    assert hausdorff([0.5], []) == 1.0
    assert hausdorff([0.26, 0.5], [0.25, 0.5, 0.75]) == pytest.approx(0.25)
    assert hausdorff([0.3], [0.25]) == pytest.approx(0.05)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6),
       st.lists(st.floats(0, 1), min_size=1, max_size=6))
def test_hausdorff_symmetric(a, b):
    assert hausdorff(a, b) == hausdorff(b, a)
    assert hausdorff(a, a) == 0.0


# --- experiment harness ------------------------------------------------------


FAST = TestConfig(B=20, alpha_set=(0.5, 1.0))


def test_run_experiment_deterministic_records():
    cells = [ScenarioSpec(n=80, p=10, label="h0")]
    a = run_experiment("size", cells, FAST, reps=2, seed=3)
    b = run_experiment("size", cells, FAST, reps=2, seed=3)
    assert a == b
    row = a[0]
    assert row["ok"] == 2 and row["errors"] == 0
    assert {"rate_ad", "rate_0.5", "rate_1"} <= row.keys()


def test_run_experiment_estimation_columns():
    cells = [ScenarioSpec(n=80, p=10, changepoints=(0.5,), c=2.0)]
    row = run_experiment("estimation", cells, FAST, reps=1)[0]
    assert row["median_err_ad"] >= 0 and "iqr_err_1" in row


def test_run_experiment_counts_replicate_errors(monkeypatch):
    import tailcp.simlab as sl

    real = sl.run_adaptive_test
    calls = []

    def flaky(data, cfg, **kw):
        calls.append(1)
        if len(calls) % 2 == 0:
            raise FloatingPointError("synthetic failure")
        return real(data, cfg, **kw)

    monkeypatch.setattr(sl, "run_adaptive_test", flaky)
    row = run_experiment("size", [ScenarioSpec(n=80, p=10)], FAST, reps=4)[0]
    assert row["ok"] == 2 and row["errors"] == 2
    assert row["first_error"] == "FloatingPointError: synthetic failure"


def test_experiment_from_toml(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text("""
kind = "size"
reps = 3
seed = 9

[test]
B = 50
alpha_set = [0.0, 1.0]

[[cells]]
n = 100
p = 20
error = "t:4"

[[cells]]
n = 100
p = 20
error = {name = "laplace", scale = 2.0}
""")
    exp = load_experiment(path)
    assert exp.reps == 3 and exp.test.B == 50 and exp.test.alpha_set == (0.0, 1.0)
    assert exp.cells[0].error == ErrorDist("student_t", 1.0, 4.0)
    assert exp.cells[1].error.scale == 2.0
    with pytest.raises(ValueError, match="unknown"):
        experiment_from_dict({"kind": "size", "cells": [{"n": 10, "bogus": 1}]})
    with pytest.raises(ValueError):
        experiment_from_dict({"kind": "nope", "cells": [{}]})


def test_writers(tmp_path):
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "c": "x"}]
    write_csv(rows, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "a,b,c"
    write_json(rows, tmp_path / "r.json", {"seed": 1})
    assert '"seed": 1' in (tmp_path / "r.json").read_text()


def test_presets():
    assert [c.n for c in preset_cells("size")] == [200] * 3
    assert preset_cells("multi")[0].changepoints == (0.25, 0.5, 0.75)
    assert preset_cells("power", scale="full")[0].p == 400


def test_permuting_rows_within_segment_keeps_segment_statistics():
    cell = ScenarioSpec(n=100, p=6, changepoints=(0.4,), c=1.0)
    d = generate(cell, np.random.default_rng(2))
    perm = np.concatenate([np.random.default_rng(0).permutation(40),
                           40 + np.random.default_rng(1).permutation(60)])
    for lo, hi in [(0, 40), (40, 100)]:
        for M in (d.X, d.y):
            np.testing.assert_allclose(np.sort(M[lo:hi], axis=0), np.sort(M[perm][lo:hi], axis=0))
        # segment least-squares fit is exchangeable
        b1 = np.linalg.lstsq(d.X[lo:hi], d.y[lo:hi], rcond=None)[0]
        b2 = np.linalg.lstsq(d.X[perm][lo:hi], d.y[perm][lo:hi], rcond=None)[0]
        np.testing.assert_allclose(b1, b2, atol=1e-10)


@pytest.mark.slow
def test_laplace_power_ordering():
    """Under Laplace errors the median-type weight detects at least as often as least squares.

    Compared by median power over a grid of jump sizes on the default design.
    """
    base = ScenarioSpec(n=200, p=50, changepoints=(0.5,), error=parse_dist("laplace"))
    rows = run_experiment("power", [base.with_(c=c) for c in (0.1, 0.2, 0.3, 0.4)],
                          TestConfig(B=200, alpha_set=(0.0, 1.0)), reps=40, seed=1)
    assert all(r["errors"] == 0 for r in rows)
    assert np.median([r["rate_0"] for r in rows]) >= np.median([r["rate_1"] for r in rows])
