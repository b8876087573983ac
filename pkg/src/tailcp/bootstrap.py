"""Multiplier bootstrap calibration, p-values and the tail-adaptive combination.

Each replicate ``b`` owns one standard-normal multiplier vector ``e^b`` drawn
from its own RNG stream; the same vector feeds every loss weight ``alpha`` so
that the per-alpha bootstrap statistics stay jointly coupled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from typing import Sequence

import numba
import numpy as np
from scipy.stats import norm

from .core import (ChangePointEstimate, Dataset, TestConfig, WeightedLossSpec, multiplier_variance,
                   s0_norm_rows)
from .cusum import cusum, estimate_changepoint, max_statistic, score_series, split_grid
from .solver import SolverConfig, fit_weighted_lasso, penalty_level
from .variance import VarianceEstimate, estimate_sigma2, standardizing_sigma

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# random streams and multipliers
# ---------------------------------------------------------------------------


def replicate_rng(seed: int, replicate: int, stream: Sequence[int] = ()) -> np.random.Generator:
    """Independent generator for one replicate; ``stream`` namespaces callers."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(*map(int, stream), int(replicate)))
    return np.random.default_rng(ss)


def multiplier_matrix(n: int, B: int, seed: int, stream: Sequence[int] = ()) -> np.ndarray:
    """``n x B`` standard-normal multipliers, column ``b`` from replicate stream ``b``."""
    E = np.empty((n, B))
    for b in range(B):
        E[:, b] = replicate_rng(seed, b, stream).standard_normal(n)
    return E


def multiplier_weights(E: np.ndarray, spec: WeightedLossSpec) -> np.ndarray:
    """Row weights ``(1 - alpha) e^b(tau) - alpha e^b`` for multipliers ``E``."""
    thr = norm.ppf(spec.tau_array)
    ind = np.zeros_like(E)
    for t, q in zip(spec.tau_array, thr):
        ind += (E <= q) - t
    ind /= spec.K
    return (1 - spec.alpha) * ind - spec.alpha * E


def bootstrap_variance_v2(spec: WeightedLossSpec) -> float:
    """Analytic variance of the bootstrap row weight under N(0, 1) multipliers."""
    return multiplier_variance(spec)


# ---------------------------------------------------------------------------
# bootstrap maxima
# ---------------------------------------------------------------------------


@numba.njit(nogil=True, cache=True)
def _max_sq_norms(X, W, lo, hi, s0, out):  # pragma: no cover - compiled
    n, p = X.shape
    tot = np.empty(p)
    run = np.empty(p)
    buf = np.empty(p)
    for b in range(W.shape[1]):
        tot[:] = 0.0
        for i in range(n):
            w = W[i, b]
            for j in range(p):
                tot[j] += w * X[i, j]
        run[:] = 0.0
        best = 0.0
        for k in range(1, hi + 1):
            w = W[k - 1, b]
            for j in range(p):
                run[j] += w * X[k - 1, j]
            if k < lo:
                continue
            f = k / n
            ss = 0.0
            for j in range(p):
                d = run[j] - f * tot[j]
                buf[j] = d * d
                ss += d * d
            if ss <= best:  # the (s0, 2)-norm never exceeds the full norm
                continue
            if s0 < p:
                ss = 0.0
                for r in range(s0):  # partial selection of the s0 largest squares
                    m = r
                    for j in range(r + 1, p):
                        if buf[j] > buf[m]:
                            m = j
                    buf[r], buf[m] = buf[m], buf[r]
                    ss += buf[r]
                if ss <= best:
                    continue
            best = ss
        out[b] = best


def max_cusum_norms(X: np.ndarray, W: np.ndarray, q0: float, s0: int, threads: int = 1
                    ) -> np.ndarray:
    """Per-column max over the trimmed grid of the unscaled (s0, 2)-norm CUSUM of ``W_b * X``."""
    X = np.ascontiguousarray(X, dtype=float)
    W = np.ascontiguousarray(W, dtype=float)
    n, p = X.shape
    grid = split_grid(n, q0)
    s0 = min(int(s0), p)
    out = np.empty(W.shape[1])
    chunks = np.array_split(np.arange(W.shape[1]), max(1, min(int(threads), W.shape[1])))

    def work(idx):
        if len(idx):
            part = np.empty(len(idx))
            _max_sq_norms(X, np.ascontiguousarray(W[:, idx]), int(grid[0]), int(grid[-1]), s0,
                          part)
            out[idx] = part

    if len(chunks) == 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            list(pool.map(work, chunks))
    return np.sqrt(out)


def max_cusum_norms_reference(X: np.ndarray, W: np.ndarray, q0: float, s0: int) -> np.ndarray:
    """Plain numpy version of :func:`max_cusum_norms` (slow; used as a test oracle)."""
    out = np.empty(W.shape[1])
    for b in range(W.shape[1]):
        proc = cusum(W[:, b, None] * X, 1.0, q0)
        out[b] = float(np.max(s0_norm_rows(proc.values, min(s0, X.shape[1]))))
    return out * math.sqrt(X.shape[0])


def bootstrap_samples(X: np.ndarray, spec: WeightedLossSpec, cfg: TestConfig, E: np.ndarray,
                      threads: int = 1) -> np.ndarray:
    """``T_alpha^1 .. T_alpha^B`` for multipliers ``E`` (``n x B``)."""
    n = X.shape[0]
    v = math.sqrt(bootstrap_variance_v2(spec))
    raw = max_cusum_norms(X, multiplier_weights(E, spec), cfg.q0, cfg.s0_for(X.shape[1]), threads)
    return raw / (math.sqrt(n) * v)


def bootstrap_statistic(X: np.ndarray, spec: WeightedLossSpec, cfg: TestConfig,
                        rng_stream: np.random.Generator | int) -> float:
    """One bootstrap replicate.  An integer ``rng_stream`` is a replicate index under ``cfg.seed``."""
    X = np.asarray(X, dtype=float)
    if not isinstance(rng_stream, np.random.Generator):
        rng_stream = replicate_rng(cfg.seed, int(rng_stream))
    e = rng_stream.standard_normal(X.shape[0])
    return float(bootstrap_samples(X, spec, cfg, e[:, None])[0])


# ---------------------------------------------------------------------------
# individual and adaptive tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IndividualTestResult:
    alpha: float
    T: float
    p_hat: float
    reject: bool
    t_hat: ChangePointEstimate
    sigma2: VarianceEstimate
    bootstrap_samples: np.ndarray = field(repr=False)
    lam: float = math.nan
    warnings: tuple = ()

    @property
    def B(self) -> int:
        return len(self.bootstrap_samples)


@dataclass(frozen=True)
class AdaptiveTestResult:
    T_ad: float
    p_ad: float
    reject: bool
    alpha_star: float
    t_hat_ad: ChangePointEstimate
    individual: tuple
    pseudo_min: np.ndarray = field(repr=False, default=None)

    @property
    def statistic(self) -> float:
        """Standardised statistic of the selected weight."""
        return next(r.T for r in self.individual if r.alpha == self.alpha_star)


def empirical_pvalue(T: float, samples: np.ndarray) -> float:
    """``#{b : T^b > T} / (B + 1)``; ties are not counted."""
    samples = np.asarray(samples)
    return float(np.count_nonzero(samples > T)) / (len(samples) + 1)


def run_individual_test(data: Dataset, spec: WeightedLossSpec, cfg: TestConfig, *,
                        solver: SolverConfig | None = None, multipliers: np.ndarray | None = None,
                        samples: np.ndarray | None = None, threads: int = 1
                        ) -> IndividualTestResult:
    """Fit, locate, standardise and calibrate one weighted-loss test.

    ``multipliers`` (``n x B``) may be supplied so several weights share draws;
    ``samples`` skips the bootstrap entirely when the caller already has them.
    """
    if cfg.B < 1:
        raise ValueError("B must be >= 1")
    notes = []
    lam = penalty_level(data, spec, cfg)
    fit = fit_weighted_lasso(data, spec, lam, solver)
    if not fit.converged:
        notes.append("full-sample fit did not converge")
    t_hat = estimate_changepoint(data, spec, cfg, fit)
    s2 = estimate_sigma2(data, spec, cfg, t_hat.t_hat, solver)
    if not s2.converged:
        notes.append("segment fit did not converge")
    if s2.floored:
        notes.append("variance estimate floored")
    proc = cusum(score_series(data, spec, fit), standardizing_sigma(s2), cfg.q0, spec.alpha)
    T, _ = max_statistic(proc, cfg.s0_for(data.p))
    if samples is None:
        if multipliers is None:
            multipliers = multiplier_matrix(data.n, cfg.B, cfg.seed)
        samples = bootstrap_samples(data.X, spec, cfg, multipliers, threads)
    samples = np.asarray(samples, dtype=float)
    samples.setflags(write=False)
    p_hat = empirical_pvalue(T, samples)
    return IndividualTestResult(alpha=spec.alpha, T=T, p_hat=p_hat, reject=p_hat <= cfg.gamma,
                                t_hat=t_hat, sigma2=s2, bootstrap_samples=samples, lam=lam,
                                warnings=tuple(notes))


def pseudo_pvalues(samples: np.ndarray, observed: float | None = None) -> np.ndarray:
    """Leave-one-out pseudo p-values ``#{others > T^b} / (B + 1)`` for each replicate.

    With ``observed`` given, the observed statistic counts among the others, so the
    observed and the ``B`` replicates are treated symmetrically and every pseudo value
    lives on the same ``k / (B + 1)`` grid as the observed p-value.
    """
    samples = np.asarray(samples, dtype=float)
    srt = np.sort(samples)
    greater = len(samples) - np.searchsorted(srt, samples, side="right")
    if observed is not None:
        greater = greater + (observed > samples)
    return greater / (len(samples) + 1)


def adaptive_pvalue(individual: Sequence[IndividualTestResult], cfg: TestConfig
                    ) -> AdaptiveTestResult:
    """Minimum p-value over weights, calibrated with the same bootstrap replicates."""
    if not individual:
        raise ValueError("need at least one individual result")
    Bs = {r.B for r in individual}
    if len(Bs) != 1:
        raise ValueError(f"individual results disagree on the replicate count: {sorted(Bs)}")
    B = Bs.pop()
    ordered = sorted(individual, key=lambda r: r.alpha)
    p = np.array([r.p_hat for r in ordered])
    j = int(np.argmin(p))  # first index: smallest alpha on ties
    T_ad = float(p[j])
    pseudo = np.min(np.vstack([pseudo_pvalues(r.bootstrap_samples, r.T) for r in ordered]),
                    axis=0)
    # empirical CDF of the bootstrap minima at T_ad
    p_ad = float(np.count_nonzero(pseudo <= T_ad)) / (B + 1)
    pseudo.setflags(write=False)
    return AdaptiveTestResult(T_ad=T_ad, p_ad=p_ad, reject=p_ad <= cfg.gamma,
                              alpha_star=ordered[j].alpha, t_hat_ad=ordered[j].t_hat,
                              individual=tuple(ordered), pseudo_min=pseudo)


def run_adaptive_test(data: Dataset, cfg: TestConfig, *, solver: SolverConfig | None = None,
                      threads: int = 1, stream: Sequence[int] = ()) -> AdaptiveTestResult:
    """Every weight in ``cfg.alpha_set`` on shared multipliers, then the adaptive combination."""
    E = multiplier_matrix(data.n, cfg.B, cfg.seed, stream)
    results = [run_individual_test(data, cfg.spec(a), cfg, solver=solver, multipliers=E,
                                   threads=threads) for a in cfg.alpha_set]
    return adaptive_pvalue(results, cfg)
