"""Wild-binary-segmentation search for several change points.

Random sub-intervals are drawn once; each gets a tail-adaptive p-value, and a
recursion over ``(S, E)`` splits at the estimate of the most significant
interval as long as its p-value beats the Bonferroni threshold ``gamma / V``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from .bootstrap import AdaptiveTestResult, run_adaptive_test
from .core import Dataset, TestConfig
from .solver import SolverConfig


@dataclass(frozen=True)
class IntervalSet:
    intervals: tuple  # ((s, e), ...) on the relative time scale
    V: int
    v0: float
    v1: float

    def __post_init__(self):
        if self.v1 < self.v0:
            raise ValueError("v1 must be >= v0")


def generate_intervals(cfg: TestConfig, V: int, v0: float, rng: np.random.Generator,
                       v1: float | None = None) -> IntervalSet:
    """``V`` sorted uniform intervals on ``[q0, 1 - q0]`` no shorter than ``v0``."""
    if V < 1:
        raise ValueError("V must be >= 1")
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    lo, hi = cfg.q0, 1 - cfg.q0
    if v0 > hi - lo:
        raise ValueError(f"v0={v0} exceeds the admissible range {hi - lo:.3f}")
    out = []
    for _ in range(100 * V):
        s, e = np.sort(rng.uniform(lo, hi, size=2))
        if e - s >= v0:
            out.append((float(s), float(e)))
            if len(out) == V:
                break
    else:
        raise ValueError(f"could not draw {V} intervals of length >= {v0} in {100 * V} attempts")
    return IntervalSet(tuple(out), V, float(v0), float(2 * v0 if v1 is None else v1))


def interval_rows(n: int, s: float, e: float) -> tuple[int, int]:
    """Half-open 0-based row range ``[floor(n s), floor(n e))`` covered by ``(s, e)``."""
    return int(math.floor(n * s + 1e-9)), int(math.floor(n * e + 1e-9))


@dataclass(frozen=True)
class IntervalResult:
    index: int
    s: float
    e: float
    p_ad: float
    statistic: float
    location: float  # absolute relative location of the interval's estimate
    test: AdaptiveTestResult | None = field(default=None, repr=False, compare=False)
    error: str | None = None


@dataclass(frozen=True)
class NodeTrace:
    S: float
    E: float
    depth: int
    p_bar: float
    nu_star: int | None
    decision: str  # "split" | "span" | "empty" | "threshold"
    location: float | None = None


@dataclass(frozen=True)
class MultiCpReport:
    changepoints: tuple
    per_node: tuple
    threshold: float
    intervals: tuple = field(default=(), repr=False)

    @property
    def max_depth(self) -> int:
        return max((t.depth for t in self.per_node), default=0)


def score_intervals(data: Dataset, cfg: TestConfig, intervals: IntervalSet, *,
                    solver: SolverConfig | None = None, threads: int = 1,
                    keep_tests: bool = False) -> tuple:
    """Adaptive test on every interval; interval ``nu`` uses RNG stream ``(1, nu)``."""

    def one(nu):
        s, e = intervals.intervals[nu]
        a, b = interval_rows(data.n, s, e)
        try:
            res = run_adaptive_test(data.window(a, b), cfg, solver=solver, stream=(1, nu))
        except ValueError as exc:  # too few rows for the window fits
            return IntervalResult(nu, s, e, math.inf, -math.inf, math.nan, error=str(exc))
        loc = (a + res.t_hat_ad.k_hat) / data.n
        return IntervalResult(nu, s, e, res.p_ad, res.statistic, loc,
                              test=res if keep_tests else None)

    idx = range(len(intervals.intervals))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return tuple(pool.map(one, idx))
    return tuple(one(nu) for nu in idx)


def segment_from_cache(cache: tuple, intervals: IntervalSet, gamma: float, q0: float
                       ) -> MultiCpReport:
    """The recursion over precomputed interval results (pure bookkeeping)."""
    thr = gamma / intervals.V
    found, trace = [], []

    def visit(S, E, depth):
        if E - S <= intervals.v1:
            trace.append(NodeTrace(S, E, depth, math.nan, None, "span"))
            return
        cands = [r for r in cache if S <= r.s and r.e <= E and r.e - r.s >= intervals.v0
                 and math.isfinite(r.p_ad)]
        if not cands:
            trace.append(NodeTrace(S, E, depth, math.nan, None, "empty"))
            return
        # minimum p-value; ties go to the larger statistic, then the lower index
        best = min(cands, key=lambda r: (r.p_ad, -r.statistic, r.index))
        if best.p_ad >= thr or not S < best.location < E:
            trace.append(NodeTrace(S, E, depth, best.p_ad, best.index, "threshold"))
            return
        t = best.location
        trace.append(NodeTrace(S, E, depth, best.p_ad, best.index, "split", t))
        found.append(t)
        visit(S, t, depth + 1)
        visit(t, E, depth + 1)

    visit(q0, 1 - q0, 0)
    return MultiCpReport(tuple(sorted(found)), tuple(trace), thr, cache)


def split_resolvable(cfg: TestConfig, V: int) -> bool:
    """True when ``B`` resolves the threshold: ``1/(B+1) < gamma/V``.

    Under the null an interval reaches ``p_ad = 0`` with probability about ``1/(B+1)``,
    so a coarser grid breaks the Bonferroni bound.
    """
    return 1 / (cfg.B + 1) < cfg.gamma / V


def wbs_detect(data: Dataset, cfg: TestConfig, intervals: IntervalSet, *,
               solver: SolverConfig | None = None, threads: int = 1) -> MultiCpReport:
    if not split_resolvable(cfg, intervals.V):
        warnings.warn(f"B={cfg.B} cannot resolve the threshold gamma/V={cfg.gamma / intervals.V:.2e};"
                      f" false splits occur at rate ~1/(B+1) per interval (need B + 1 > V / gamma)",
                      RuntimeWarning, stacklevel=2)
    cache = score_intervals(data, cfg, intervals, solver=solver, threads=threads)
    return segment_from_cache(cache, intervals, cfg.gamma, cfg.q0)
