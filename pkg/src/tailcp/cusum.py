"""Score CUSUM over the trimmed split grid and its (s0, 2)-norm maximum."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .core import (ChangePointEstimate, Dataset, DimensionError, TestConfig, WeightedLossSpec,
                   s0_norm_rows, score_weights)


@dataclass(frozen=True)
class CusumProcess:
    grid: np.ndarray    # split indices k (rows 1..k form the left segment)
    values: np.ndarray  # len(grid) x p
    sigma: float
    alpha: float
    n: int


def split_grid(n: int, q0: float) -> np.ndarray:
    """Split indices ``ceil(n q0) .. floor(n (1 - q0))``, clipped to ``1 .. n-1``."""
    lo = max(math.ceil(n * q0 - 1e-9), 1)
    hi = min(math.floor(n * (1 - q0) + 1e-9), n - 1)
    if hi < lo:
        raise ValueError(f"trimming q0={q0} leaves no split points for n={n}")
    return np.arange(lo, hi + 1)


def score_series(data: Dataset, spec: WeightedLossSpec, fit) -> np.ndarray:
    """Row i is the score of observation i at the fitted ``(b_hat, beta_hat)``."""
    beta = np.asarray(fit.beta_hat, dtype=float)
    b = np.atleast_1d(np.asarray(fit.b_hat, dtype=float))
    if beta.shape != (data.p,) or b.shape != (spec.K,):
        raise DimensionError("fit dimensions do not match the data/spec")
    return score_weights(data.X, data.y, spec, b, beta)[:, None] * data.X


def cusum(series: np.ndarray, sigma: float = 1.0, q0: float = 0.1, alpha: float = math.nan
          ) -> CusumProcess:
    """``(S_k - k/n S_n) / (sqrt(n) sigma)`` on the trimmed grid, via one prefix-sum pass."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    n = series.shape[0]
    grid = split_grid(n, q0)
    S = np.cumsum(series, axis=0)
    total = S[-1]
    vals = (S[grid - 1] - (grid / n)[:, None] * total) / (math.sqrt(n) * sigma)
    return CusumProcess(grid=grid, values=vals, sigma=float(sigma), alpha=float(alpha), n=n)


def max_statistic(process: CusumProcess, s0: int) -> tuple[float, int]:
    """Maximum (s0, 2)-norm over the grid and the first grid index attaining it."""
    if len(process.grid) == 0:
        raise ValueError("empty grid")
    norms = s0_norm_rows(process.values, min(s0, process.values.shape[1]))
    j = int(np.argmax(norms))  # argmax returns the first maximiser
    return float(norms[j]), int(process.grid[j])


def estimate_changepoint(data: Dataset, spec: WeightedLossSpec, cfg: TestConfig, fit
                         ) -> ChangePointEstimate:
    """Argmax of the unstandardised score CUSUM (sigma = 1)."""
    proc = cusum(score_series(data, spec, fit), 1.0, cfg.q0, spec.alpha)
    _, k = max_statistic(proc, cfg.s0_for(data.p))
    return ChangePointEstimate.from_index(k, data.n, spec.alpha)
