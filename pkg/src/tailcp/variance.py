"""Pooled variance of the score multiplier, valid with or without a change.

The sample is split around an estimated change ``t_hat``; each side (trimmed by
``h`` away from ``t_hat``) gets its own penalised fit, and the squared score
multipliers ``(1 - alpha) e_hat_i - alpha eps_hat_i`` are averaged per side and
recombined with weights ``t_hat`` and ``1 - t_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math

import numpy as np

from .core import Dataset, TestConfig, WeightedLossSpec
from .solver import SolverConfig, fit_weighted_lasso, penalty_level

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2: float
    sigma2_minus: float
    sigma2_plus: float
    n_minus: int
    n_plus: int
    t_hat_used: float
    converged: bool = True
    floored: bool = False


@dataclass(frozen=True)
class SegmentResiduals:
    minus_idx: np.ndarray  # 0-based rows of the left segment
    plus_idx: np.ndarray   # 0-based rows of the right segment
    eps_hat: np.ndarray    # regression residuals, left rows then right rows
    e_hat: np.ndarray      # averaged quantile indicators, same order


def segment_indices(n: int, t_hat: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """0-based rows of ``{i <= n h t}`` and ``{t n + (1-h)(1-t) n <= i <= n}`` (1-based i)."""
    if not 0.0 < h < 1.0:
        raise ValueError("h must lie in (0, 1)")
    last_minus = math.floor(n * h * t_hat + 1e-9)
    first_plus = max(math.ceil(t_hat * n + (1 - h) * (1 - t_hat) * n - 1e-9), 1)
    if last_minus < 1 or first_plus > n:
        raise ValueError(
            f"a variance segment is empty (n={n}, t_hat={t_hat:.3f}, h={h}); "
            "use a larger h or more observations")
    return np.arange(last_minus), np.arange(first_plus - 1, n)


def residuals(data: Dataset, spec: WeightedLossSpec, fit1, fit2, t_hat: float, h: float
              ) -> SegmentResiduals:
    minus, plus = segment_indices(data.n, t_hat, h)
    taus = spec.tau_array
    eps_parts, e_parts = [], []
    for rows, fit in ((minus, fit1), (plus, fit2)):
        eps = data.y[rows] - data.X[rows] @ fit.beta_hat
        ind = eps[:, None] <= np.asarray(fit.b_hat)[None, :]
        eps_parts.append(eps)
        e_parts.append(np.mean(ind - taus[None, :], axis=1))
    return SegmentResiduals(minus, plus, np.concatenate(eps_parts), np.concatenate(e_parts))


def estimate_sigma2(data: Dataset, spec: WeightedLossSpec, cfg: TestConfig, t_hat: float,
                    solver: SolverConfig | None = None, fits=None) -> VarianceEstimate:
    """``t_hat * s2_minus + (1 - t_hat) * s2_plus`` from segment-wise refits.

    ``fits`` may carry precomputed ``(fit_minus, fit_plus)`` to skip the refits.
    """
    minus, plus = segment_indices(data.n, t_hat, cfg.h)
    if fits is None:
        fits = []
        for rows in (minus, plus):
            seg = data.window(int(rows[0]), int(rows[-1]) + 1)
            if seg.n < spec.K + 1:
                raise ValueError(f"variance segment of {seg.n} rows is too short; "
                                 "use a larger h or more observations")
            fits.append(fit_weighted_lasso(seg, spec, penalty_level(seg, spec, cfg), solver))
    res = residuals(data, spec, fits[0], fits[1], t_hat, cfg.h)
    mult = (1 - spec.alpha) * res.e_hat - spec.alpha * res.eps_hat
    nm = len(minus)
    s2m = float(np.mean(mult[:nm] ** 2))
    s2p = float(np.mean(mult[nm:] ** 2))
    s2 = t_hat * s2m + (1 - t_hat) * s2p
    return VarianceEstimate(sigma2=s2, sigma2_minus=s2m, sigma2_plus=s2p, n_minus=nm,
                            n_plus=len(plus), t_hat_used=float(t_hat),
                            converged=all(f.converged for f in fits), floored=s2 < SIGMA2_FLOOR)


def standardizing_sigma(est: VarianceEstimate) -> float:
    """Square root of the estimate, floored away from zero (with a warning)."""
    if est.sigma2 < SIGMA2_FLOOR:
        log.warning("variance estimate %.3g is degenerate; flooring at %.0e", est.sigma2,
                    SIGMA2_FLOOR)
        return math.sqrt(SIGMA2_FLOOR)
    return math.sqrt(est.sigma2)
