"""Domain types, norms and the pointwise loss/score primitives.

Everything here is a pure function of its inputs.  The weighted loss mixes a
composite quantile (check) loss with half the squared error::

    l_alpha(x, y; b, beta) = (1 - alpha) / K * sum_k rho_{tau_k}(y - b_k - x'beta)
                             + alpha / 2 * (y - x'beta) ** 2

and ``score`` is its subgradient with respect to ``beta`` only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Sequence

import numpy as np
from scipy.stats import norm


class DimensionError(ValueError):
    """Raised when array shapes disagree."""


def _as_taus(taus) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(taus, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("taus must be a non-empty 1-d sequence")
    return arr


@dataclass(frozen=True)
class Dataset:
    """Time-ordered regression sample: ``X`` is n x p, ``y`` has length n."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or y.ndim != 1:
            raise DimensionError("X must be 2-d and y 1-d")
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise ValueError("need n >= 2 observations and p >= 1 covariates")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("data contain non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def window(self, start: int, stop: int) -> "Dataset":
        """Rows ``start:stop`` (0-based, half open) as a new dataset."""
        return Dataset(self.X[start:stop], self.y[start:stop])

    def standardized(self) -> "Dataset":
        """Columns of X and y centred and scaled to unit variance."""
        X = self.X - self.X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        y = self.y - self.y.mean()
        ysd = y.std()
        return Dataset(X / sd, y / (ysd if ysd > 0 else 1.0))


@dataclass(frozen=True)
class WeightedLossSpec:
    """Loss weight ``alpha`` and the quantile grid ``taus``."""

    alpha: float
    taus: tuple = (0.5,)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        taus = _as_taus(self.taus)
        if np.any(taus <= 0) or np.any(taus >= 1):
            raise ValueError("every tau must lie strictly inside (0, 1)")
        if np.any(np.diff(taus) <= 0):
            raise ValueError("taus must be strictly increasing")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "taus", tuple(float(t) for t in taus))

    @property
    def K(self) -> int:
        return len(self.taus)

    @property
    def tau_array(self) -> np.ndarray:
        return np.asarray(self.taus)

    def with_alpha(self, alpha: float) -> "WeightedLossSpec":
        return WeightedLossSpec(alpha, self.taus)


DEFAULT_ALPHAS = (0.0, 0.1, 0.5, 0.9, 1.0)


@dataclass(frozen=True)
class TestConfig:
    """Tuning constants shared by the testing and detection procedures.

    ``s0`` is clamped to ``p`` at use time (see :meth:`s0_for`), so the same
    config can be reused across designs of different width.
    """

    __test__ = False  # not a pytest class

    s0: int = 5
    q0: float = 0.1
    gamma: float = 0.05
    B: int = 200
    h: float = 0.9
    alpha_set: tuple = DEFAULT_ALPHAS
    lambda_scale: float = 1.4
    seed: int = 0
    taus: tuple = (0.5,)
    lambda_rule: str = "score"  # "score": scale by the score sd v(alpha); "plain": no scaling

    def __post_init__(self):
        if int(self.s0) < 1:
            raise ValueError("s0 must be >= 1")
        if not 0.0 < self.q0 < 0.5:
            raise ValueError("q0 must lie in (0, 0.5)")
        if not 0.0 < self.gamma < 0.5:
            raise ValueError("gamma must lie in (0, 0.5)")
        if int(self.B) < 1:
            raise ValueError("B must be >= 1")
        if not 0.0 < self.h < 1.0:
            raise ValueError("h must lie in (0, 1)")
        alphas = tuple(sorted({float(a) for a in self.alpha_set}))
        if not alphas:
            raise ValueError("alpha_set must be non-empty")
        if alphas[0] < 0 or alphas[-1] > 1:
            raise ValueError("alpha_set must be a subset of [0, 1]")
        if self.lambda_scale < 0:
            raise ValueError("lambda_scale must be non-negative")
        if self.lambda_rule not in ("score", "plain"):
            raise ValueError("lambda_rule must be 'score' or 'plain'")
        WeightedLossSpec(0.0, self.taus)  # validates taus
        object.__setattr__(self, "s0", int(self.s0))
        object.__setattr__(self, "B", int(self.B))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "alpha_set", alphas)
        object.__setattr__(self, "taus", tuple(float(t) for t in _as_taus(self.taus)))

    def s0_for(self, p: int) -> int:
        return min(self.s0, p)

    def spec(self, alpha: float) -> WeightedLossSpec:
        return WeightedLossSpec(alpha, self.taus)

    def replace(self, **changes) -> "TestConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class ChangePointEstimate:
    """Relative location ``t_hat`` and split index ``k_hat = floor(n * t_hat)``."""

    t_hat: float
    k_hat: int
    alpha_used: float
    n: int = field(default=0, compare=False)

    @classmethod
    def from_index(cls, k: int, n: int, alpha: float) -> "ChangePointEstimate":
        return cls(t_hat=k / n, k_hat=int(k), alpha_used=float(alpha), n=int(n))


# ---------------------------------------------------------------------------
# pointwise primitives
# ---------------------------------------------------------------------------


def check_loss(t, tau: float):
    """Quantile check loss ``t * (tau - 1{t <= 0})``; vectorised over ``t``."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    t = np.asarray(t, dtype=float)
    out = t * (tau - (t <= 0))
    return float(out) if out.ndim == 0 else out


def _check_dims(x, beta, b, spec):
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if x.shape != beta.shape or x.ndim != 1:
        raise DimensionError(f"x {x.shape} and beta {beta.shape} disagree")
    if b.shape != (spec.K,):
        raise DimensionError(f"b must have length K={spec.K}, got {b.shape}")
    return x, beta, b


def weighted_loss(x, y: float, spec: WeightedLossSpec, b, beta) -> float:
    x, beta, b = _check_dims(x, beta, b, spec)
    fit = float(x @ beta)
    u = y - b - fit
    taus = spec.tau_array
    quant = float(np.mean(u * (taus - (u <= 0))))
    return (1 - spec.alpha) * quant + 0.5 * spec.alpha * (y - fit) ** 2


def score(x, y: float, spec: WeightedLossSpec, b, beta) -> np.ndarray:
    """Subgradient of :func:`weighted_loss` in ``beta`` (indicator is 1 at a kink)."""
    x, beta, b = _check_dims(x, beta, b, spec)
    fit = float(x @ beta)
    u = y - b - fit
    weight = (1 - spec.alpha) * float(np.mean((u <= 0) - spec.tau_array))
    weight -= spec.alpha * (y - fit)
    return weight * x


def score_weights(X: np.ndarray, y: np.ndarray, spec: WeightedLossSpec, b, beta) -> np.ndarray:
    """Per-observation scalar ``w_i`` such that the score of row i is ``w_i * X_i``."""
    fit = X @ beta
    U = (y - fit)[:, None] - np.asarray(b)[None, :]
    w = (1 - spec.alpha) * np.mean((U <= 0) - spec.tau_array[None, :], axis=1)
    return w - spec.alpha * (y - fit)


def multiplier_variance(spec: WeightedLossSpec) -> float:
    """Variance of ``(1 - alpha) e(tau) - alpha e`` for ``e ~ N(0, 1)``, in closed form."""
    t = spec.tau_array
    a = spec.alpha
    gam = np.minimum.outer(t, t) - np.outer(t, t)
    var_e = float(gam.sum()) / spec.K ** 2
    cov = float(np.mean(-norm.pdf(norm.ppf(t))))  # Cov(1{e <= q_k}, e) = -phi(q_k)
    return (1 - a) ** 2 * var_e + a ** 2 - 2 * a * (1 - a) * cov


def s0_norm(v, s0: int) -> float:
    """L2 norm of the ``s0`` largest-magnitude entries of ``v``."""
    v = np.asarray(v, dtype=float)
    p = v.shape[-1]
    if not 1 <= s0 <= p:
        raise ValueError(f"s0 must lie in [1, {p}], got {s0}")
    return float(s0_norm_rows(v[None, :], s0)[0]) if v.ndim == 1 else s0_norm_rows(v, s0)


def s0_norm_rows(V: np.ndarray, s0: int) -> np.ndarray:
    """Row-wise (s0, 2)-norm of an array whose last axis has length p."""
    sq = np.square(V)
    p = sq.shape[-1]
    if s0 >= p:
        return np.sqrt(sq.sum(axis=-1))
    top = np.partition(sq, p - s0, axis=-1)[..., p - s0:]
    return np.sqrt(top.sum(axis=-1))


def empirical_quantile(values: np.ndarray, tau: float) -> float:
    """``inf{t : F_m(t) >= tau}`` -- a minimiser of ``sum rho_tau(values - t)``."""
    srt = np.sort(values)
    idx = max(int(math.ceil(tau * len(srt) - 1e-12)) - 1, 0)
    return float(srt[idx])


def as_taus(taus: Sequence[float] | float) -> tuple:
    return tuple(float(t) for t in _as_taus(taus))
