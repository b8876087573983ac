"""Scenario generators, the theoretical signal-to-noise ratio and a Monte-Carlo harness."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields
import json
import math
from pathlib import Path
import sys
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .bootstrap import run_adaptive_test
from .core import Dataset, TestConfig, as_taus
from .solver import SolverConfig
from .wbs import generate_intervals, wbs_detect

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


# ---------------------------------------------------------------------------
# error laws
# ---------------------------------------------------------------------------

_LAWS = ("normal", "student_t", "laplace", "cauchy")


@dataclass(frozen=True)
class ErrorDist:
    """Centred error law.  ``scale`` is the sd (normal) or the scale parameter otherwise."""

    name: str = "normal"
    scale: float = 1.0
    df: float = math.inf  # Student's t only

    def __post_init__(self):
        if self.name not in _LAWS:
            raise ValueError(f"unknown error law {self.name!r}; choose from {_LAWS}")
        if self.scale < 0:
            raise ValueError("scale must be non-negative")
        if self.name == "student_t" and not self.df > 0:
            raise ValueError("student_t needs df > 0")

    @property
    def _frozen(self):
        s = self.scale
        return {"normal": lambda: stats.norm(0, s), "laplace": lambda: stats.laplace(0, s),
                "cauchy": lambda: stats.cauchy(0, s),
                "student_t": lambda: stats.t(self.df, 0, s)}[self.name]()

    @property
    def label(self) -> str:
        if self.name == "student_t":
            return f"t{self.df:g}" + ("" if self.scale == 1 else f"(scale={self.scale:g})")
        return f"{self.name}({self.scale:g})"

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.scale == 0:
            return np.zeros(size)
        s = self.scale
        if self.name == "normal":
            return s * rng.standard_normal(size)
        if self.name == "laplace":
            return rng.laplace(0.0, s, size)
        if self.name == "cauchy":
            return s * rng.standard_cauchy(size)
        return s * rng.standard_t(self.df, size)

    def pdf(self, x):
        return self._frozen.pdf(x)

    def ppf(self, q):
        return self._frozen.ppf(q)

    @property
    def variance(self) -> float:
        if self.name == "cauchy" or (self.name == "student_t" and self.df <= 2):
            return math.inf
        return float(self._frozen.var())

    def partial_mean(self, b: float) -> float:
        """``E[eps 1{eps <= b}]``."""
        s = self.scale
        if s == 0:
            return 0.0
        if self.name == "normal":
            return float(-s * stats.norm.pdf(b / s))
        if self.name == "laplace":
            if b <= 0:
                return float(0.5 * math.exp(b / s) * (b - s))
            return float(-0.5 * math.exp(-b / s) * (b + s))
        if self.name == "cauchy" or (self.name == "student_t" and self.df <= 1):
            return -math.inf
        f = self._frozen.pdf
        val, _ = integrate.quad(lambda x: x * f(x), -np.inf, b, epsabs=0.0, epsrel=1e-10,
                                limit=200)
        return float(val)


def parse_dist(spec: str | dict | ErrorDist) -> ErrorDist:
    """``"normal"``, ``"normal:0.7"``, ``"t:3"``, ``"laplace:1"``, ``"cauchy"`` or a mapping."""
    if isinstance(spec, ErrorDist):
        return spec
    if isinstance(spec, dict):
        return ErrorDist(**spec)
    name, _, arg = str(spec).partition(":")
    name = name.strip().lower()
    if name in ("t", "student_t", "student"):
        return ErrorDist("student_t", 1.0, float(arg or 3))
    return ErrorDist(name, float(arg) if arg else 1.0)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """Piecewise-linear regression with Gaussian design.

    Segment ``j`` uses ``beta0`` on the first ``s`` coordinates plus
    ``c * (j % 2)`` on the same coordinates, so every change moves ``s``
    coefficients by ``c`` (alternating direction).  ``betas`` overrides this.
    """

    n: int = 200
    p: int = 50
    covariance: str = "banded"
    rho: float = 0.5
    bandwidth: int = 10
    error: ErrorDist = field(default_factory=ErrorDist)
    changepoints: tuple = ()
    s: int = 3
    c: float = 0.0
    beta0: float = 1.0
    betas: tuple | None = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "error", parse_dist(self.error))
        object.__setattr__(self, "changepoints", tuple(float(t) for t in self.changepoints))
        t = (0.0, *self.changepoints, 1.0)
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("change points must satisfy 0 < t_1 < ... < 1")
        if self.covariance not in ("banded", "identity"):
            raise ValueError("covariance must be 'banded' or 'identity'")
        if not 0 <= self.s <= self.p:
            raise ValueError("need 0 <= s <= p")
        if self.betas is not None:
            B = np.asarray(self.betas, dtype=float)
            if B.shape != (len(self.changepoints) + 1, self.p):
                raise ValueError("betas must have one row of length p per segment")

    def sigma(self) -> np.ndarray:
        if self.covariance == "identity":
            return np.eye(self.p)
        lag = np.abs(np.subtract.outer(np.arange(self.p), np.arange(self.p)))
        S = np.where(lag <= self.bandwidth, self.rho ** lag, 0.0)
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ValueError(f"banded covariance (rho={self.rho}, bandwidth={self.bandwidth}) "
                             "is not positive definite") from None
        return S

    def segment_betas(self) -> np.ndarray:
        if self.betas is not None:
            return np.asarray(self.betas, dtype=float)
        B = np.zeros((len(self.changepoints) + 1, self.p))
        B[:, : self.s] = self.beta0
        B[1::2, : self.s] += self.c
        return B

    def breaks(self) -> np.ndarray:
        """Row indices ``floor(n t_j)`` at which each new segment starts."""
        return np.floor(np.asarray(self.changepoints) * self.n + 1e-9).astype(int)

    def with_(self, **changes) -> "ScenarioSpec":
        from dataclasses import replace

        return replace(self, **changes)


def generate(spec: ScenarioSpec, rng: np.random.Generator) -> Dataset:
    Sigma = spec.sigma()
    L = np.linalg.cholesky(Sigma)
    X = rng.standard_normal((spec.n, spec.p)) @ L.T
    seg = np.searchsorted(spec.breaks(), np.arange(spec.n), side="right")
    B = spec.segment_betas()
    y = np.einsum("ij,ij->i", X, B[seg]) + spec.error.sample(rng, spec.n)
    return Dataset(X, y)


# ---------------------------------------------------------------------------
# signal-to-noise ratio
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SnrCurve:
    alphas: np.ndarray
    values: np.ndarray
    error_dist: str
    taus: tuple = (0.5,)

    @property
    def argmax(self) -> float:
        return float(self.alphas[int(np.nanargmax(self.values))])

    def rows(self):
        return [{"alpha": float(a), "snr": float(v), "dist": self.error_dist}
                for a, v in zip(self.alphas, self.values)]


def snr(alpha: float, taus, error_dist) -> float:
    """Signal-to-noise ratio of the weighted loss for the given error law."""
    dist = parse_dist(error_dist)
    taus = np.asarray(as_taus(taus))
    K = len(taus)
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha > 0 and not math.isfinite(dist.variance):
        raise ValueError("SNR undefined for an infinite-variance error law; use alpha=0")
    if dist.scale == 0:
        raise ValueError("SNR undefined for a degenerate (zero-scale) error law")
    b = dist.ppf(taus)
    num = (1 - alpha) * float(np.mean(dist.pdf(b))) + alpha
    gam = np.minimum.outer(taus, taus) - np.outer(taus, taus)
    var_e = float(gam.sum()) / K ** 2
    s2 = (1 - alpha) ** 2 * var_e
    if alpha > 0:
        cov = float(np.mean([dist.partial_mean(bk) for bk in b]))
        s2 += alpha ** 2 * dist.variance - 2 * alpha * (1 - alpha) * cov
    return num / math.sqrt(s2)


def snr_curve(error_dist, alphas=None, taus=(0.5,)) -> SnrCurve:
    dist = parse_dist(error_dist)
    alphas = np.round(np.linspace(0, 1, 11), 10) if alphas is None else np.asarray(alphas, float)
    vals = np.array([snr(a, taus, dist) if a == 0 or math.isfinite(dist.variance) else np.nan
                     for a in alphas])
    return SnrCurve(alphas, vals, dist.label, as_taus(taus))


def signal_vector(spec: ScenarioSpec, alpha: float, taus=(0.5,)) -> np.ndarray:
    """``SNR * |t1 (1 - t1) Sigma (beta1 - beta2)|`` on the changed coordinates."""
    if len(spec.changepoints) != 1:
        raise ValueError("signal_vector needs exactly one change point")
    t1 = spec.changepoints[0]
    B = spec.segment_betas()
    delta = B[0] - B[1]
    D = snr(alpha, taus, spec.error) * np.abs(t1 * (1 - t1) * (spec.sigma() @ delta))
    D[delta == 0] = 0.0
    return D


def hausdorff(est: Sequence[float], truth: Sequence[float]) -> float:
    """Symmetric Hausdorff distance on the relative time scale (1.0 if exactly one set is empty)."""
    a, b = np.asarray(est, float), np.asarray(truth, float)
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        return 1.0
    d = np.abs(np.subtract.outer(a, b))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

KINDS = ("size", "power", "estimation", "multi")


@dataclass(frozen=True)
class WbsSettings:
    V: int = 40
    v0: float | None = None  # default 30 / n
    v1: float | None = None  # default 2 v0


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    cells: tuple
    test: TestConfig = field(default_factory=TestConfig)
    reps: int = 100
    seed: int = 0
    wbs: WbsSettings = field(default_factory=WbsSettings)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.cells:
            raise ValueError("an experiment needs at least one cell")


def _known(cls, d: dict, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    bad = set(d) - names
    if bad:
        raise ValueError(f"unknown {where} keys: {sorted(bad)}")
    return d


def experiment_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    test = dict(d.pop("test", {}))
    for key in ("alpha_set", "taus"):
        if key in test:
            test[key] = tuple(test[key])
    cells = []
    for c in d.pop("cells", []):
        c = dict(c)
        if "error" in c:
            c["error"] = parse_dist(c["error"])
        if "changepoints" in c:
            c["changepoints"] = tuple(c["changepoints"])
        if "betas" in c and c["betas"] is not None:
            c["betas"] = tuple(tuple(r) for r in c["betas"])
        cells.append(ScenarioSpec(**_known(ScenarioSpec, c, "cell")))
    wbs = WbsSettings(**_known(WbsSettings, dict(d.pop("wbs", {})), "wbs"))
    _known(ExperimentConfig, d, "experiment")
    return ExperimentConfig(cells=tuple(cells), test=TestConfig(**_known(TestConfig, test, "test")),
                            wbs=wbs, **d)


def load_experiment(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return experiment_from_dict(tomllib.load(fh))


def _replicate(kind, cell, cfg, wbs, seed, ci, r, solver):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ci, r)))
    data = generate(cell, rng)
    tcfg = cfg.replace(seed=int(rng.integers(2 ** 31)))
    if kind == "multi":
        v0 = wbs.v0 if wbs.v0 is not None else 30 / cell.n
        ints = generate_intervals(tcfg, wbs.V, v0, rng, wbs.v1)
        rep = wbs_detect(data, tcfg, ints, solver=solver)
        return {"hausdorff": hausdorff(rep.changepoints, cell.changepoints),
                "n_found": len(rep.changepoints), "empty": not rep.changepoints}
    res = run_adaptive_test(data, tcfg, solver=solver)
    out = {"reject_ad": res.reject, "alpha_star": res.alpha_star}
    for ind in res.individual:
        out[f"reject_{ind.alpha:g}"] = ind.reject
    if kind == "estimation":
        t1 = cell.changepoints[0]
        out["err_ad"] = abs(res.t_hat_ad.t_hat - t1)
        for ind in res.individual:
            out[f"err_{ind.alpha:g}"] = abs(ind.t_hat.t_hat - t1)
    return out


def _summarise(kind, cell, ci, recs, errors, reps):
    row = {"cell": ci, "label": cell.label or f"cell{ci}", "n": cell.n, "p": cell.p,
           "error": cell.error.label, "c": cell.c, "reps": reps, "ok": len(recs),
           "errors": len(errors)}
    if not recs:
        return row
    keys = recs[0].keys()
    if kind == "multi":
        h = np.array([r["hausdorff"] for r in recs])
        row.update(hausdorff_median=float(np.median(h)), hausdorff_mean=float(h.mean()),
                   empty_rate=float(np.mean([r["empty"] for r in recs])),
                   mean_found=float(np.mean([r["n_found"] for r in recs])))
        return row
    for k in keys:
        if k.startswith("reject_"):
            row["rate_" + k[7:]] = float(np.mean([r[k] for r in recs]))
    if kind == "estimation":
        for k in keys:
            if k.startswith("err_"):
                v = np.array([r[k] for r in recs])
                q1, q2, q3 = np.percentile(v, [25, 50, 75])
                row["median_" + k] = float(q2)
                row["iqr_" + k] = float(q3 - q1)
    return row


def run_experiment(kind: str, cells: Sequence[ScenarioSpec], cfg: TestConfig, reps: int,
                   seed: int = 0, *, wbs: WbsSettings | None = None,
                   solver: SolverConfig | None = None, threads: int = 1) -> list[dict]:
    """One summary record per cell; replicate failures are counted, never fatal."""
    exp = ExperimentConfig(kind, tuple(cells), cfg, reps, seed, wbs or WbsSettings())
    rows = []
    for ci, cell in enumerate(exp.cells):
        def one(r, ci=ci, cell=cell):
            try:
                return _replicate(kind, cell, cfg, exp.wbs, seed, ci, r, solver), None
            except Exception as exc:  # noqa: BLE001 - recorded and reported
                return None, f"{type(exc).__name__}: {exc}"

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                out = list(pool.map(one, range(reps)))
        else:
            out = [one(r) for r in range(reps)]
        recs = [o for o, e in out if e is None]
        errors = [e for _, e in out if e is not None]
        row = _summarise(kind, cell, ci, recs, errors, reps)
        if errors:
            row["first_error"] = errors[0]
        rows.append(row)
    return rows


def run_config(exp: ExperimentConfig, threads: int = 1) -> list[dict]:
    return run_experiment(exp.kind, exp.cells, exp.test, exp.reps, exp.seed, wbs=exp.wbs,
                          threads=threads)


def write_csv(rows: list[dict], path_or_file) -> None:
    cols = list(dict.fromkeys(k for r in rows for k in r))
    own = isinstance(path_or_file, (str, Path))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if own:
            fh.close()


def write_json(rows: list[dict], path: str | Path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps({"meta": meta or {}, "rows": rows}, indent=2) + "\n")


# desk-scale and full-scale cell presets ------------------------------------------------


def preset_cells(kind: str, scale: str = "desk", errors=("normal", "t:4", "laplace"),
                 c: float | None = None) -> list[ScenarioSpec]:
    """Ready-made cells; ``scale="full"`` uses the original, much larger sizes."""
    if scale not in ("desk", "full"):
        raise ValueError("scale must be 'desk' or 'full'")
    if kind == "multi":
        n, p = (400, 50) if scale == "desk" else (1000, 100)
        return [ScenarioSpec(n=n, p=p, error=parse_dist(e), changepoints=(0.25, 0.5, 0.75),
                             c=1.0 if c is None else c, label=f"multi-{e}") for e in errors]
    n, p = (200, 50) if scale == "desk" else (200, 400)
    tps = () if kind == "size" else (0.5,)
    jump = 0.0 if kind == "size" else (1.0 if c is None else c)
    return [ScenarioSpec(n=n, p=p, error=parse_dist(e), changepoints=tps, c=jump,
                         label=f"{kind}-{e}") for e in errors]


def cell_dict(cell: ScenarioSpec) -> dict:
    d = asdict(cell)
    d["error"] = asdict(cell.error)
    return d


def strong_jump(spec: ScenarioSpec, factor: float = 5.0, s0: int = 5,
                alphas=(0.0, 0.1, 0.5, 0.9, 1.0), taus=(0.5,)) -> float:
    """Jump ``c`` with ``max_alpha ||D||_(s0,2) = factor * sqrt(log(p n) / n)``.

    ``D`` is linear in ``c``, so one evaluation at ``c = 1`` suffices.  It is taken at a
    single change in the middle, whatever ``spec.changepoints`` holds.  Weights whose
    SNR is undefined for the error law are skipped.
    """
    from .core import s0_norm

    unit = spec.with_(c=1.0, changepoints=(0.5,))
    best = 0.0
    for a in alphas:
        try:
            D = signal_vector(unit, a, taus)
        except ValueError:
            continue
        best = max(best, s0_norm(D, min(s0, spec.p)))
    if best == 0:
        raise ValueError("no weight has a finite signal for this scenario")
    return factor * math.sqrt(math.log(spec.p * spec.n) / spec.n) / best
