"""Command-line entry point: ``tailcp {test,detect,simulate,snr}``.

Exit codes: 0 success, 1 bad input or usage, 2 rejection (with ``--exit-on-reject``).
"""

from __future__ import annotations

import argparse
import csv
from dataclasses import asdict, dataclass, field
import io
import json
import logging
import math
from pathlib import Path
import sys
import time
import warnings

import numpy as np

from . import __version__
from .bootstrap import AdaptiveTestResult, IndividualTestResult, run_adaptive_test
from .core import DEFAULT_ALPHAS, Dataset, TestConfig
from .simlab import (ErrorDist, load_experiment, run_config, snr_curve, write_csv, write_json)
from .wbs import MultiCpReport, generate_intervals, split_resolvable, wbs_detect

SCHEMA_VERSION = 1
log = logging.getLogger("tailcp")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# input
# ---------------------------------------------------------------------------


def read_csv(path: str | Path, header: bool = False) -> Dataset:
    """Column 1 is the response, the rest are covariates, rows in time order."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    rows = list(csv.reader(io.StringIO(text)))
    start = 1 if header else 0
    body = [(i + 1, r) for i, r in enumerate(rows) if i >= start and any(c.strip() for c in r)]
    if not body:
        raise InputError(f"{path}: no data rows")
    width = len(body[0][1])
    if width < 2:
        raise InputError(f"{path}: need a response column and at least one covariate")
    vals = np.empty((len(body), width))
    for r, (lineno, row) in enumerate(body):
        if len(row) != width:
            raise InputError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
        for c, cell in enumerate(row):
            try:
                vals[r, c] = float(cell)
            except ValueError:
                raise InputError(f"{path}: row {lineno} column {c + 1}: cannot parse {cell!r} "
                                 "as a number") from None
            if not math.isfinite(vals[r, c]):
                raise InputError(f"{path}: row {lineno} column {c + 1}: non-finite value")
    if len(body) < 10:
        raise InputError(f"{path}: only {len(body)} rows; need at least 10 observations")
    return Dataset(vals[:, 1:], vals[:, 0])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class TestReport:
    __test__ = False

    metadata: dict
    adaptive: dict
    individual: list
    timing: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    command: str = "test"

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "command": self.command,
                "metadata": self.metadata, "adaptive": self.adaptive,
                "individual": self.individual, "timing": self.timing}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TestReport":
        d = json.loads(text)
        return cls(metadata=d["metadata"], adaptive=d["adaptive"], individual=d["individual"],
                   timing=d.get("timing", {}), schema_version=d["schema_version"],
                   command=d.get("command", "test"))


def _individual_dict(r: IndividualTestResult) -> dict:
    return {"alpha": r.alpha, "T": r.T, "p_hat": r.p_hat, "reject": bool(r.reject),
            "t_hat": r.t_hat.t_hat, "k_hat": r.t_hat.k_hat, "lambda": r.lam,
            "sigma2": r.sigma2.sigma2, "sigma2_minus": r.sigma2.sigma2_minus,
            "sigma2_plus": r.sigma2.sigma2_plus, "n_minus": r.sigma2.n_minus,
            "n_plus": r.sigma2.n_plus, "B": r.B, "warnings": list(r.warnings)}


def _adaptive_dict(a: AdaptiveTestResult) -> dict:
    return {"T_ad": a.T_ad, "p_ad": a.p_ad, "reject": bool(a.reject),
            "alpha_star": a.alpha_star, "t_hat": a.t_hat_ad.t_hat, "k_hat": a.t_hat_ad.k_hat}


def _config_dict(cfg: TestConfig) -> dict:
    d = asdict(cfg)
    d["alpha_set"] = list(cfg.alpha_set)
    d["taus"] = list(cfg.taus)
    return d


def _detect_dict(rep: MultiCpReport, n: int) -> dict:
    return {"changepoints": list(rep.changepoints),
            "indices": [int(round(t * n)) for t in rep.changepoints],
            "threshold": rep.threshold,
            "per_node": [{"S": t.S, "E": t.E, "depth": t.depth,
                          "p_bar": None if math.isnan(t.p_bar) else t.p_bar,
                          "nu_star": t.nu_star, "decision": t.decision, "location": t.location}
                         for t in rep.per_node]}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1, keeping 2 for rejections
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# flag name -> (type, default for test, default for detect)
_COMMON = {
    "alpha_set": (_floats, DEFAULT_ALPHAS, DEFAULT_ALPHAS),
    "s0": (int, 5, 5),
    "q0": (float, 0.1, 0.1),
    "gamma": (float, 0.05, 0.05),
    "B": (int, 200, 1000),
    "tau": (_floats, (0.5,), (0.5,)),
    "h": (float, 0.9, 0.9),
    "lambda_scale": (float, TestConfig.lambda_scale, TestConfig.lambda_scale),
    "lambda_rule": (str, TestConfig.lambda_rule, TestConfig.lambda_rule),
    "seed": (int, 0, 0),
    "threads": (int, 1, 1),
    "standardize": (bool, False, True),
    "header": (bool, False, False),
    "exit_on_reject": (bool, False, False),
}
_DETECT = {"V": (int, 40), "v0": (float, None), "v1": (float, None)}


def _add_common(p: argparse.ArgumentParser, detect: bool) -> None:
    p.add_argument("input", help="CSV file: column 1 = y, remaining columns = X")
    p.add_argument("--config", help="TOML file with default flag values")
    p.add_argument("--output", "-o", help="write the JSON report here instead of stdout")
    p.add_argument("--alpha-set", type=_floats, help="loss weights (default 0,0.1,0.5,0.9,1)")
    p.add_argument("--s0", type=int, help="entries kept by the (s0,2)-norm (default 5)")
    p.add_argument("--q0", type=float, help="boundary trimming fraction (default 0.1)")
    p.add_argument("--gamma", type=float, help="significance level (default 0.05)")
    p.add_argument("--B", type=int, help=f"bootstrap replicates (default {1000 if detect else 200})")
    p.add_argument("--tau", type=_floats, help="quantile levels (default 0.5)")
    p.add_argument("--h", type=float, help="variance segment fraction (default 0.9)")
    p.add_argument("--lambda-scale", type=float,
                   help=f"penalty constant C_lambda (default {TestConfig.lambda_scale})")
    p.add_argument("--lambda-rule", choices=["score", "plain"],
                   help="scale the penalty by each weight's score sd (default score)")
    p.add_argument("--seed", type=int, help="master RNG seed (default 0)")
    p.add_argument("--threads", type=int, help="worker threads (default 1)")
    p.add_argument("--header", action=argparse.BooleanOptionalAction, default=None,
                   help="first CSV row is a header")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None,
                   help=f"centre and scale columns (default {'on' if detect else 'off'})")
    p.add_argument("--exit-on-reject", action=argparse.BooleanOptionalAction, default=None,
                   help="exit with status 2 when H0 is rejected / change points are found")
    if detect:
        p.add_argument("--V", type=int, help="number of random intervals (default 40)")
        p.add_argument("--v0", type=float, help="minimum interval length (default 30/n)")
        p.add_argument("--v1", type=float, help="minimum recursion span (default 2 v0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tailcp", description="Tail-adaptive change-point testing and detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_common(sub.add_parser("test", help="single change-point test"), detect=False)
    _add_common(sub.add_parser("detect", help="multiple change-point detection"), detect=True)
    sim = sub.add_parser("simulate", help="run a Monte-Carlo experiment from a TOML file")
    sim.add_argument("config")
    sim.add_argument("--output", "-o", help="path prefix for <prefix>.csv and <prefix>.json")
    sim.add_argument("--reps", type=int, help="override the replicate count")
    sim.add_argument("--threads", type=int, default=1)
    s = sub.add_parser("snr", help="signal-to-noise curve over alpha as CSV")
    s.add_argument("--dist", default="normal", choices=["normal", "t", "laplace", "cauchy"])
    s.add_argument("--sd", type=float, default=1.0, help="sd (normal) or scale parameter")
    s.add_argument("--df", type=float, default=3.0, help="degrees of freedom for t")
    s.add_argument("--tau", type=_floats, default=(0.5,))
    s.add_argument("--alphas", type=_floats, default=None, help="default 0,0.1,...,1")
    s.add_argument("--output", "-o")
    return parser


def _load_toml(path: str) -> dict:
    from .simlab import tomllib

    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"config {path}: {exc}") from None


def resolve_options(args: argparse.Namespace) -> dict:
    """Built-in defaults, overridden by the config file, overridden by explicit flags."""
    detect = args.command == "detect"
    table = dict(_COMMON, **({k: (t, d, d) for k, (t, d) in _DETECT.items()} if detect else {}))
    opts = {k: (v[2] if detect else v[1]) for k, v in table.items()}
    if args.config:
        conf = {k.replace("-", "_"): v for k, v in _load_toml(args.config).items()}
        unknown = set(conf) - set(table)
        if unknown:
            raise UsageError(f"config {args.config}: unknown keys {sorted(unknown)}")
        for k, v in conf.items():
            typ = table[k][0]
            if typ is _floats:
                v = tuple(float(x) for x in (v if isinstance(v, (list, tuple)) else _floats(v)))
            elif typ is bool:
                v = bool(v)
            opts[k] = typ(v) if typ in (int, float, str) else v
    for k in table:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    if opts["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    if detect:
        if opts["V"] < 1:
            raise UsageError("--V must be >= 1")
        for k in ("v0", "v1"):
            if opts[k] is not None and not opts[k] > 0:
                raise UsageError(f"--{k} must be positive")
    return opts


def _test_config(opts: dict) -> TestConfig:
    try:
        return TestConfig(s0=opts["s0"], q0=opts["q0"], gamma=opts["gamma"], B=opts["B"],
                          h=opts["h"], alpha_set=opts["alpha_set"],
                          lambda_scale=opts["lambda_scale"], lambda_rule=opts["lambda_rule"],
                          seed=opts["seed"], taus=opts["tau"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _metadata(args, opts, cfg, data) -> dict:
    echo = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(opts.items())
            if k != "threads"}
    return {"version": __version__, "input": str(args.input), "n": data.n, "p": data.p,
            "seed": cfg.seed, "options": echo, "config": _config_dict(cfg)}


def cmd_test(args) -> int:
    opts = resolve_options(args)
    cfg = _test_config(opts)
    t0 = time.perf_counter()
    data = read_csv(args.input, opts["header"])
    if opts["standardize"]:
        data = data.standardized()
    t1 = time.perf_counter()
    res = run_adaptive_test(data, cfg, threads=opts["threads"])
    t2 = time.perf_counter()
    report = TestReport(metadata=_metadata(args, opts, cfg, data), adaptive=_adaptive_dict(res),
                        individual=[_individual_dict(r) for r in res.individual],
                        timing={"threads": opts["threads"], "read_s": t1 - t0, "test_s": t2 - t1})
    _emit(report.to_json(), args.output)
    return 2 if (res.reject and opts["exit_on_reject"]) else 0


def cmd_detect(args) -> int:
    opts = resolve_options(args)
    cfg = _test_config(opts)
    t0 = time.perf_counter()
    data = read_csv(args.input, opts["header"])
    if opts["standardize"]:
        data = data.standardized()
    v0 = opts["v0"] if opts["v0"] is not None else 30 / data.n
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    try:
        intervals = generate_intervals(cfg, opts["V"], v0, rng, opts["v1"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t1 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # surfaced in the report instead
        rep = wbs_detect(data, cfg, intervals, threads=opts["threads"])
    t2 = time.perf_counter()
    meta = _metadata(args, opts, cfg, data)
    meta["wbs"] = {"V": intervals.V, "v0": intervals.v0, "v1": intervals.v1}
    failed = sum(r.error is not None for r in rep.intervals)
    if not split_resolvable(cfg, intervals.V):
        meta["warnings"] = ["B + 1 <= V / gamma: the bootstrap grid cannot resolve gamma / V, so "
                            "the Bonferroni bound does not hold; raise --B or lower --V"]
    out = {"schema_version": SCHEMA_VERSION, "command": "detect", "metadata": meta,
           "detection": _detect_dict(rep, data.n), "failed_intervals": failed,
           "timing": {"threads": opts["threads"], "read_s": t1 - t0, "detect_s": t2 - t1}}
    _emit(json.dumps(out, indent=2) + "\n", args.output)
    return 2 if (rep.changepoints and opts["exit_on_reject"]) else 0


def cmd_simulate(args) -> int:
    try:
        exp = load_experiment(args.config)
    except OSError as exc:
        raise InputError(f"cannot read config {args.config}: {exc.strerror or exc}") from None
    except ValueError as exc:  # includes TOML decode errors
        raise InputError(f"config {args.config}: {exc}") from None
    if args.reps is not None:
        from dataclasses import replace

        exp = replace(exp, reps=args.reps)
    rows = run_config(exp, threads=args.threads)
    if args.output:
        write_csv(rows, f"{args.output}.csv")
        write_json(rows, f"{args.output}.json",
                   {"version": __version__, "config": str(args.config), "kind": exp.kind,
                    "reps": exp.reps, "seed": exp.seed})
    else:
        write_csv(rows, sys.stdout)
    return 0


def cmd_snr(args) -> int:
    name = {"t": "student_t"}.get(args.dist, args.dist)
    dist = ErrorDist(name, args.sd, args.df if name == "student_t" else math.inf)
    curve = snr_curve(dist, args.alphas, args.tau)
    buf = io.StringIO()
    write_csv(curve.rows(), buf)
    _emit(buf.getvalue(), args.output)
    return 0


COMMANDS = {"test": cmd_test, "detect": cmd_detect, "simulate": cmd_simulate, "snr": cmd_snr}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tailcp: error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"tailcp: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"tailcp: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
