"""Shared plumbing for the experiment scripts: dataclass config <-> argparse, output."""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

from tailcp import __version__
from tailcp.simlab import write_csv, write_json

RESULTS = Path(__file__).resolve().parents[1] / "results"


def parse_into(cfg, description: str):
    """Expose every field of the dataclass ``cfg`` as a ``--flag``; return the updated copy."""
    ap = argparse.ArgumentParser(description=description)
    for f in fields(cfg):
        default = getattr(cfg, f.name)
        flag = "--" + f.name.replace("_", "-")
        if isinstance(default, bool):
            ap.add_argument(flag, action=argparse.BooleanOptionalAction, default=default)
        elif isinstance(default, tuple):
            ap.add_argument(flag, nargs="+", type=type(default[0]) if default else str,
                            default=default)
        else:
            ap.add_argument(flag, type=type(default), default=default)
    args = vars(ap.parse_args())
    return replace(cfg, **{k: tuple(v) if isinstance(v, list) else v for k, v in args.items()})


def save(name: str, rows: list[dict], cfg, started: float) -> None:
    """Print a CSV table and write ``results/<name>.csv`` plus a JSON copy with the config."""
    write_csv(rows, sys.stdout)
    RESULTS.mkdir(exist_ok=True)
    write_csv(rows, RESULTS / f"{name}.csv")
    meta = {"version": __version__, "config": asdict(cfg), "seconds": round(time.time() - started, 1)}
    write_json(rows, RESULTS / f"{name}.json", meta)
    print(f"# wrote {RESULTS / name}.csv ({meta['seconds']} s)", file=sys.stderr)

