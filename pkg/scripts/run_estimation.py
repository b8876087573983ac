"""Change-point location error |t_hat - t1| for the individual and adaptive estimators."""

from __future__ import annotations

import time
from dataclasses import dataclass

from common import parse_into, save

from tailcp.core import TestConfig
from tailcp.simlab import ScenarioSpec, parse_dist, run_experiment, strong_jump


@dataclass(frozen=True)
class EstimationConfig:
    sizes: tuple = (200, 400)
    p: int = 50
    errors: tuple = ("normal", "laplace")
    t1: float = 0.5
    reps: int = 100
    B: int = 200
    seed: int = 300
    threads: int = 1


def main() -> None:
    cfg = parse_into(EstimationConfig(), __doc__)
    t0 = time.time()
    cells = []
    for e in cfg.errors:
        for n in cfg.sizes:
            cell = ScenarioSpec(n=n, p=cfg.p, error=parse_dist(e), changepoints=(cfg.t1,),
                                label=f"est-{e}-n{n}")
            cells.append(cell.with_(c=strong_jump(cell)))
    rows = run_experiment("estimation", cells, TestConfig(B=cfg.B), cfg.reps, cfg.seed,
                          threads=cfg.threads)
    save("estimation", rows, cfg, t0)


if __name__ == "__main__":
    main()
