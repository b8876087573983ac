"""Empirical size of the individual and adaptive tests under H0."""

from __future__ import annotations

import time
from dataclasses import dataclass

from common import parse_into, save

from tailcp.core import TestConfig
from tailcp.simlab import preset_cells, run_experiment


@dataclass(frozen=True)
class SizeConfig:
    errors: tuple = ("normal", "t:4", "laplace")
    scale: str = "desk"  # "full" uses (n, p) = (200, 400)
    reps: int = 200
    B: int = 200
    gamma: float = 0.05
    seed: int = 101
    threads: int = 1


def main() -> None:
    cfg = parse_into(SizeConfig(), __doc__)
    t0 = time.time()
    rows = run_experiment("size", preset_cells("size", cfg.scale, cfg.errors),
                          TestConfig(B=cfg.B, gamma=cfg.gamma), cfg.reps, cfg.seed,
                          threads=cfg.threads)
    save(f"size_{cfg.scale}", rows, cfg, t0)


if __name__ == "__main__":
    main()
