"""Power against a single change at t1 = 0.5, over a grid of jump multipliers.

The jump is ``factor * strong_jump(cell)``; ``factor = 1`` is the strong-signal level.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from common import parse_into, save

from tailcp.core import TestConfig
from tailcp.simlab import preset_cells, run_experiment, strong_jump


@dataclass(frozen=True)
class PowerConfig:
    errors: tuple = ("normal", "laplace", "t:2")
    factors: tuple = (0.25, 0.5, 0.75, 1.0)
    scale: str = "desk"
    reps: int = 100
    B: int = 200
    seed: int = 200
    threads: int = 1


def main() -> None:
    cfg = parse_into(PowerConfig(), __doc__)
    t0 = time.time()
    cells = []
    for cell in preset_cells("power", cfg.scale, cfg.errors):
        c = strong_jump(cell)
        cells += [cell.with_(c=f * c, label=f"{cell.label}-x{f:g}") for f in cfg.factors]
    rows = run_experiment("power", cells, TestConfig(B=cfg.B), cfg.reps, cfg.seed,
                          threads=cfg.threads)
    save(f"power_{cfg.scale}", rows, cfg, t0)


if __name__ == "__main__":
    main()
