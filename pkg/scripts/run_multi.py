"""Multiple change points by tail-adaptive wild binary segmentation, plus the H0 empty rate."""

from __future__ import annotations

import time
from dataclasses import dataclass

from common import parse_into, save

from tailcp.core import TestConfig
from tailcp.simlab import WbsSettings, preset_cells, run_experiment, strong_jump


@dataclass(frozen=True)
class MultiConfig:
    errors: tuple = ("normal",)
    scale: str = "desk"
    jump_factor: float = 2.0  # times the single-change strong jump
    V: int = 40
    B: int = 1000
    reps: int = 20
    null_reps: int = 50
    seed: int = 801
    threads: int = 1


def main() -> None:
    cfg = parse_into(MultiConfig(), __doc__)
    t0 = time.time()
    alt = [c.with_(c=cfg.jump_factor * strong_jump(c)) for c in preset_cells("multi", cfg.scale, cfg.errors)]
    null = [c.with_(changepoints=(), c=0.0, label=c.label + "-h0") for c in alt]
    test, wbs = TestConfig(B=cfg.B), WbsSettings(V=cfg.V)
    rows = run_experiment("multi", alt, test, cfg.reps, cfg.seed, wbs=wbs, threads=cfg.threads)
    rows += run_experiment("multi", null, test, cfg.null_reps, cfg.seed + 1, wbs=wbs,
                           threads=cfg.threads)
    save(f"multi_{cfg.scale}", rows, cfg, t0)


if __name__ == "__main__":
    main()
