"""Regenerate the CSV fixtures in tests/fixtures (column 1 = y, then X).

Each CSV has a sidecar ``<name>.json`` holding the generating scenario and truth.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from tailcp.simlab import ScenarioSpec, cell_dict, generate, strong_jump

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def fixtures() -> dict[str, tuple[ScenarioSpec, int]]:
    single = ScenarioSpec(n=200, p=50, changepoints=(0.5,))
    multi = ScenarioSpec(n=400, p=50, changepoints=(0.25, 0.5, 0.75))
    return {
        "h0": (ScenarioSpec(n=200, p=50), 11),
        "single_change": (single.with_(c=strong_jump(single)), 12),
        "h0_long": (ScenarioSpec(n=400, p=50), 13),
        "three_changes": (multi.with_(c=3 * strong_jump(multi)), 14),  # clear-cut: 3x strong
    }


def write(name: str, spec: ScenarioSpec, seed: int, out: Path) -> None:
    data = generate(spec, np.random.default_rng(seed))
    table = np.column_stack([data.y, data.X])
    np.savetxt(out / f"{name}.csv", table, delimiter=",", fmt="%.10g")
    meta = {"seed": seed, "truth": list(spec.changepoints), "scenario": cell_dict(spec)}
    (out / f"{name}.json").write_text(json.dumps(meta, indent=2) + "\n")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, (spec, seed) in fixtures().items():
        write(name, spec, seed, args.out)
        print(f"wrote {args.out / name}.csv")


if __name__ == "__main__":
    main()
