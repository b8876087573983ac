"""Analytic SNR(alpha, tau) curves for a few error laws, with the maximising weight."""

from __future__ import annotations

import time
from dataclasses import dataclass

from common import parse_into, save

from tailcp.simlab import snr_curve


@dataclass(frozen=True)
class SnrConfig:
    laws: tuple = ("normal:0.7071067811865476", "normal", "laplace", "t:3", "t:5", "cauchy")
    taus: tuple = (0.5,)


def main() -> None:
    cfg = parse_into(SnrConfig(), __doc__)
    t0 = time.time()
    rows = []
    for law in cfg.laws:
        curve = snr_curve(law, taus=cfg.taus)
        for r in curve.rows():
            rows.append({"law": law, **r, "argmax": curve.argmax})
    save("snr", rows, cfg, t0)


if __name__ == "__main__":
    main()
