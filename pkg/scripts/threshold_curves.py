#!/usr/bin/env python3
"""Break-even plot data: DATO/QMDA online cost ratio against n, and n* = L^3/m over (m, L).

Writes ratio_<label>.csv (n,ratio) for three configurations and
threshold_table.csv (m,L,n_star).  Pass --plot to also save a PNG
(needs matplotlib, which the package itself does not depend on).
"""

import argparse
import csv
from pathlib import Path

from transfer_da.complexity import (
    DatoConfig,
    QmdaConfig,
    breakeven,
    log_grid,
    ratio_crossing,
    ratio_curve,
    threshold_table,
)

CONFIGS = {
    "l63": (DatoConfig(n=3, m=2800, S=2000, p=2), QmdaConfig(N=64000, L=1000, d=3, r=5000, S_qmda=32)),
    "mid": (DatoConfig(n=3, m=10_000, S=3000, p=2), QmdaConfig(N=100_000, L=3000, d=3, r=8000, S_qmda=32)),
    "large": (DatoConfig(n=3, m=64_000, S=5000, p=2), QmdaConfig(N=200_000, L=10_000, d=3, r=20_000, S_qmda=64)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/threshold")
    ap.add_argument("--per-decade", type=int, default=8)
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    grid = log_grid(1.0, 1e12, args.per_decade)
    curves = {}
    for label, (dato, qmda) in CONFIGS.items():
        curve = ratio_curve(dato, qmda, grid)
        curves[label] = curve
        with open(out / f"ratio_{label}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "ratio"])
            w.writerows([f"{n:.17g}", f"{r:.17g}"] for n, r in curve)
        print(f"{label:>6}: crossing {ratio_crossing(curve):.4g}, n* = {breakeven(qmda.L, dato.m):.4g}")

    with open(out / "threshold_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "L", "n_star"])
        m_values = [1000, 2800, 10_000, 64_000]
        w.writerows([m, L, f"{v:.17g}"] for m, L, v in threshold_table(m_values, [100, 300, 1000, 3000, 10_000]))

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for label, curve in curves.items():
            ax.loglog(*zip(*curve), label=label)
        ax.axhline(1.0, color="k", lw=0.8, ls="--")
        ax.set_xlabel("state dimension n")
        ax.set_ylabel("T_DATO / T_QMDA per cycle")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "ratio_curves.png", dpi=120)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
