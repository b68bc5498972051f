"""Tabulate the no-trade region over a grid of symmetric cost levels.

Usage: python3 scripts/sweep_lambdas.py [--out sweep.csv]
"""

import argparse

import numpy as np

from shadow_merton.evaluation import sweep_costs, width_nondecreasing, write_sweep_csv
from shadow_merton.market import MarketParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mu", type=float, default=0.08)
    ap.add_argument("--sigma", type=float, default=0.3)
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    base = MarketParams(args.mu, args.sigma, args.delta, 0.0, 0.0)
    levels = np.geomspace(1e-6, 0.1, 21)
    rows = sweep_costs(base, levels)
    write_sweep_csv(rows, args.out)
    for r in rows:
        if r["error"]:
            print(f"{r['lambda_buy']:.2e}  error: {r['error']}")
        else:
            print(f"{r['lambda_buy']:.2e}  [{r['pi_lo']:.5f}, {r['pi_hi']:.5f}]  "
                  f"beta width {r['beta_hi'] - r['beta_lo']:.5f}")
    print("width nondecreasing:", width_nondecreasing(rows))


if __name__ == "__main__":
    main()
