"""Compare the boundary-problem edges with the dynamic-programming oracle.

Usage: python3 scripts/oracle_check.py [--grids 400,800] [--lambdas 0.001,0.01,0.05]
"""

import argparse

from shadow_merton.evaluation import dp_oracle, mid_fraction_bounds
from shadow_merton.fbvp import shoot
from shadow_merton.market import MarketParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", default="400,800")
    ap.add_argument("--lambdas", default="0.001,0.01,0.05")
    args = ap.parse_args()

    base = MarketParams(0.08, 0.3, 0.1, 0.01, 0.01)
    for lam in (float(x) for x in args.lambdas.split(",")):
        p = base.with_costs(lam, lam)
        lo, hi = mid_fraction_bounds(shoot(p))
        print(f"lambda {lam}: boundary problem (mid-valued) [{lo:.5f}, {hi:.5f}]")
        for n in (int(x) for x in args.grids.split(",")):
            r = dp_oracle(p, n)
            print(f"  grid {n}: oracle [{r.pi_lo:.5f}, {r.pi_hi:.5f}]  "
                  f"errors {abs(r.pi_lo - lo) / r.cell:.2f} / {abs(r.pi_hi - hi) / r.cell:.2f} cells")


if __name__ == "__main__":
    main()
