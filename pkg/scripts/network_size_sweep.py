"""Aggregate L2 / Linf against network size for the built-in topologies.

    python3 scripts/network_size_sweep.py --out out/size_sweep --workers 1
"""

import argparse

import numpy as np

from netmrac.cli import sweep
from netmrac.metrics import aggregate_table

GRID = [1, 3, 5, 7, 9, 11, 13]


def trend(vals):
    d = np.diff(vals)
    if np.all(d >= 0):
        return "non-decreasing"
    if np.all(d <= 0):
        return "non-increasing"
    return "mixed"


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="out/size_sweep")
    ap.add_argument("--tuner", default="gradient")
    ap.add_argument("--T", type=float, default=200.0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--topologies", default="star_like,cyclic_like,path")
    args = ap.parse_args()

    tops = args.topologies.split(",")
    records, _ = sweep({"sim.T": args.T}, tops, GRID, [args.tuner], args.out, args.workers,
                       write_trace=False)
    for value in ("l2", "linf"):
        print(f"\n{value}")
        print(aggregate_table(records, value, by="m").to_csv(), end="")
    print("\ntrend of l2 in m")
    for top in tops:
        vals = [r.l2 for r in records if r.topology == top]
        print(f"  {top:12s} {trend(vals)}")
    print(f"\nfull tables and per-cell manifests in {args.out}")


if __name__ == "__main__":
    main()
