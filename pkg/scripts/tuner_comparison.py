"""Compare the gradient and the two high-order tuners on one network.

    python3 scripts/tuner_comparison.py                  # random preset, no disturbance
    python3 scripts/tuner_comparison.py --topology star_like --m 3 --nu-u 5 --nu-y 0.5
"""

import argparse

from netmrac.cli import sweep
from netmrac.metrics import aggregate_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="out/tuners")
    ap.add_argument("--topology", default="random")
    ap.add_argument("--m", type=int, default=9)
    ap.add_argument("--T", type=float, default=200.0)
    ap.add_argument("--nu-u", type=float, default=0.0, help="constant input disturbance")
    ap.add_argument("--nu-y", type=float, default=0.0, help="constant output disturbance")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = {"sim.T": args.T, "disturbance.nu_u": args.nu_u, "disturbance.nu_y": args.nu_y}
    records, mans = sweep(cfg, [args.topology], [args.m], ["gradient", "ht1", "ht2"], args.out,
                          args.workers, write_trace=True)
    for value in ("l2", "linf"):
        print(f"\n{value}")
        print(aggregate_table(records, value, by="tuner").to_csv(), end="")
    print("\nmean |e| over the last 40 s")
    for man in mans:
        mt = man.get("metrics", {})
        print(f"  {man['label']:24s} {mt.get('final_window_mean', float('nan')):.4g}  ({man['status']})")
    print(f"\ntraces in {args.out}/cells")


if __name__ == "__main__":
    main()
