"""Check that the adaptive energy function never increases along a run.

The normalization mu is set to the larger of the structural bound and the
bound certified by the passivity certificate.

    python3 scripts/energy_monitor.py --kind ht1 --gamma 1e-5 --beta 0.1 --amplitude 1 --T 20
"""

import argparse

from netmrac.sim import InitialConditions, ReferenceSpec, energy_check, family_scenario, mu_bounds
from netmrac.tuners import TunerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--topology", default="star_like")
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--kind", default="gradient", choices=["gradient", "ht1", "ht2"])
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--beta", type=float, default=1.0)
    ap.add_argument("--amplitude", type=float, default=10.0)
    ap.add_argument("--period", type=float, default=40.0)
    ap.add_argument("--T", type=float, default=200.0)
    ap.add_argument("--noise", type=float, default=0.0, help="std of the initial parameter offset from ideal")
    args = ap.parse_args()

    init = InitialConditions(theta="ideal", theta_noise=args.noise) if args.noise else InitialConditions()
    tuner = TunerConfig(args.kind, args.gamma, args.beta, q_scaling="none")
    base = family_scenario(args.topology, args.m, tuner, T=args.T, stride=1, initial=init,
                           reference=ReferenceSpec("square", args.amplitude, args.period))
    structural, certified, cert = mu_bounds(base)
    mu = max(structural, certified)
    print(f"mu bounds: structural {structural:.4g}, certified {certified:.4g}; using {mu:.4g}")
    chk = energy_check(base.replace(tuner=TunerConfig(args.kind, args.gamma, args.beta, mu, q_scaling="none")))
    rep = chk.report
    print(f"V(0) {rep.V[0]:.4g}  V(T) {rep.V[-1]:.4g}  max V {rep.max_V:.4g}")
    print(f"largest step increase {rep.max_increase:.3g} (relative {rep.relative_increase:.3g})")
    print("non-increasing" if rep.non_increasing else "INCREASES beyond tolerance")


if __name__ == "__main__":
    main()
