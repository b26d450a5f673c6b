"""Winding rate about the origin per 1e6 steps, over seeds, for the rotating and the null well.

Shows why the rate is estimated from long runs: a single 1e6-step window of the
lam = 0 path already winds by several turns through angular diffusion near the saddle.
"""
import argparse

import numpy as np

from sgdlab.sde import SdeConfig, double_well_sde


def rate(lam, steps, dt, seed):
    cfg = SdeConfig(beta_inv=1.0, dt=dt, steps=steps, noise_mode="double_well",
                    record_every=steps, seed=seed)
    traj = double_well_sde(lam, cfg, (1.0, 0.0))
    return traj.meta["total_angle"] / (2 * np.pi) / steps * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--lengths", type=int, nargs="+", default=[1_000_000, 10_000_000, 100_000_000])
    args = ap.parse_args()
    for steps in args.lengths:
        for lam in (0.0, 1.5):
            r = np.array([rate(lam, steps, args.dt, s) for s in range(args.seeds)])
            print(f"steps={steps:>11,d} lam={lam:3.1f}: mean {r.mean():7.3f}  std {r.std():6.3f}  "
                  f"min {r.min():7.3f}  max {r.max():7.3f}")


if __name__ == "__main__":
    main()
