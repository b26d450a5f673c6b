"""Monte-Carlo mini-batch variance against both closed forms on a quadratic ensemble."""
import argparse

import numpy as np

from sgdlab.diffusion import (WITH_REPLACEMENT, WITHOUT_REPLACEMENT, diffusion_matrix,
                              minibatch_variance_mc, minibatch_variance_prefactor)
from sgdlab.models import QuadraticEnsemble


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=8)
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    q = QuadraticEnsemble(rng.standard_normal((args.N, args.d)))
    x = rng.standard_normal(args.d)
    G = q.sample_grads(x, np.arange(args.N))
    for scheme in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT):
        D = diffusion_matrix(G, scheme).matrix
        for b in sorted({1, 2, args.N // 2, args.N}):
            target = minibatch_variance_prefactor(scheme, b, args.N) * D
            mc = minibatch_variance_mc(q, x, scheme, b, args.trials, seed=args.seed)
            denom = np.linalg.norm(target)
            err = np.linalg.norm(mc - target) / denom if denom > 0 else np.linalg.norm(mc)
            print(f"{scheme:<20} b={b:<3d} relative Frobenius error {err:.4f}")


if __name__ == "__main__":
    main()
