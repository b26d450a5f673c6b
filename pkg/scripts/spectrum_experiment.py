"""Diffusion-matrix spectra of a tiny MLP at 20%, 40% and 100% of an SGD run."""
import argparse

from sgdlab.datasets import make_tiny_mlp
from sgdlab.diffusion import diffusion_matrix, per_sample_gradients, spectrum_summary
from sgdlab.sde import sgd_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--eta", type=float, default=0.1)
    ap.add_argument("--b", type=int, default=32)
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    model = make_tiny_mlp(n=args.n, seed=args.seed)
    traj = sgd_run(model, model.init_weights(), args.eta, args.b, steps=args.steps, seed=args.seed)
    print(f"d = {model.dim}, N = {model.n_samples}")
    for frac in (0.2, 0.4, 1.0):
        k = int(round(frac * args.steps))
        est = diffusion_matrix(per_sample_gradients(model, traj.snapshots[k]))
        s = spectrum_summary(est, args.eta, args.b)
        print(f"{int(100 * frac):3d}%: rank {s['rank']:4d} ({s['rank_fraction']:.3f} of d), "
              f"eig mean {s['eig_mean']:.3e}, eig std {s['eig_std']:.3e}, score {s['score']:.4f}, "
              f"beta_inv {s['beta_inv']:.2e}")


if __name__ == "__main__":
    main()
