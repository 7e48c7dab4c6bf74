"""Streaming solver on a Gaussian source; prints error checkpoints for an
identity and a near-singular second moment."""
import argparse

import numpy as np

from adaptsolve.streaming import make_gaussian_stream, solve_streaming


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--budget", type=int, default=10**4)
    ap.add_argument("--small", type=float, default=1e-2, help="smallest eigenvalue of the second variant")
    args = ap.parse_args()
    xs = np.random.default_rng(args.seed).standard_normal(args.d)
    covs = {"identity": np.eye(args.d), "near-singular": np.diag(np.r_[args.small, np.ones(args.d - 1)])}
    marks = [0, 10, 100, 1000, args.budget]
    print("steps".ljust(16) + "".join(f"{m:>12d}" for m in marks))
    for name, C in covs.items():
        tr = solve_streaming(make_gaussian_stream(xs, C, seed=args.seed), budget=args.budget, tol=0.0)
        e = tr.norm_y
        print(name.ljust(16) + "".join(f"{e[min(m, len(e) - 1)]:12.3e}" for m in marks))


if __name__ == "__main__":
    main()
