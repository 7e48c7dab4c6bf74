"""Iterations to tolerance on block-orthogonal systems: uniform i.i.d. versus
cycling over one representative per block."""
import argparse

import numpy as np

from adaptsolve import GeneratorSpec, SolveConfig, generate_system, parse_strategy, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=25)
    ap.add_argument("--blocks", type=int, default=5)
    ap.add_argument("--seeds", type=int, default=200)
    ap.add_argument("--tol", type=float, default=1e-8)
    args = ap.parse_args()
    specs = ["iid", "cyclic:order=distinct", "cyclic"]
    its = {s: [] for s in specs}
    for seed in range(args.seeds):
        system, _ = generate_system(GeneratorSpec("block-orthogonal", args.n, args.n, num_blocks=args.blocks, seed=seed))
        for s in specs:
            tr = solve(system, "row", parse_strategy(s), SolveConfig(tol=args.tol, seed=seed))
            its[s].append(tr.iterations)
    for s in specs:
        v = np.asarray(its[s])
        print(f"{s:24s} mean {v.mean():7.2f}  median {np.median(v):5.1f}  max {v.max()}")
    print(f"iid / distinct ratio: {np.mean(its['iid']) / np.mean(its['cyclic:order=distinct']):.3f}")


if __name__ == "__main__":
    main()
