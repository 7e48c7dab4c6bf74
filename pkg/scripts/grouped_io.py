"""Group swaps (a proxy for I/O between storage blocks) for grouped selection
versus plain i.i.d. and cyclic selection on a grouped system."""
import argparse

import numpy as np

from adaptsolve import GeneratorSpec, SolveConfig, generate_system, parse_strategy, solve
from adaptsolve.cli import group_swaps


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--d", type=int, default=20)
    ap.add_argument("--groups", type=int, default=10)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--rho", type=float, nargs="+", default=[0.1, 0.5, 0.9])
    args = ap.parse_args()
    system, _ = generate_system(GeneratorSpec("grouped", args.n, args.d, num_groups=args.groups, seed=0))
    specs = ["iid", "cyclic"] + [f"grouped:g={args.groups},rho={r},inner=cyclic" for r in args.rho]
    print(f"{'strategy':40s} {'iterations':>10s} {'group swaps':>12s}")
    for s in specs:
        its, swaps = [], []
        for rep in range(args.reps):
            tr = solve(system, "row", parse_strategy(s),
                       SolveConfig(max_iterations=10**6, seed=rep))
            its.append(tr.iterations)
            swaps.append(group_swaps(tr.selected, system.row_labels))
        print(f"{s:40s} {np.mean(its):10.1f} {np.mean(swaps):12.1f}")


if __name__ == "__main__":
    main()
