"""Batch experiment runner.

Subcommands::

    solve     run one strategy for several seeded repetitions
    compare   run several strategies on one shared system
    diagnose  solve with full traces and run the convergence diagnostics
    generate  write a generated system to Matrix Market + text files

Every run writes into ``--out``; identical configs give byte-identical files.
Errors are printed to stderr as one JSON object and the exit status is
nonzero.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields, replace
import json
import os
import statistics
import sys
import time

import numpy as np

from . import diagnostics as diag
from .engine import TRACE_LEVELS, Mode, SolveConfig, solve
from .errors import (
    AdaptSolveError,
    ConfigError,
    DiagnosticsViolation,
    FormatError,
    SpecError,
)
from .strategies import parse_strategy
from .system import GeneratorSpec, generate_system, load_system, write_system
from .mmio import write_vector

DIAGNOSTICS = ("stopping-times", "meany", "pi", "g", "nullspace-drift")


@dataclass
class ExperimentConfig:
    matrix: str | None = None
    rhs: str | None = None
    generate: str | None = None
    mode: str = "row"
    strategy: str = "iid"
    max_iterations: int = 10_000
    tol: float = 1e-8
    seed: int = 0
    seed_stride: int = 1
    reps: int = 1
    trace_level: str = "norms"
    diagnostics: list = field(default_factory=list)
    stopping_rule: str = "nu"
    pi_trials: int = 50
    pi_subspaces: int = 100
    g_trials: int = 20
    g_repeats: int = 10
    out: str = "out"
    workers: int = 1
    wall_time: bool = False

    def validate(self):
        if (self.matrix is None) == (self.generate is None):
            raise ConfigError("give either --matrix/--rhs or --generate")
        if self.matrix is not None:
            if self.rhs is None:
                raise ConfigError("--matrix needs --rhs")
            for p in (self.matrix, self.rhs):
                if not os.path.exists(p):
                    raise ConfigError(f"file not found: {p}")
        else:
            GeneratorSpec.parse(self.generate, seed=self.seed)
        Mode.parse(self.mode)
        parse_strategy(self.strategy)
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.trace_level not in TRACE_LEVELS:
            raise ConfigError(f"trace_level must be one of {TRACE_LEVELS}")
        unknown = set(self.diagnostics) - set(DIAGNOSTICS)
        if unknown:
            raise ConfigError(f"unknown diagnostics {sorted(unknown)}; choose from {DIAGNOSTICS}")
        if self.stopping_rule not in diag.STOPPING_RULES:
            raise ConfigError(f"stopping rule must be one of {diag.STOPPING_RULES}")
        self.solve_config()
        return self

    def solve_config(self, rep=0):
        return SolveConfig(
            max_iterations=self.max_iterations,
            tol=self.tol,
            seed=self.seed + self.seed_stride * rep,
            trace_level=self.trace_level,
        )

    def system_key(self):
        if self.generate is not None:
            return ("generate", GeneratorSpec.parse(self.generate, seed=self.seed))
        return ("files", os.path.abspath(self.matrix), os.path.abspath(self.rhs))

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
        names = {f.name for f in fields(cls)}
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)} in {path}")
        return cls(**data)


def build_system(config):
    if config.generate is not None:
        return generate_system(GeneratorSpec.parse(config.generate, seed=config.seed))[0]
    return load_system(config.matrix, config.rhs)


def group_swaps(selected, labels):
    """Number of label changes along the selected rows."""
    if labels is None or len(selected) < 2:
        return 0 if labels is not None else None
    seq = np.asarray(labels)[np.asarray(selected)]
    return int(np.count_nonzero(seq[1:] != seq[:-1]))


def read_trace(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize_trace(rows, stop, labels=None):
    """Per-repetition statistics computed from trace rows alone."""
    last = rows[-1]
    steps = [r for r in rows if r["step_kind"] in ("project", "noop")]
    selected = [int(r["selected"]) for r in steps]
    res = float(last["norm_residual"])
    out = {
        "iterations": int(last["k"]),
        "final_residual": res,
        "final_norm_y": float(last["norm_y"]),
        "converged": res <= stop,
        "noops": sum(r["step_kind"] == "noop" for r in steps),
    }
    if labels is not None and steps and min(selected) >= 0:
        out["group_swaps"] = group_swaps(selected, labels)
    return out


def _median(v):
    return float(statistics.median(v)) if v else None


def aggregate(per_rep):
    its = [r["iterations"] for r in per_rep]
    out = {
        "reps": len(per_rep),
        "converged": sum(r["converged"] for r in per_rep),
        "mean_iterations": float(np.mean(its)),
        "median_iterations": _median(its),
        "max_iterations": int(max(its)),
    }
    swaps = [r["group_swaps"] for r in per_rep if r.get("group_swaps") is not None]
    if swaps:
        out["mean_group_swaps"] = float(np.mean(swaps))
    if any("wall_time" in r for r in per_rep):
        out["mean_wall_time"] = float(np.mean([r.get("wall_time", 0.0) for r in per_rep]))
    return out


def _run_rep(args):
    config, system, rep, full = args
    strategy = parse_strategy(config.strategy)
    sc = config.solve_config(rep)
    if full:
        sc = replace(sc, trace_level="full-directions")
    t0 = time.perf_counter()
    trace = solve(system, config.mode, strategy, sc)
    return rep, trace, time.perf_counter() - t0


def _segment_stats(report):
    segs = [s for s in report.segments if not s.zero]
    ratios = [s.ratio_observed for s in segs]
    return {
        "rule": report.rule,
        "segments": len(segs),
        "complete": report.complete,
        "mean_nu": float(np.mean([s.nu for s in segs])) if segs else None,
        "max_ratio": float(max(ratios)) if ratios else None,
        "max_gamma": float(max(s.gamma for s in segs)) if segs else None,
        "contraction_failures": sum(not s.contraction_ok for s in segs),
        "violations": len(report.violations),
    }


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def _meany_on_segments(trace, system, report):
    images, y0 = diag._directions_and_y0(trace, system)
    ys = diag.error_path(images, y0)
    holds = total = 0
    for s in report.segments:
        if s.zero:
            continue
        try:
            rep = diag.meany_check(images[s.tau : s.tau + s.nu + 1], ys[s.tau])
        except AdaptSolveError:
            continue
        total += 1
        holds += rep.holds
    return {"checked": total, "holds": holds}


def run(config, diagnose=False):
    """Run ``config``; returns the summary dict and writes all outputs."""
    config.validate()
    system = build_system(config)
    os.makedirs(config.out, exist_ok=True)
    mode = Mode.parse(config.mode)
    full = diagnose and any(d in config.diagnostics for d in ("stopping-times", "meany", "nullspace-drift"))
    jobs = [(config, system, rep, full) for rep in range(config.reps)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_rep, jobs))
    else:
        results = [_run_rep(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    stop = config.tol * (1.0 + system.b_norm)
    labels = system.row_labels if mode is Mode.ROW else None
    per_rep, diag_reps = [], []
    for rep, trace, wall in results:
        path = os.path.join(config.out, f"trace_{rep}.csv")
        trace.to_csv(path)
        row = {"rep": rep, "seed": config.seed + config.seed_stride * rep, "status": trace.status}
        row.update(summarize_trace(read_trace(path), stop, labels))
        if config.wall_time:
            row["wall_time"] = wall
        if diagnose:
            d = {"rep": rep}
            if "stopping-times" in config.diagnostics or "meany" in config.diagnostics:
                report = diag.detect_stopping_times(trace, system, rule=config.stopping_rule)
                row["segments"] = _segment_stats(report)
                d["stopping_times"] = report.to_dict()
                if "meany" in config.diagnostics:
                    d["meany"] = _meany_on_segments(trace, system, report)
            if "nullspace-drift" in config.diagnostics and mode is Mode.ROW:
                d["nullspace_drift"] = diag.nullspace_drift(system, trace)
            diag_reps.append(d)
        per_rep.append(row)

    summary = {
        "config": asdict(config),
        "system": {"n": system.n, "d": system.d, "sparse": system.is_sparse},
        "aggregate": aggregate(per_rep),
        "reps": per_rep,
    }
    summary["config"].pop("workers")
    _dump(summary, os.path.join(config.out, "summary.json"))

    if diagnose:
        strategy = parse_strategy(config.strategy)
        out = {"reps": diag_reps}
        if "pi" in config.diagnostics:
            out["pi"] = diag.estimate_pi(
                strategy, system, mode, config.pi_trials, config.pi_subspaces, config.seed
            ).to_dict()
        if "g" in config.diagnostics:
            out["g_hat"] = diag.estimate_g(
                strategy, system, mode, config.g_trials, config.g_repeats, seed=config.seed
            )
        _dump(out, os.path.join(config.out, "diagnostics.json"))
    return summary


def compare(configs, out):
    """Run every config on one shared system and tabulate the results."""
    if not configs:
        raise ConfigError("compare needs at least one strategy")
    key = configs[0].system_key()
    for c in configs[1:]:
        if c.system_key() != key:
            raise ConfigError("compared configs reference different systems")
        if c.tol != configs[0].tol:
            raise ConfigError("compared configs use different tolerances")
    os.makedirs(out, exist_ok=True)
    table = []
    for i, c in enumerate(configs):
        sub = replace(c, out=os.path.join(out, f"run_{i}"))
        agg = run(sub)["aggregate"]
        row = {
            "strategy": c.strategy,
            "mode": Mode.parse(c.mode).value,
            "reps": agg["reps"],
            "converged": agg["converged"],
            "mean_iterations": agg["mean_iterations"],
            "median_iterations": agg["median_iterations"],
            "mean_group_swaps": agg.get("mean_group_swaps"),
        }
        if c.wall_time:
            row["mean_wall_time"] = agg["mean_wall_time"]
        table.append(row)
    cols = list(table[0])
    with open(os.path.join(out, "comparison.csv"), "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        wr.writeheader()
        for row in table:
            wr.writerow({k: ("" if v is None else v) for k, v in row.items()})
    _dump({"rows": table}, os.path.join(out, "comparison.json"))
    return table


def _add_common(p):
    p.add_argument("--config", action="append", default=None, help="JSON config file(s); flags override")
    p.add_argument("--matrix", help="Matrix Market coefficient file")
    p.add_argument("--rhs", help="right-hand side vector file")
    p.add_argument("--generate", help="generator spec, e.g. block-orthogonal:n=25,d=25,blocks=5")
    p.add_argument("--mode", choices=["row", "column"])
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--seed-stride", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--trace-level", choices=TRACE_LEVELS)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--wall-time", action="store_true", default=None, help="record wall time (not reproducible)")


def build_parser():
    parser = argparse.ArgumentParser(prog="adaptsolve", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve with one strategy")
    _add_common(p)
    p.add_argument("--strategy")

    p = sub.add_parser("compare", help="compare strategies on one system")
    _add_common(p)
    p.add_argument("--strategy", action="append", help="repeat for each strategy")

    p = sub.add_parser("diagnose", help="solve and run diagnostics")
    _add_common(p)
    p.add_argument("--strategy")
    p.add_argument("--diagnostics", help=f"comma list from {','.join(DIAGNOSTICS)} (default: all)")
    p.add_argument("--stopping-rule", choices=diag.STOPPING_RULES)
    p.add_argument("--pi-trials", type=int)
    p.add_argument("--pi-subspaces", type=int)
    p.add_argument("--g-trials", type=int)
    p.add_argument("--g-repeats", type=int)

    p = sub.add_parser("generate", help="write a generated system")
    p.add_argument("spec", help="generator spec, e.g. grouped:n=40,d=10,groups=4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--layout", choices=["coordinate", "array"], default="coordinate")
    return parser


def _config_from_args(args, base=None, strategy=None):
    config = base or ExperimentConfig()
    updates = {}
    for f in fields(ExperimentConfig):
        if f.name in ("strategy", "diagnostics"):
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            updates[f.name] = v
    if strategy is not None:
        updates["strategy"] = strategy
    diags = getattr(args, "diagnostics", None)
    if diags is not None:
        updates["diagnostics"] = [d.strip() for d in diags.split(",") if d.strip()]
    return replace(config, **updates)


def _error_report(exc):
    report = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("parameter", "line", "path", "iteration", "residual"):
        v = getattr(exc, attr, None)
        if v is not None:
            report[attr] = v
    seg = getattr(exc, "segment", None)
    if seg is not None:
        report["segment"] = {
            k: (v.item() if isinstance(v, np.generic) else v) for k, v in asdict(seg).items()
        }
    return report


EXIT_CODES = ((DiagnosticsViolation, 4), (FormatError, 3), (OSError, 3), (AdaptSolveError, 2))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            system, x_true = generate_system(GeneratorSpec.parse(args.spec, seed=args.seed))
            os.makedirs(args.out, exist_ok=True)
            write_system(system, os.path.join(args.out, "A.mtx"), os.path.join(args.out, "b.txt"), args.layout)
            write_vector(os.path.join(args.out, "x_true.txt"), x_true)
            if system.row_labels is not None:
                write_vector(os.path.join(args.out, "labels.txt"), system.row_labels)
            print(json.dumps({"n": system.n, "d": system.d, "out": args.out}))
            return 0
        bases = [ExperimentConfig.from_json(p) for p in (args.config or [])] or [None]
        if args.command == "compare":
            if args.strategy:
                if len(bases) > 1:
                    raise ConfigError("use either several --config files or several --strategy flags")
                configs = [_config_from_args(args, bases[0], s) for s in args.strategy]
            else:
                configs = [_config_from_args(args, b) for b in bases]
            for c in configs:
                c.validate()
            table = compare(configs, configs[0].out)
            print(json.dumps({"rows": table}, default=_jsonable))
            return 0
        if len(bases) > 1:
            raise ConfigError(f"{args.command} takes one --config file")
        config = _config_from_args(args, bases[0], args.strategy)
        if args.command == "diagnose" and not config.diagnostics and args.diagnostics is None:
            config = replace(config, diagnostics=list(DIAGNOSTICS))
        summary = run(config, diagnose=args.command == "diagnose")
        print(json.dumps(summary["aggregate"], sort_keys=True))
        return 0
    except (AdaptSolveError, OSError) as exc:
        print(json.dumps(_error_report(exc), default=_jsonable), file=sys.stderr)
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
