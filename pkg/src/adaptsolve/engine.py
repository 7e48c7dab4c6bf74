"""Row-action and column-action update rules, the unified error recursion,
and the outer solve loop."""
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
import csv
import json

import numpy as np

from . import rng as rngmod
from .errors import (
    ConfigError,
    DegenerateDirectionError,
    DimensionError,
    OracleUnavailableError,
    StrategyContractError,
)
from .system import ORACLE_LIMIT, project_onto_solution_set

EPS_CHI = 1e-12


class Mode(str, Enum):
    ROW = "row"
    COLUMN = "column"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).lower().replace("_", "-")
        if key in ("row", "row-action", "rows"):
            return cls.ROW
        if key in ("column", "col", "column-action", "columns"):
            return cls.COLUMN
        raise ConfigError(f"unknown mode {text!r}")


@dataclass(frozen=True)
class Direction:
    """A search direction ``w``: either a basis index or a dense vector."""

    index: int | None = None
    vector: np.ndarray | None = None

    @classmethod
    def basis(cls, i):
        return cls(index=int(i))

    @classmethod
    def dense(cls, v):
        return cls(vector=np.asarray(v, dtype=float))

    def to_dense(self, size):
        if self.index is not None:
            out = np.zeros(size)
            out[self.index] = 1.0
            return out
        return self.vector


class ModeOperator:
    """Mode-specific access to ``M``: ``M = A`` (row) or ``M = A^T`` (column).

    ``w`` lives in R^size, ``M^T w`` in R^image_size.
    """

    def __init__(self, system, mode):
        self.system = system
        self.mode = Mode.parse(mode)
        if self.mode is Mode.ROW:
            self.size, self.image_size = system.n, system.d
            self.norms2 = system.row_norms2
        else:
            self.size, self.image_size = system.d, system.n
            self.norms2 = system.col_norms2

    def mapped_residual(self, r):
        """``M y`` from the residual ``r = A x - b``."""
        return r if self.mode is Mode.ROW else self.system.rmatvec(r)

    def image(self, w):
        """``M^T w``."""
        s = self.system
        if self.mode is Mode.ROW:
            return s.row(w.index) if w.index is not None else s.rmatvec(w.vector)
        return s.col(w.index) if w.index is not None else s.matvec(w.vector)

    def image_norm2(self, w):
        if w.index is not None:
            return float(self.norms2[w.index])
        v = self.image(w)
        return float(v @ v)

    def inner(self, w, g):
        return float(g[w.index]) if w.index is not None else float(w.vector @ g)

    def w_norm(self, w):
        return 1.0 if w.index is not None else float(np.linalg.norm(w.vector))

    def advance(self, x, w, coef):
        """``x + coef * D(w)`` with ``D(w) = A^T w`` (row) or ``w`` (column)."""
        if self.mode is Mode.ROW:
            return x + coef * self.image(w)
        if w.index is not None:
            x = x.copy()
            x[w.index] += coef
            return x
        return x + coef * w.vector

    def y_of(self, x, x_star=None, r=None):
        """Error vector ``y`` for iterate ``x`` in this mode."""
        if self.mode is Mode.COLUMN:
            return self.system.matvec(x) - self.system.b if r is None else r
        if x_star is None:
            raise OracleUnavailableError("row-action y requires x*")
        return x - x_star


def _check_len(v, size, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (size,):
        raise DimensionError(f"{name} has shape {v.shape}, expected ({size},)")
    return v


def row_action_step(system, x, w):
    """Project ``x`` onto ``{z : w^T A z = w^T b}``."""
    x = _check_len(x, system.d, "x")
    w = _check_len(w, system.n, "w")
    h = system.rmatvec(w)
    hh = float(h @ h)
    if hh == 0.0:
        raise DegenerateDirectionError("A^T w = 0")
    return x + h * (float(w @ (system.b - system.matvec(x))) / hh)


def column_action_step(system, x, w):
    """Exact line search on ``||A x - b||`` along ``w``."""
    x = _check_len(x, system.d, "x")
    w = _check_len(w, system.d, "w")
    h = system.matvec(w)
    hh = float(h @ h)
    if hh == 0.0:
        raise DegenerateDirectionError("A w = 0")
    return x + w * (float(h @ (system.b - system.matvec(x))) / hh)


@dataclass
class UnifiedView:
    """``M`` and the error vector ``y`` of the unified recursion."""

    M: np.ndarray
    y: np.ndarray

    @classmethod
    def for_system(cls, system, mode, x, x_star=None):
        mode = Mode.parse(mode)
        A = system.dense()
        if mode is Mode.ROW:
            if x_star is None:
                x_star = project_onto_solution_set(system, x)
            return cls(A, np.asarray(x, dtype=float) - x_star)
        return cls(A.T, A @ x - system.b)


def unified_step(view, w):
    """``y - M^T w (w^T M y) / ||M^T w||^2``; returns the new ``y``."""
    M = np.asarray(view.M)
    h = M.T @ np.asarray(w, dtype=float)
    hh = float(h @ h)
    if hh == 0.0:
        raise DegenerateDirectionError("M^T w = 0")
    return view.y - h * (float(h @ view.y) / hh)


TRACE_LEVELS = ("none", "norms", "full-directions")


@dataclass(frozen=True)
class SolveConfig:
    max_iterations: int = 10_000
    tol: float = 1e-8
    seed: int = 0
    trace_level: str = "norms"
    use_oracle: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.tol < 0:
            raise ConfigError("tol must be nonnegative")
        if self.trace_level not in TRACE_LEVELS:
            raise ConfigError(f"trace_level must be one of {TRACE_LEVELS}")


@dataclass
class Iterate:
    """What a strategy may inspect at iteration ``k``: the system, the
    current ``x_k`` and ``M y_k`` (computable without the oracle)."""

    system: object
    mode: Mode
    op: ModeOperator
    x: np.ndarray
    k: int
    g: np.ndarray


@dataclass
class SolveTrace:
    mode: Mode
    strategy: str
    status: str = "budget-exhausted"
    iterations: int = 0
    norm_y: list = field(default_factory=list)
    norm_residual: list = field(default_factory=list)
    chi: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    y_is_proxy: bool = False
    xs: list | None = None
    directions: list | None = None
    x_star: np.ndarray | None = None
    final_x: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.status == "converged"

    def rows(self):
        K = self.iterations
        if len(self.chi) < K:
            yield 0, self.norm_y[0], self.norm_residual[0], "", "", "start"
            yield K, self.norm_y[-1], self.norm_residual[-1], "", "", "final"
            return
        for k in range(len(self.norm_y)):
            if k < K:
                kind = "project" if self.chi[k] else "noop"
                yield k, self.norm_y[k], self.norm_residual[k], self.chi[k], self.selected[k], kind
            else:
                yield k, self.norm_y[k], self.norm_residual[k], "", "", "final"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["k", "norm_y", "norm_residual", "chi", "selected", "step_kind"])
            for k, ny, nr, chi, sel, kind in self.rows():
                wr.writerow([k, repr(float(ny)), repr(float(nr)), chi, sel, kind])

    def to_dict(self):
        out = {
            "mode": self.mode.value,
            "strategy": self.strategy,
            "status": self.status,
            "iterations": self.iterations,
            "y_is_proxy": self.y_is_proxy,
            "norm_y": [float(v) for v in self.norm_y],
            "norm_residual": [float(v) for v in self.norm_residual],
            "chi": [int(c) for c in self.chi],
            "selected": [int(s) for s in self.selected],
            "stats": self.stats,
        }
        if self.directions is not None:
            out["directions"] = [
                {"index": w.index} if w.index is not None else {"vector": w.vector.tolist()}
                for w in self.directions
            ]
            out["x"] = [x.tolist() for x in self.xs]
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def solve(system, mode, strategy, config=None, x0=None, x_star=None):
    """Run the generic adaptive method until ``||Ax - b|| <= tol (1 + ||b||)``
    or the iteration budget is spent.

    ``x_star`` overrides the oracle projection of ``x0`` used for row-action
    error norms.  Identical inputs give bit-identical traces.
    """
    mode = Mode.parse(mode)
    config = config or SolveConfig()
    strategy.check_compatible(system, mode)
    x = np.zeros(system.d) if x0 is None else _check_len(x0, system.d, "x0").copy()
    op = ModeOperator(system, mode)

    proxy = False
    if mode is Mode.ROW and x_star is None:
        if config.use_oracle and system.n * system.d <= ORACLE_LIMIT:
            x_star = project_onto_solution_set(system, x)
        else:
            proxy = True

    state = strategy.init_state(system, mode, rngmod.stream(config.seed, rngmod.STRATEGY))
    full = config.trace_level == "full-directions"
    keep = config.trace_level != "none"
    trace = SolveTrace(mode=mode, strategy=strategy.spec, y_is_proxy=proxy, x_star=x_star)
    if full:
        trace.xs, trace.directions = [], []
    stop = config.tol * (1.0 + system.b_norm)

    k = 0
    while True:
        r = system.matvec(x) - system.b
        rn = float(np.linalg.norm(r))
        if mode is Mode.COLUMN or proxy:
            yn = rn
        else:
            yn = float(np.linalg.norm(x - x_star))
        if keep or k == 0:
            trace.norm_y.append(yn)
            trace.norm_residual.append(rn)
        if full:
            trace.xs.append(x.copy())
        if rn <= stop:
            trace.status = "converged"
            break
        if k >= config.max_iterations:
            break

        g = op.mapped_residual(r)
        w, state = strategy.select(state, Iterate(system, mode, op, x, k, g))
        hh = op.image_norm2(w)
        if not hh > 0.0:
            raise StrategyContractError(
                f"{strategy.spec} returned a degenerate direction (M^T w = 0) at iteration {k}",
                iteration=k,
            )
        num = op.inner(w, g)
        gn = float(np.linalg.norm(g))
        chi = int(abs(num) > EPS_CHI * op.w_norm(w) * gn)
        state.record(x, w)
        x = op.advance(x, w, -num / hh)
        if keep:
            trace.chi.append(chi)
            trace.selected.append(w.index if w.index is not None else -1)
        if full:
            trace.directions.append(w)
        k += 1

    if not keep:
        trace.norm_y = [trace.norm_y[0], yn]
        trace.norm_residual = [trace.norm_residual[0], rn]
    trace.iterations = k
    trace.final_x = x
    trace.stats.update(strategy.stats(state))
    return trace
