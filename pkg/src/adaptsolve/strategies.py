"""Selection strategies: the rule producing ``w_k`` and the auxiliary state.

Every strategy exposes ``init_state`` (the initial auxiliary record),
``select`` (one draw of ``w_k``) and its declared window length ``N`` and
exploration constant ``pi`` (``None`` when unknown).
"""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .engine import Direction, Mode, ModeOperator
from .errors import SpecError

BOTH = frozenset({Mode.ROW, Mode.COLUMN})


@dataclass
class StrategyState:
    """Auxiliary information ``zeta`` plus the history window.

    ``window`` holds at most ``N - 1`` previous ``(x_j, w_j)`` pairs, so an
    ``N``-Markovian strategy cannot read further back.
    """

    rng: np.random.Generator
    N: int = 1
    zeta: dict = field(default_factory=dict)
    window: deque = field(default_factory=deque)
    counters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.window = deque(self.window, maxlen=max(self.N - 1, 0))

    def record(self, x, w):
        if self.N > 1:
            self.window.append((x, w))


def _support(op):
    return np.flatnonzero(op.norms2 > 0)


def _span_rank(vectors, tol=1e-10):
    if len(vectors) == 0:
        return 0
    s = np.linalg.svd(np.atleast_2d(np.asarray(vectors)), compute_uv=False)
    return int(np.sum(s > tol * s[0])) if s[0] > 0 else 0


def spans_row_space(system, mode, indices):
    """True when ``{M^T e_i : i in indices}`` spans ``row(M)``."""
    A = system.dense()
    vecs = A[indices] if Mode.parse(mode) is Mode.ROW else A[:, indices].T
    return _span_rank(vecs) == system.rank


class Strategy:
    kind = "base"
    modes = BOTH
    declared_N = 1
    declared_pi = None

    def __init__(self, **params):
        self.params = params

    @property
    def spec(self):
        if not self.params:
            return self.kind
        items = ",".join(f"{k}={_fmt(v)}" for k, v in self.params.items())
        return f"{self.kind}:{items}"

    def __repr__(self):
        return f"<{type(self).__name__} {self.spec}>"

    def window_length(self, system, mode):
        return self.declared_N

    def exploration_constant(self, system, mode):
        return self.declared_pi

    def check_compatible(self, system, mode):
        mode = Mode.parse(mode)
        if mode not in self.modes:
            raise SpecError(f"{self.kind} does not support {mode.value}-action", "mode")

    def init_state(self, system, mode, rng):
        return StrategyState(rng=rng, N=self.window_length(system, mode))

    def select(self, state, it):
        raise NotImplementedError

    def stats(self, state):
        return dict(state.counters)


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return "/".join(str(i) for i in v)
    return str(v)


class IID(Strategy):
    """Independent draws of a basis index from a fixed law."""

    kind = "iid"

    def __init__(self, weights="uniform"):
        super().__init__(weights=weights if isinstance(weights, str) else "custom")
        if isinstance(weights, str):
            if weights not in ("uniform", "rownorm2"):
                raise SpecError(f"unknown weights {weights!r}", "weights")
            self.weights = weights
        else:
            w = np.asarray(weights, dtype=float)
            if w.ndim != 1 or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
                raise SpecError("weights must be a probability vector", "weights")
            self.weights = w

    def probabilities(self, op):
        if isinstance(self.weights, np.ndarray):
            if self.weights.shape != (op.size,):
                raise SpecError(f"weights need {op.size} entries", "weights")
            if np.any(self.weights[op.norms2 == 0] > 0):
                raise SpecError("weight placed on a zero row/column", "weights")
            return self.weights
        p = (op.norms2 > 0).astype(float) if self.weights == "uniform" else np.array(op.norms2)
        return p / p.sum()

    def support_spans(self, system, mode):
        p = self.probabilities(ModeOperator(system, mode))
        return spans_row_space(system, mode, np.flatnonzero(p > 0))

    def init_state(self, system, mode, rng):
        state = super().init_state(system, mode, rng)
        p = self.probabilities(ModeOperator(system, mode))
        state.zeta["cdf"] = np.cumsum(p)
        state.zeta["last"] = int(np.flatnonzero(p > 0)[-1])
        return state

    def select(self, state, it):
        cdf = state.zeta["cdf"]
        i = int(np.searchsorted(cdf, state.rng.random() * cdf[-1], side="right"))
        return Direction.basis(min(i, state.zeta["last"])), state


class GaussianSketch(Strategy):
    """Dense i.i.d. standard normal ``w_k``."""

    kind = "sketch"

    def __init__(self, dist="gaussian"):
        if dist != "gaussian":
            raise SpecError(f"unknown sketch distribution {dist!r}", "dist")
        super().__init__(dist=dist)

    def select(self, state, it):
        return Direction.dense(state.rng.standard_normal(it.op.size)), state


class Cyclic(Strategy):
    """Cycle through a fixed list of basis indices.

    ``encapsulation_N = 1`` keeps the unconsumed permutation in ``zeta``;
    ``encapsulation_N = "cycle"`` reads the previous selections of the
    current sweep from the history window instead.
    """

    kind = "cyclic"

    def __init__(self, order="natural", reshuffle="never", encapsulation_N="cycle"):
        if reshuffle not in ("never", "sweep", "each-sweep"):
            raise SpecError(f"unknown reshuffle {reshuffle!r}", "reshuffle")
        reshuffle = "sweep" if reshuffle == "each-sweep" else reshuffle
        if isinstance(order, str):
            if order not in ("natural", "distinct"):
                raise SpecError(f"unknown order {order!r}", "order")
        else:
            order = [int(i) for i in order]
            if not order:
                raise SpecError("cyclic order is empty", "order")
            if len(set(order)) != len(order):
                raise SpecError("cyclic order repeats an index", "order")
        if encapsulation_N not in ("cycle", 1) and not (
            isinstance(encapsulation_N, int) and not isinstance(order, str) and encapsulation_N == len(order)
        ):
            raise SpecError("encapsulation_N must be 1 or the cycle length", "N")
        super().__init__(order=order, reshuffle=reshuffle, N=encapsulation_N)
        self.order, self.reshuffle = order, reshuffle
        self.encapsulation_N = "cycle" if encapsulation_N != 1 else 1

    def resolve_order(self, system, mode):
        op = ModeOperator(system, mode)
        if isinstance(self.order, list):
            order = np.asarray(self.order)
            if order.min() < 0 or order.max() >= op.size:
                raise SpecError(f"cyclic order index outside 0..{op.size - 1}", "order")
            if np.any(op.norms2[order] == 0):
                raise SpecError("cyclic order includes a zero row/column", "order")
            return order
        support = _support(op)
        if self.order == "natural":
            return support
        return distinct_directions(system, mode, support)

    def window_length(self, system, mode):
        return 1 if self.encapsulation_N == 1 else len(self.resolve_order(system, mode))

    def exploration_constant(self, system, mode):
        if self.encapsulation_N == 1:
            return None
        return 1.0 if spans_row_space(system, mode, self.resolve_order(system, mode)) else None

    def init_state(self, system, mode, rng):
        order = self.resolve_order(system, mode)
        state = StrategyState(rng=rng, N=1 if self.encapsulation_N == 1 else len(order))
        state.zeta["order"] = order
        if self.encapsulation_N == 1:
            state.zeta["remaining"] = deque()
        else:
            state.zeta["pos"] = 0
        return state

    def _sweep(self, state):
        order = state.zeta["order"]
        return state.rng.permutation(order) if self.reshuffle == "sweep" else order

    def select(self, state, it):
        z = state.zeta
        if self.encapsulation_N == 1:
            if not z["remaining"]:
                z["remaining"].extend(int(i) for i in self._sweep(state))
            i = z["remaining"].popleft()
        else:
            order, pos = z["order"], z["pos"]
            if self.reshuffle == "never":
                i = int(order[pos])
            else:
                used = {w.index for _, w in list(state.window)[len(state.window) - pos:]} if pos else set()
                left = [int(j) for j in order if j not in used]
                i = left[int(state.rng.integers(len(left)))]
            z["pos"] = (pos + 1) % len(order)
        return Direction.basis(i), state


def distinct_directions(system, mode, indices, tol=1e-12):
    """First member of each class of colinear rows (row mode) or columns."""
    A = system.dense()
    vecs = A[indices] if Mode.parse(mode) is Mode.ROW else A[:, indices].T
    units = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    keep = []
    for i, u in enumerate(units):
        if all(abs(abs(u @ units[j]) - 1.0) > tol for j in keep):
            keep.append(i)
    return np.asarray(indices)[keep]


GREEDY_RULES = {
    "max-abs-residual": "maxres",
    "maxres": "maxres",
    "max-distance": "maxdist",
    "maxdist": "maxdist",
    "max-column-residual-distance": "colres",
    "colres": "colres",
}


class Greedy(Strategy):
    """Deterministic greedy selection over a spanning direction set.

    ``maxres`` maximizes ``|h^T M y|``; ``maxdist`` and ``colres`` maximize
    ``|h^T M y| / ||M^T h||``.  Ties go to the smallest index.
    """

    kind = "greedy"
    declared_pi = 1.0

    def __init__(self, rule="max-abs-residual", basis=None):
        if rule not in GREEDY_RULES:
            raise SpecError(f"unknown greedy rule {rule!r}", "rule")
        self.rule = GREEDY_RULES[rule]
        super().__init__(rule=self.rule)
        self.basis = None if basis is None else np.asarray(basis, dtype=float)
        if self.rule == "colres":
            self.modes = frozenset({Mode.COLUMN})

    def check_compatible(self, system, mode):
        super().check_compatible(system, mode)
        if self.basis is not None:
            size = ModeOperator(system, mode).size
            if self.basis.ndim != 2 or self.basis.shape[0] != size:
                raise SpecError(f"basis must have {size} rows", "basis")
            if np.linalg.matrix_rank(self.basis) < size:
                raise SpecError("basis does not span", "basis")

    def init_state(self, system, mode, rng):
        state = super().init_state(system, mode, rng)
        op = ModeOperator(system, mode)
        if self.basis is None:
            norms2 = np.asarray(op.norms2, dtype=float)
        else:
            imgs = np.column_stack([op.image(Direction.dense(h)) for h in self.basis.T])
            norms2 = np.einsum("ij,ij->j", imgs, imgs)
        valid = norms2 > 0
        state.zeta["valid"] = valid
        state.zeta["scale"] = np.where(valid, 1.0 / np.sqrt(np.where(valid, norms2, 1.0)), 0.0)
        return state

    def scores(self, state, g):
        proj = g if self.basis is None else self.basis.T @ g
        s = np.abs(proj)
        if self.rule == "maxres":
            return np.where(state.zeta["valid"], s, -1.0)
        return np.where(state.zeta["valid"], s * state.zeta["scale"], -1.0)

    def select(self, state, it):
        i = int(np.argmax(self.scores(state, it.g)))
        if self.basis is None:
            return Direction.basis(i), state
        return Direction.dense(self.basis[:, i]), state


class TopMRandom(Strategy):
    """Take the ``m`` largest ``|M y|`` entries, then sample one of them."""

    kind = "topm"

    def __init__(self, m=10, within="uniform"):
        if not isinstance(m, (int, np.integer)) or m < 1:
            raise SpecError(f"m must be a positive integer, got {m!r}", "m")
        if within not in ("uniform", "residual-weighted", "weighted"):
            raise SpecError(f"unknown within-subset law {within!r}", "within")
        self.m = int(m)
        self.within = "weighted" if within == "residual-weighted" else within
        super().__init__(m=self.m, within=self.within)
        self.declared_pi = 1.0 / self.m if self.within == "uniform" else 1.0

    def check_compatible(self, system, mode):
        super().check_compatible(system, mode)
        if self.m > _support(ModeOperator(system, mode)).size:
            raise SpecError(f"m={self.m} exceeds the number of nonzero candidates", "m")

    def init_state(self, system, mode, rng):
        state = super().init_state(system, mode, rng)
        state.zeta["support"] = _support(ModeOperator(system, mode))
        return state

    def select(self, state, it):
        support = state.zeta["support"]
        mag = np.abs(it.g[support])
        top = support[np.argsort(-mag, kind="stable")[: self.m]]
        if self.within == "uniform":
            return Direction.basis(top[int(state.rng.integers(self.m))]), state
        p = it.g[top] ** 2
        total = p.sum()
        if total == 0.0:
            return Direction.basis(top[int(state.rng.integers(self.m))]), state
        cdf = np.cumsum(p)
        j = int(np.searchsorted(cdf, state.rng.random() * cdf[-1], side="right"))
        return Direction.basis(top[min(j, self.m - 1)]), state


class RandomSubsetGreedy(Strategy):
    """Sample a subset without replacement, then take its largest ``|M y|``."""

    kind = "skm"

    def __init__(self, sample_size=5, sampling="uniform"):
        if not isinstance(sample_size, (int, np.integer)) or sample_size < 1:
            raise SpecError(f"sample must be a positive integer, got {sample_size!r}", "sample")
        if sampling not in ("uniform", "uniform-without-replacement", "weighted"):
            raise SpecError(f"unknown sampling {sampling!r}", "sampling")
        self.sample_size = int(sample_size)
        self.sampling = "weighted" if sampling == "weighted" else "uniform"
        super().__init__(sample=self.sample_size, sampling=self.sampling)

    def check_compatible(self, system, mode):
        super().check_compatible(system, mode)
        if self.sample_size > _support(ModeOperator(system, mode)).size:
            raise SpecError(f"sample={self.sample_size} exceeds the number of candidates", "sample")

    def exploration_constant(self, system, mode):
        if self.sampling != "uniform":
            return None
        return self.sample_size / _support(ModeOperator(system, mode)).size

    def init_state(self, system, mode, rng):
        state = super().init_state(system, mode, rng)
        op = ModeOperator(system, mode)
        support = _support(op)
        state.zeta["support"] = support
        if self.sampling == "weighted":
            p = np.asarray(op.norms2[support], dtype=float)
            state.zeta["p"] = p / p.sum()
        return state

    def select(self, state, it):
        support = state.zeta["support"]
        subset = np.sort(
            state.rng.choice(support, size=self.sample_size, replace=False, p=state.zeta.get("p"))
        )
        return Direction.basis(subset[int(np.argmax(np.abs(it.g[subset])))]), state


class Grouped(Strategy):
    """Work inside one row group until its residual drops to ``rho`` times
    its value on entry (or ``max_visits`` steps pass), then move on.

    Each group runs its own copy of the inner strategy on the group's rows.
    ``group_swaps`` counts group changes.
    """

    kind = "grouped"
    modes = frozenset({Mode.ROW})

    def __init__(self, groups=None, inner=None, rho=0.5, max_visits=None, inner_spec="cyclic:reshuffle=sweep"):
        if not 0.0 < rho < 1.0:
            raise SpecError(f"rho must lie in (0, 1), got {rho}", "rho")
        if max_visits is not None and max_visits < 1:
            raise SpecError("max_visits must be positive", "visits")
        self.groups = groups
        self.inner = inner if inner is not None else parse_strategy(inner_spec)
        self.rho, self.max_visits = float(rho), max_visits
        g = groups if isinstance(groups, (int, str)) or groups is None else "custom"
        params = {"g": g if g is not None else "labels", "rho": rho, "inner": self.inner.kind}
        if max_visits is not None:
            params["visits"] = max_visits
        super().__init__(**params)

    def resolve_groups(self, system):
        groups = self.groups
        if groups is None or groups == "labels":
            if system.row_labels is None:
                raise SpecError("system carries no row labels; pass g=<count>", "g")
            labels = system.row_labels
            parts = [np.flatnonzero(labels == v) for v in np.unique(labels)]
        elif isinstance(groups, (int, np.integer)):
            if not 1 <= groups <= system.n:
                raise SpecError(f"g={groups} outside 1..n", "g")
            parts = np.array_split(np.arange(system.n), int(groups))
        else:
            parts = [np.asarray(p, dtype=np.int64) for p in groups]
            if any(p.size == 0 for p in parts):
                raise SpecError("empty group", "groups")
            flat = np.sort(np.concatenate(parts))
            if not np.array_equal(flat, np.arange(system.n)):
                raise SpecError("groups must partition the rows", "groups")
        return parts

    def init_state(self, system, mode, rng):
        from .system import LinearSystem

        state = super().init_state(system, mode, rng)
        parts = self.resolve_groups(system)
        subs = []
        for idx in parts:
            sub = LinearSystem(system.dense()[idx] if not system.is_sparse else system.A[idx], system.b[idx])
            sub_op = ModeOperator(sub, Mode.ROW)
            self.inner.check_compatible(sub, Mode.ROW)
            subs.append((idx, sub, sub_op))
        rngs = [rng] + list(rng.spawn(len(parts) - 1)) if len(parts) > 1 else [rng]
        state.zeta.update(
            parts=subs,
            inner=[self.inner.init_state(sub, Mode.ROW, r) for (_, sub, _), r in zip(subs, rngs)],
            current=0,
            entry=None,
            visits=0,
        )
        state.counters["group_swaps"] = 0
        return state

    def _limit(self, size):
        return self.max_visits if self.max_visits is not None else 10 * size

    def select(self, state, it):
        z = state.zeta
        parts = z["parts"]

        def group_norm(c):
            return float(np.linalg.norm(it.g[parts[c][0]]))

        if z["entry"] is None:
            z["entry"] = group_norm(z["current"])
        c = z["current"]
        if z["visits"] > 0:
            now = group_norm(c)
            if now <= self.rho * z["entry"] or z["visits"] >= self._limit(parts[c][0].size):
                for _ in range(len(parts)):
                    c = (c + 1) % len(parts)
                    if group_norm(c) > 0:
                        break
                if c != z["current"]:
                    state.counters["group_swaps"] += 1
                z["current"], z["entry"], z["visits"] = c, group_norm(c), 0
        idx, sub, sub_op = parts[c]
        sub_it = type(it)(sub, Mode.ROW, sub_op, it.x, it.k, it.g[idx])
        w, z["inner"][c] = self.inner.select(z["inner"][c], sub_it)
        z["inner"][c].record(it.x, w)
        z["visits"] += 1
        if w.index is not None:
            return Direction.basis(idx[w.index]), state
        full = np.zeros(it.op.size)
        full[idx] = w.vector
        return Direction.dense(full), state


def make_iid(weights="uniform"):
    return IID(weights)


def make_cyclic(order="natural", reshuffle="never", encapsulation_N="cycle"):
    return Cyclic(order, reshuffle, encapsulation_N)


def make_greedy(rule="max-abs-residual", basis=None):
    return Greedy(rule, basis)


def make_greedy_subset_random(m=10, within="uniform"):
    return TopMRandom(m, within)


def make_random_subset_greedy(sample_size=5, sampling="uniform"):
    return RandomSubsetGreedy(sample_size, sampling)


def make_grouped(groups=None, within="cyclic:reshuffle=sweep", rho=0.5, max_visits=None):
    inner = within if isinstance(within, Strategy) else parse_strategy(within)
    return Grouped(groups=groups, inner=inner, rho=rho, max_visits=max_visits)


def _int(key, value):
    try:
        return int(value)
    except ValueError:
        raise SpecError(f"parameter {key} must be an integer, got {value!r}", key) from None


def _float(key, value):
    try:
        return float(value)
    except ValueError:
        raise SpecError(f"parameter {key} must be a number, got {value!r}", key) from None


_INNER_ALIASES = {
    "cyclic": "cyclic:reshuffle=sweep",
    "uniform": "iid",
    "iid": "iid",
    "greedy": "greedy",
}


def parse_strategy(text):
    """Build a strategy from ``kind[:param=value,...]``.

    Examples: ``iid:weights=rownorm2``, ``cyclic:reshuffle=sweep``,
    ``greedy:rule=maxres``, ``topm:m=10,within=uniform``, ``skm:sample=5``,
    ``grouped:g=4,rho=0.5,inner=cyclic``, ``sketch``.
    """
    kind, _, rest = str(text).strip().partition(":")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise SpecError(f"malformed parameter {item!r} in {text!r}", item)
        params[key.strip()] = value.strip()

    def take(allowed):
        unknown = set(params) - set(allowed)
        if unknown:
            key = sorted(unknown)[0]
            raise SpecError(f"unknown parameter {key!r} for {kind}", key)

    if kind == "iid":
        take({"weights"})
        return IID(params.get("weights", "uniform"))
    if kind == "sketch":
        take({"dist"})
        return GaussianSketch(params.get("dist", "gaussian"))
    if kind == "cyclic":
        take({"order", "reshuffle", "N"})
        order = params.get("order", "natural")
        if order not in ("natural", "distinct"):
            order = [_int("order", v) for v in order.split("/")]
        N = params.get("N", "cycle")
        N = "cycle" if N == "cycle" else _int("N", N)
        if N != "cycle" and N != 1 and not (isinstance(order, list) and N == len(order)):
            raise SpecError("N must be 1 or cycle", "N")
        return Cyclic(order, params.get("reshuffle", "never"), N if N == 1 else "cycle")
    if kind == "greedy":
        take({"rule"})
        return Greedy(params.get("rule", "maxres"))
    if kind == "topm":
        take({"m", "within"})
        return TopMRandom(_int("m", params.get("m", "10")), params.get("within", "uniform"))
    if kind == "skm":
        take({"sample", "sampling"})
        return RandomSubsetGreedy(_int("sample", params.get("sample", "5")), params.get("sampling", "uniform"))
    if kind == "grouped":
        take({"g", "rho", "inner", "visits"})
        g = params.get("g", "labels")
        g = g if g == "labels" else _int("g", g)
        inner = params.get("inner", "cyclic")
        inner = _INNER_ALIASES.get(inner, inner)
        if inner.startswith("grouped"):
            raise SpecError("grouped strategies cannot nest", "inner")
        visits = params.get("visits")
        return Grouped(
            groups=g,
            inner=parse_strategy(inner),
            rho=_float("rho", params.get("rho", "0.5")),
            max_visits=None if visits is None else _int("visits", visits),
        )
    raise SpecError(f"unknown strategy kind {kind!r}", "kind")


BUILTIN_SPECS = (
    "iid:weights=uniform",
    "iid:weights=rownorm2",
    "sketch",
    "cyclic",
    "cyclic:reshuffle=sweep",
    "greedy:rule=maxres",
    "greedy:rule=maxdist",
    "topm:m=3,within=uniform",
    "topm:m=3,within=weighted",
    "skm:sample=3",
)
