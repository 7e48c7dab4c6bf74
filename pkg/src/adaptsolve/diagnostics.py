"""Executable convergence diagnostics.

Tracks the non-orthogonality flags, the iterate and direction subspaces of
each segment, detects the stopping times that delimit guaranteed-contraction
segments, and checks the Meany-type contraction bound on them.  Monte-Carlo
estimators approximate the exploration constant ``pi`` and the
uniform-control constant ``g``.

Tolerances: ``EPS_CHI`` (relative orthogonality), ``EPS_SUB`` (relative
subspace containment) and ``EPS_RATE`` (slack on contraction inequalities).
"""
from dataclasses import asdict, dataclass, field
from itertools import combinations
import json
import math

import numpy as np

from . import rng as rngmod
from .engine import EPS_CHI, Direction, Iterate, Mode, ModeOperator
from .errors import (
    DegenerateDirectionError,
    DiagnosticsViolation,
    EnumerationBudgetError,
    OracleUnavailableError,
)
from .system import nullspace_projector, project_onto_solution_set

EPS_SUB = 1e-10
EPS_RATE = 1e-8
EPS_ZERO = 1e-12   # ||y|| below this fraction of ||y_0|| counts as zero
ENUM_LIMIT = 12


@dataclass(frozen=True)
class ChiFlag:
    value: int
    score: float


def _chi_score(h, y):
    hn, yn = np.linalg.norm(h), np.linalg.norm(y)
    if yn == 0.0:
        return 0.0
    return float(abs(h @ y) / (hn * yn))


def chi(view, w):
    """Whether ``y`` is non-orthogonal to the search direction ``M^T w``."""
    h = np.asarray(view.M).T @ np.asarray(w, dtype=float)
    if not np.linalg.norm(h) > 0.0:
        raise DegenerateDirectionError("M^T w = 0")
    score = _chi_score(h, view.y)
    return ChiFlag(int(score > EPS_CHI), score)


class SubspaceBasis:
    """Incrementally grown orthonormal basis (columns of ``Q``)."""

    def __init__(self, ambient, tol=EPS_SUB, Q=None):
        self.ambient = ambient
        self.tol = tol
        self.Q = np.zeros((ambient, 0)) if Q is None else np.array(Q, dtype=float)

    @property
    def dimension(self):
        return self.Q.shape[1]

    def copy(self):
        return SubspaceBasis(self.ambient, self.tol, self.Q)

    def _remainder(self, v):
        r = v - self.Q @ (self.Q.T @ v)
        return r - self.Q @ (self.Q.T @ r)

    def contains(self, v):
        v = np.asarray(v, dtype=float)
        vn = np.linalg.norm(v)
        if vn == 0.0:
            return True
        return bool(np.linalg.norm(self._remainder(v)) <= self.tol * vn)

    def extend(self, v):
        """Add ``v`` in place; returns True if it was already contained."""
        v = np.asarray(v, dtype=float)
        vn = np.linalg.norm(v)
        if vn == 0.0:
            return True
        r = self._remainder(v)
        rn = np.linalg.norm(r)
        if rn <= self.tol * vn:
            return True
        self.Q = np.column_stack([self.Q, r / rn])
        return False


def extend_subspace(basis, v):
    """Return ``(new_basis, contained)``; ``basis`` is left untouched."""
    out = basis.copy()
    contained = out.extend(v)
    return out, contained


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0.0:
        raise ValueError("zero direction")
    return v / n


def _independent_remainders(units, tol=EPS_SUB):
    """Greedy in-order orthogonalization; returns kept indices and the norms
    of their Gram-Schmidt remainders."""
    if not units:
        return [], []
    basis = SubspaceBasis(len(units[0]), tol)
    kept, norms = [], []
    for i, u in enumerate(units):
        r = basis._remainder(u)
        rn = float(np.linalg.norm(r))
        if rn > tol:
            basis.Q = np.column_stack([basis.Q, r / rn])
            kept.append(i)
            norms.append(rn)
    return kept, norms


def gram_determinant(directions):
    """``det(G^T G)`` for a maximal linearly independent subset ``G`` of the
    normalized directions, taken greedily in order."""
    if len(directions) == 0:
        raise ValueError("gram_determinant needs at least one direction")
    units = [_unit(v) for v in directions]
    _, norms = _independent_remainders(units)
    return float(np.prod(np.square(norms)))


def _distinct_units(vectors, tol=1e-12):
    out = []
    for v in vectors:
        u = _unit(v)
        if all(abs(abs(u @ q) - 1.0) > tol for q in out):
            out.append(u)
    return out


def _rank(units, tol=EPS_SUB):
    return len(_independent_remainders(units, tol)[0])


def min_gram_over_bases(units, limit=ENUM_LIMIT):
    """Minimum ``det(H^T H)`` over every maximal linearly independent subset
    of ``units`` (all unit vectors)."""
    units = _distinct_units(units)
    if len(units) > limit:
        raise EnumerationBudgetError(
            f"{len(units)} distinct directions exceed the enumeration limit {limit}; "
            "use a smaller system"
        )
    r = _rank(units)
    best = 1.0
    for combo in combinations(range(len(units)), r):
        kept, norms = _independent_remainders([units[i] for i in combo])
        if len(kept) == r:
            best = min(best, float(np.prod(np.square(norms))))
    return best


def worst_case_gamma(direction_set, limit=ENUM_LIMIT):
    """``1 - min det(H^T H)`` over maximal independent subsets of the
    normalized directions: a per-segment contraction factor valid for every
    strategy drawing ``M^T w`` from this finite set."""
    vecs = [np.asarray(v, dtype=float) for v in direction_set]
    if not vecs:
        raise ValueError("empty direction set")
    if any(not np.linalg.norm(v) > 0 for v in vecs):
        raise ValueError("direction set contains a zero vector")
    return 1.0 - min_gram_over_bases(vecs, limit)


@dataclass
class MeanyReport:
    left: float
    bound: float
    min_det: float
    norm_y2: float
    chi: list
    in_span: bool
    enumerated: bool
    holds: bool


def meany_check(directions, y, limit=ENUM_LIMIT, slack=EPS_RATE):
    """Apply the chained projections to ``y`` and compare against
    ``(1 - min det(G^T G)) ||y||^2``.

    ``directions`` are the images ``M^T w_j`` in application order; the
    non-orthogonality flag of each is evaluated along the chain.
    """
    y = np.asarray(y, dtype=float)
    units = [_unit(v) for v in directions]
    z = y.copy()
    flags = []
    for u in units:
        c = int(_chi_score(u, z) > EPS_CHI)
        flags.append(c)
        if c:
            z = z - u * (u @ z)
    phi = [u for u, c in zip(units, flags) if c]
    span = SubspaceBasis(len(y))
    for u in phi:
        span.extend(u)
    in_span = span.contains(y)
    norm_y2 = float(y @ y)
    left = float(z @ z)
    if not phi:
        return MeanyReport(left, norm_y2, 0.0, norm_y2, flags, in_span, True, left <= norm_y2 + slack)
    try:
        min_det = min_gram_over_bases(phi, limit)
        enumerated = True
    except EnumerationBudgetError:
        min_det = gram_determinant(phi)
        enumerated = False
    bound = (1.0 - min_det) * norm_y2
    return MeanyReport(left, bound, min_det, norm_y2, flags, in_span, enumerated, left <= bound + slack)


@dataclass
class Segment:
    tau: int
    nu: int | None
    s: int | None
    gamma: float
    det_G: float | None
    ratio_observed: float | None
    structure_ok: bool
    zero: bool = False
    dim: int = 0
    span_equal: bool = True
    independent: bool = True
    enumerated: bool = True

    @property
    def contraction_ok(self):
        return self.ratio_observed is None or self.ratio_observed <= self.gamma + EPS_RATE


@dataclass
class StoppingTimeReport:
    rule: str = "nu"
    segments: list = field(default_factory=list)
    norm_y_tau: list = field(default_factory=list)
    norm_y0: float = 0.0
    complete: bool = True

    @property
    def taus(self):
        out = [0]
        for seg in self.segments:
            out.append(seg.tau + (1 if seg.nu is None else seg.nu + 1))
        return out

    @property
    def nus(self):
        return [s.nu for s in self.segments if s.nu is not None]

    @property
    def violations(self):
        return [s for s in self.segments if not s.structure_ok]

    def to_dict(self):
        return {
            "rule": self.rule,
            "norm_y0": self.norm_y0,
            "complete": self.complete,
            "segments": [
                {
                    "tau": s.tau,
                    "nu": s.nu,
                    "s": s.s,
                    "gamma": s.gamma,
                    "det_G": s.det_G,
                    "ratio_observed": s.ratio_observed,
                    "lemma42_ok": s.structure_ok,
                }
                for s in self.segments
            ],
            "norm_y_tau": self.norm_y_tau,
        }

    def finite_set_rate_ok(self, gamma, slack=EPS_RATE):
        """``||y_{tau_k}||^2 <= gamma^k ||y_0||^2 + slack`` for every k."""
        y02 = self.norm_y0**2
        return all(ny**2 <= gamma**k * y02 + slack for k, ny in enumerate(self.norm_y_tau))


def _directions_and_y0(trace, system):
    if trace.directions is None:
        raise ValueError("stopping-time detection needs trace_level='full-directions'")
    mode = trace.mode
    op = ModeOperator(system, mode)
    x0 = trace.xs[0]
    if mode is Mode.ROW:
        x_star = trace.x_star
        if x_star is None:
            x_star = project_onto_solution_set(system, x0)
        y0 = x0 - x_star
    else:
        y0 = system.matvec(x0) - system.b
    images = [op.image(w) for w in trace.directions]
    return images, y0


def error_path(images, y0):
    """Error vectors along the unified recursion, ``y_0 .. y_K``.

    Driving the recursion directly keeps ``y_k`` accurate relative to its own
    norm, which ``x_k - x*`` is not once ``x_k`` is close to ``x*``.
    """
    ys = [np.asarray(y0, dtype=float)]
    y = ys[0]
    for h in images:
        u = _unit(h)
        y = y - u * (u @ y)
        ys.append(y)
    return ys


STOPPING_RULES = ("nu", "span")


def _walk(units, ys, tau, y0n, zero_tol, rule="nu", limit=ENUM_LIMIT):
    """Close the segment starting at ``tau``; None if the trace ends first.

    ``rule="nu"``: first ``k`` with ``y_{tau+k+1}`` in span(y_tau..y_{tau+k})
    and a flagged direction at ``tau+k``.  ``rule="span"``: first ``k`` with
    ``y_tau`` in the span of the flagged directions ``tau..tau+k``.
    """
    K = len(units)
    yt = ys[tau]
    ytn = float(np.linalg.norm(yt))
    if ytn <= zero_tol * y0n:
        return Segment(tau, None, None, 0.0, None, None, True, zero=True)
    V = SubspaceBasis(len(yt))
    V.extend(yt)
    P = SubspaceBasis(len(yt))
    phi = []
    independent = True
    s = None
    for j in range(tau, K):
        c = _chi_score(units[j], ys[j]) > EPS_CHI
        if c:
            phi.append(j)
            independent &= not P.extend(units[j])
            if s is None:
                s = j - tau
        nxt = ys[j + 1]
        contained = np.linalg.norm(nxt) <= zero_tol * y0n or V.contains(nxt)
        if rule == "nu":
            done = contained and c
        else:
            done = c and P.contains(yt)
        if done:
            nu = j - tau
            break
        if not contained:
            V.extend(nxt)
    else:
        return None
    if not contained:
        V.extend(nxt)

    span_equal = P.dimension == V.dimension and all(P.contains(q) for q in V.Q.T) and all(
        V.contains(units[j]) for j in phi
    )
    flagged = [units[j] for j in phi]
    canonical = float(np.prod(np.square(_independent_remainders(flagged)[1])))
    enumerated = True
    if independent:
        det = canonical
    else:
        try:
            det = min_gram_over_bases(flagged, limit)
        except EnumerationBudgetError:
            det, enumerated = canonical, False
    ratio = float(np.linalg.norm(ys[tau + nu + 1]) ** 2 / ytn**2)
    ok = span_equal and (independent or rule == "span")
    return Segment(
        tau, nu, s, 1.0 - det, det, ratio, bool(ok), dim=V.dimension,
        span_equal=bool(span_equal), independent=bool(independent), enumerated=enumerated,
    )


def detect_stopping_times(trace, system, zero_tol=EPS_ZERO, check=True, rule="nu"):
    """Split a full-directions trace into stopping-time segments.

    Each segment starts at ``tau_j`` and ends at ``tau_j + nu(tau_j)``.  At
    its end the span of the error iterates must equal the span of the
    flagged normalized directions, and (for ``rule="nu"``) those directions
    must be linearly independent.  With ``check`` a failure raises
    :class:`DiagnosticsViolation`.

    ``gamma`` is ``1 - det(G^T G)``: the canonical subset when the flagged
    directions are independent, otherwise the minimum over all maximal
    independent subsets (canonical fallback past ``ENUM_LIMIT``).
    """
    images, y0 = _directions_and_y0(trace, system)
    return stopping_times_from_path(images, y0, zero_tol=zero_tol, check=check, rule=rule)


def stopping_times_from_path(images, y0, zero_tol=EPS_ZERO, check=True, rule="nu", max_segments=None):
    if rule not in STOPPING_RULES:
        raise ValueError(f"rule must be one of {STOPPING_RULES}")
    units = [_unit(h) for h in images]
    ys = error_path(images, y0)
    y0n = float(np.linalg.norm(ys[0]))
    report = StoppingTimeReport(rule=rule, norm_y0=y0n, norm_y_tau=[y0n])
    tau = 0
    while tau < len(units):
        if max_segments is not None and len(report.segments) >= max_segments:
            break
        seg = _walk(units, ys, tau, y0n, zero_tol, rule)
        if seg is None:
            report.complete = False
            break
        if check and not seg.structure_ok:
            what = "span equality" if not seg.span_equal else "direction independence"
            raise DiagnosticsViolation(f"{what} failed on segment starting at {tau}", segment=seg)
        report.segments.append(seg)
        tau = tau + 1 if seg.zero else tau + seg.nu + 1
        report.norm_y_tau.append(float(np.linalg.norm(ys[tau])))
    return report


def nullspace_drift(system, trace):
    """Largest change of the null-space component of ``x_k`` along a
    row-action trace, relative to ``1 + ||x_0||``."""
    if trace.mode is not Mode.ROW:
        raise ValueError("null-space drift is defined for row-action traces")
    if trace.xs is None:
        raise ValueError("null-space drift needs trace_level='full-directions'")
    proj = nullspace_projector(system)
    x0 = trace.xs[0]
    p0 = proj(x0)
    scale = 1.0 + float(np.linalg.norm(x0))
    return max(float(np.linalg.norm(proj(x) - p0)) for x in trace.xs) / scale


# --- Monte-Carlo estimators -------------------------------------------------


def row_space_basis(system, mode):
    """Orthonormal basis (columns) of ``row(M)``."""
    U, _, Vt, _ = system.svd
    return Vt.T if Mode.parse(mode) is Mode.ROW else U


def iterate_for_error(system, mode, y0):
    """An ``x_0`` whose error vector in ``mode`` is ``y0`` (``y0`` in row(M))."""
    x_ref = project_onto_solution_set(system, np.zeros(system.d))
    if Mode.parse(mode) is Mode.ROW:
        return x_ref + y0
    U, s, Vt, _ = system.svd
    return x_ref + Vt.T @ ((U.T @ y0) / s)


class _Runner:
    """Drives a strategy and the exact update from a given start, tracking the
    unified error vector alongside ``x``."""

    def __init__(self, strategy, system, mode, x0, rng):
        self.system, self.mode, self.strategy = system, Mode.parse(mode), strategy
        self.op = ModeOperator(system, self.mode)
        self.state = strategy.init_state(system, self.mode, rng)
        self.x = np.array(x0, dtype=float)
        self.k = 0

    def step(self):
        r = self.system.matvec(self.x) - self.system.b
        g = self.op.mapped_residual(r)
        w, self.state = self.strategy.select(
            self.state, Iterate(self.system, self.mode, self.op, self.x, self.k, g)
        )
        hh = self.op.image_norm2(w)
        if not hh > 0:
            raise DegenerateDirectionError(f"{self.strategy.spec}: degenerate direction")
        self.state.record(self.x, w)
        self.x = self.op.advance(self.x, w, -self.op.inner(w, g) / hh)
        self.k += 1
        return self.op.image(w)


def _random_subspace(rng, B, candidates):
    """A random proper subspace of span(B), half the time of the form
    ``row(M) ∩ span(S)^perp`` for a random candidate subset S."""
    R = B.shape[1]
    if rng.random() < 0.5 and len(candidates):
        size = int(rng.integers(1, R)) if R > 1 else 1
        pick = rng.choice(len(candidates), size=min(size, len(candidates)), replace=False)
        C = candidates[pick] @ B
        _, s, Vt = np.linalg.svd(C, full_matrices=True)
        rank = int(np.sum(s > EPS_SUB * s[0])) if s.size and s[0] > 0 else 0
        if 0 < rank < R:
            return B @ Vt[rank:].T
    dim = int(rng.integers(1, R))
    Q, _ = np.linalg.qr(B @ rng.standard_normal((R, dim)))
    return Q


@dataclass
class PiEstimate:
    pi_hat: float
    declared_pi: float | None
    N: int
    trials: int
    subspaces: int
    violations: list = field(default_factory=list)
    frequencies: list = field(default_factory=list)

    def to_dict(self):
        return {
            "pi_hat": self.pi_hat,
            "declared_pi": self.declared_pi,
            "N": self.N,
            "trials": self.trials,
            "subspaces": self.subspaces,
            "violations": self.violations,
        }


def window_orthogonality_frequency(strategy, system, mode, V, y0, trials, seed=0, tag=0):
    """Empirical probability that all ``N`` directions of a fresh window are
    orthogonal to the subspace spanned by the columns of ``V``."""
    N = strategy.window_length(system, mode)
    x0 = iterate_for_error(system, mode, y0)
    hits = 0
    for t in range(trials):
        run = _Runner(strategy, system, mode, x0, rngmod.stream(seed, rngmod.DIAGNOSTICS, "pi", tag, t))
        for _ in range(N):
            h = run.step()
            if np.linalg.norm(V.T @ h) > EPS_CHI * np.linalg.norm(h):
                break
        else:
            hits += 1
    return hits / trials


def estimate_pi(strategy, system, mode, trials=50, subspace_samples=100, seed=0):
    """Monte-Carlo lower-confidence estimate of the exploration constant.

    Samples proper subspaces ``V`` of ``row(M)`` and starts ``y_0 in V``; a
    violation is recorded when the all-orthogonal frequency exceeds
    ``1 - declared_pi`` by more than three binomial standard errors.
    """
    mode = Mode.parse(mode)
    strategy.check_compatible(system, mode)
    N = strategy.window_length(system, mode)
    declared = strategy.exploration_constant(system, mode)
    B = row_space_basis(system, mode)
    out = PiEstimate(1.0, declared, N, trials, subspace_samples)
    if B.shape[1] < 2:
        return out
    op = ModeOperator(system, mode)
    A = system.dense()
    cand = A if mode is Mode.ROW else A.T
    cand = cand[op.norms2 > 0]
    g = rngmod.stream(seed, rngmod.DIAGNOSTICS, "subspaces")
    worst = 0.0
    for s in range(subspace_samples):
        V = _random_subspace(g, B, cand)
        y0 = V @ g.standard_normal(V.shape[1])
        f = window_orthogonality_frequency(strategy, system, mode, V, y0, trials, seed, s)
        out.frequencies.append(f)
        worst = max(worst, f)
        if declared is not None:
            p = 1.0 - declared
            se = math.sqrt(p * (1.0 - p) / trials)
            if f > p + 3.0 * se + 1e-12:
                out.violations.append({"sample": s, "dim": int(V.shape[1]), "frequency": f, "bound": p})
    out.pi_hat = 1.0 - worst
    return out


def estimate_g(strategy, system, mode, trials=20, repeats=10, budget=10_000, seed=0):
    """Monte-Carlo lower-envelope estimate of the uniform-control constant.

    For each random start ``y_0`` the Gram determinant of the first segment
    beginning at iteration ``N - 1`` is averaged over ``repeats`` fresh
    strategy states; the minimum of these means over ``trials`` is returned.
    """
    mode = Mode.parse(mode)
    strategy.check_compatible(system, mode)
    N = strategy.window_length(system, mode)
    B = row_space_basis(system, mode)
    g = rngmod.stream(seed, rngmod.DIAGNOSTICS, "g")
    means = []
    for t in range(trials):
        y0 = B @ g.standard_normal(B.shape[1])
        x0 = iterate_for_error(system, mode, y0)
        dets = []
        for r in range(repeats):
            run = _Runner(strategy, system, mode, x0, rngmod.stream(seed, rngmod.DIAGNOSTICS, "g", t, r))
            images = [run.step() for _ in range(N - 1)]
            ys_start = error_path(images, y0)[-1]
            seg = None
            chunk = []
            while seg is None and run.k < budget:
                chunk.extend(run.step() for _ in range(min(8 * B.shape[1] + 8, budget - run.k)))
                units = [_unit(h) for h in chunk]
                ys = error_path(chunk, ys_start)
                seg = _walk(units, ys, 0, float(np.linalg.norm(y0)), EPS_ZERO)
            if seg is not None and not seg.zero:
                dets.append(seg.det_G)
        if dets:
            means.append(float(np.mean(dets)))
    return min(means) if means else float("nan")
