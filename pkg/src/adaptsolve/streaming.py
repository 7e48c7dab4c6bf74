"""Streaming equations: i.i.d. pairs ``(alpha, beta)`` with a common solution,
consumed one at a time by the row-action update."""
from dataclasses import dataclass, field
import csv

import numpy as np

from . import rng as rngmod
from .engine import Mode, SolveTrace
from .errors import DegenerateDirectionError, DimensionError, FormatError, SpecError

EPS_PAIR = 1e-12


def streaming_step(x, alpha, beta):
    """``x + alpha (beta - alpha^T x) / ||alpha||^2``."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != x.shape:
        raise DimensionError(f"alpha has shape {alpha.shape}, x has {x.shape}")
    aa = float(alpha @ alpha)
    if not aa > 0.0:
        raise DegenerateDirectionError("alpha = 0 reached the streaming update")
    return x + alpha * ((float(beta) - float(alpha @ x)) / aa)


@dataclass
class StreamingSource:
    """Pull-based source of consistent pairs.

    ``sampler(rng)`` returns one ``alpha``; ``beta = alpha^T x_star``.
    Zero draws are skipped and counted in ``discarded``.
    """

    x_star: np.ndarray
    sampler: object
    second_moment: np.ndarray | None = None
    seed: int = 0
    discarded: int = 0
    emitted: int = 0
    _rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=float).reshape(-1)
        self.reset()

    @property
    def d(self):
        return self.x_star.shape[0]

    def reset(self):
        self._rng = rngmod.stream(self.seed, rngmod.STREAM)
        self.discarded = self.emitted = 0

    def __iter__(self):
        return self

    def __next__(self):
        while True:
            alpha = np.asarray(self.sampler(self._rng), dtype=float)
            if np.any(alpha != 0.0):
                break
            self.discarded += 1
        self.emitted += 1
        return alpha, float(alpha @ self.x_star)

    def take(self, count):
        return [next(self) for _ in range(count)]


def make_gaussian_stream(x_star, covariance, seed=0):
    """Gaussian ``alpha ~ N(0, covariance)`` with ``beta = alpha^T x_star``.

    The covariance must be symmetric positive definite.
    """
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    C = np.array(covariance, dtype=float, ndmin=2)
    d = x_star.shape[0]
    if C.shape != (d, d):
        raise DimensionError(f"covariance has shape {C.shape}, expected ({d}, {d})")
    if not np.allclose(C, C.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise SpecError("covariance must be symmetric", "covariance")
    lam, Q = np.linalg.eigh(C)
    if not lam[0] > 0.0:
        raise SpecError(f"covariance is not positive definite (lambda_min={lam[0]:.3e})", "covariance")
    root = Q * np.sqrt(lam)

    def sampler(rng):
        return root @ rng.standard_normal(d)

    return StreamingSource(x_star, sampler, second_moment=C, seed=seed)


class ReplaySource:
    """Replays pairs from a CSV file with rows ``alpha_1,...,alpha_d,beta``."""

    def __init__(self, path, x_star=None):
        self.path = path
        self.pairs = read_stream(path)
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.discarded = 0
        self._pos = 0

    @property
    def d(self):
        return self.pairs[0][0].shape[0]

    def reset(self):
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self):
        while self._pos < len(self.pairs):
            alpha, beta = self.pairs[self._pos]
            self._pos += 1
            if np.any(alpha != 0.0):
                return alpha, beta
            self.discarded += 1
        raise StopIteration


def record_stream(source, count, path):
    """Draw ``count`` pairs from ``source`` and write them as CSV."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        for alpha, beta in source.take(count):
            wr.writerow([repr(float(a)) for a in alpha] + [repr(float(beta))])


def read_stream(path):
    pairs = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise FormatError("non-numeric stream entry", lineno, path) from None
            if len(vals) < 2:
                raise FormatError("a stream row needs alpha and beta", lineno, path)
            if pairs and len(vals) != pairs[0][0].shape[0] + 1:
                raise FormatError("inconsistent row length", lineno, path)
            pairs.append((np.asarray(vals[:-1]), vals[-1]))
    if not pairs:
        raise FormatError("stream file holds no rows", None, path)
    return pairs


def solve_streaming(source, x0=None, budget=10_000, tol=1e-8, x_star=None):
    """Consume pairs until ``||x_k - x*|| <= tol (1 + ||x*||)`` or ``budget``
    pairs have been used.

    ``x*`` defaults to the source's ``x_star``; the trace's ``norm_y`` is
    ``||x_k - x*||`` and ``norm_residual`` the absolute residual
    ``|beta_k - alpha_k^T x_k|`` of the pair consumed at step ``k``.
    """
    if budget < 1:
        raise SpecError("budget must be >= 1", "budget")
    x_star = getattr(source, "x_star", None) if x_star is None else np.asarray(x_star, dtype=float)
    if x_star is None:
        raise SpecError("solve_streaming needs a reference solution x_star", "x_star")
    x = np.zeros_like(x_star) if x0 is None else np.array(x0, dtype=float)
    if x.shape != x_star.shape:
        raise DimensionError(f"x0 has shape {x.shape}, expected {x_star.shape}")
    trace = SolveTrace(mode=Mode.ROW, strategy="stream", x_star=x_star)
    stop = tol * (1.0 + float(np.linalg.norm(x_star)))
    k = 0
    while True:
        err = float(np.linalg.norm(x - x_star))
        trace.norm_y.append(err)
        if err <= stop:
            trace.status = "converged"
            break
        if k >= budget:
            break
        try:
            alpha, beta = next(source)
        except StopIteration:
            trace.status = "source-exhausted"
            break
        res = float(beta) - float(alpha @ x)
        trace.norm_residual.append(abs(res))
        trace.chi.append(int(abs(res) > 0.0))
        trace.selected.append(k)
        x = streaming_step(x, alpha, beta)
        k += 1
    trace.norm_residual.append(float("nan"))
    trace.iterations = k
    trace.final_x = x
    trace.stats["discarded"] = int(getattr(source, "discarded", 0))
    return trace
