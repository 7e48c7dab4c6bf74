"""Consistent linear systems: representation, generation, I/O and the dense
SVD oracle used by diagnostics."""
from dataclasses import dataclass, field
from functools import cached_property
import logging

import numpy as np
import scipy.sparse as sp

from . import rng as rngmod
from .errors import (
    DimensionError,
    InconsistentSystemError,
    OracleUnavailableError,
    SpecError,
)
from .mmio import read_matrix_market, read_vector, write_matrix_market, write_vector

log = logging.getLogger(__name__)

DENSE_LIMIT = 10**6   # n*d above this is stored as CSR
ORACLE_LIMIT = 10**6  # n*d above this has no SVD oracle
EPS_CONSIST = 1e-8
EPS_RANK = 1e-10


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """An immutable system ``A x = b``.

    ``A`` is a dense ``ndarray`` when ``n*d <= DENSE_LIMIT`` and a CSR matrix
    otherwise; pass either, it is converted.  ``row_labels`` optionally tags
    each row with a block or group id (set by the structured generators).
    """

    A: object
    b: np.ndarray
    rank_hint: int | None = None
    row_labels: np.ndarray | None = None
    consistency_verified: bool = True

    def __post_init__(self):
        A = self.A
        if sp.issparse(A):
            n, d = A.shape
            A = A.toarray() if n * d <= DENSE_LIMIT else sp.csr_matrix(A, dtype=float)
        else:
            A = np.array(A, dtype=float, ndmin=2)
            if A.ndim != 2:
                raise DimensionError(f"A must be a matrix, got shape {A.shape}")
            if A.size > DENSE_LIMIT:
                A = sp.csr_matrix(A)
        b = np.array(self.b, dtype=float).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise DimensionError(f"len(b) = {b.shape[0]} but A has {A.shape[0]} rows")
        nonzero = A.count_nonzero() if sp.issparse(A) else np.count_nonzero(A)
        if nonzero == 0:
            raise SpecError("coefficient matrix is identically zero")
        if isinstance(A, np.ndarray):
            A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.row_labels is not None:
            labels = np.asarray(self.row_labels, dtype=np.int64)
            if labels.shape != (A.shape[0],):
                raise DimensionError("row_labels must have one entry per row")
            labels.setflags(write=False)
            object.__setattr__(self, "row_labels", labels)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.A.shape[1]

    @property
    def shape(self):
        return self.A.shape

    @property
    def is_sparse(self):
        return sp.issparse(self.A)

    @cached_property
    def csc(self):
        """Column-sliceable companion view, built once."""
        return sp.csc_matrix(self.A) if self.is_sparse else None

    @cached_property
    def row_norms2(self):
        if self.is_sparse:
            out = np.asarray(self.A.multiply(self.A).sum(axis=1)).ravel()
        else:
            out = np.einsum("ij,ij->i", self.A, self.A)
        out.setflags(write=False)
        return out

    @cached_property
    def col_norms2(self):
        if self.is_sparse:
            out = np.asarray(self.A.multiply(self.A).sum(axis=0)).ravel()
        else:
            out = np.einsum("ij,ij->j", self.A, self.A)
        out.setflags(write=False)
        return out

    @cached_property
    def b_norm(self):
        return float(np.linalg.norm(self.b))

    def matvec(self, x):
        return self.A @ x

    def rmatvec(self, r):
        return self.A.T @ r

    def row(self, i):
        if self.is_sparse:
            lo, hi = self.A.indptr[i], self.A.indptr[i + 1]
            out = np.zeros(self.d)
            out[self.A.indices[lo:hi]] = self.A.data[lo:hi]
            return out
        return self.A[i]

    def col(self, j):
        if self.is_sparse:
            C = self.csc
            lo, hi = C.indptr[j], C.indptr[j + 1]
            out = np.zeros(self.n)
            out[C.indices[lo:hi]] = C.data[lo:hi]
            return out
        return self.A[:, j]

    def dense(self):
        if self.n * self.d > ORACLE_LIMIT:
            raise OracleUnavailableError(
                f"dense oracle limited to n*d <= {ORACLE_LIMIT}, got {self.n * self.d}"
            )
        return self.A.toarray() if self.is_sparse else np.asarray(self.A)

    @cached_property
    def svd(self):
        """Thin SVD oracle ``(U_r, s_r, Vt_r, null_basis)`` truncated at EPS_RANK."""
        A = self.dense()
        U, s, Vt = np.linalg.svd(A, full_matrices=True)
        r = int(np.sum(s > EPS_RANK * s[0]))
        null = Vt[r:].T.copy()
        return U[:, :r], s[:r], Vt[:r], null

    @property
    def rank(self):
        return len(self.svd[1])


def residual(system, x):
    """``b - A x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (system.d,):
        raise DimensionError(f"x has shape {x.shape}, expected ({system.d},)")
    return system.b - system.matvec(x)


def least_squares_residual(A, b):
    """``min_x ||A x - b||`` via a dense least-squares solve."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return float(np.linalg.norm(A @ x - b))


def check_consistency(A, b, eps=EPS_CONSIST):
    res = least_squares_residual(A, b)
    if res > eps * (1.0 + np.linalg.norm(b)):
        raise InconsistentSystemError(
            f"system is inconsistent: least-squares residual {res:.3e}", residual=res
        )
    return res


def project_onto_solution_set(system, x0):
    """Projection of ``x0`` onto ``{x : A x = b}``: ``x0 + A^+ (b - A x0)``."""
    U, s, Vt, _ = system.svd
    r = residual(system, x0)
    return np.asarray(x0, dtype=float) + Vt.T @ ((U.T @ r) / s)


def nullspace_projector(system):
    """Return a function mapping ``x`` to its component in ``null(A)``."""
    null = system.svd[3]
    return lambda x: null @ (null.T @ x)


def load_system(matrix_path, rhs_path):
    """Read ``A`` from Matrix Market and ``b`` from a text vector, then
    validate dimensions and consistency."""
    A = read_matrix_market(matrix_path)
    b = read_vector(rhs_path)
    if b.shape[0] != A.shape[0]:
        raise DimensionError(f"rhs has {b.shape[0]} entries but matrix has {A.shape[0]} rows")
    n, d = A.shape
    verified = n * d <= ORACLE_LIMIT
    if verified:
        check_consistency(A, b)
    else:
        log.warning("system too large for consistency check (n*d=%d); accepted unverified", n * d)
    return LinearSystem(A, b, consistency_verified=verified)


def write_system(system, matrix_path, rhs_path, layout="coordinate"):
    write_matrix_market(matrix_path, system.A, layout=layout)
    write_vector(rhs_path, system.b)


GENERATOR_KINDS = ("random-consistent", "block-orthogonal", "grouped", "rank-deficient")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int
    d: int
    num_blocks: int | None = None
    num_groups: int | None = None
    rank: int | None = None
    seed: int = 0

    _ALIASES = {"blocks": "num_blocks", "groups": "num_groups", "g": "num_groups"}

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise SpecError(f"unknown generator kind {self.kind!r}", "kind")
        if self.n < 1 or self.d < 1:
            raise SpecError("n and d must be positive", "n" if self.n < 1 else "d")
        if self.kind == "block-orthogonal":
            k = self.num_blocks
            if k is None or k < 1:
                raise SpecError("block-orthogonal needs num_blocks >= 1", "num_blocks")
            if k > self.n or k > self.d:
                raise SpecError(f"num_blocks={k} exceeds min(n, d)", "num_blocks")
        if self.kind == "grouped":
            g = self.num_groups
            if g is None or not 1 <= g <= self.n:
                raise SpecError("grouped needs 1 <= num_groups <= n", "num_groups")
        if self.kind == "rank-deficient":
            r = self.rank
            if r is None or not 1 <= r <= min(self.n, self.d):
                raise SpecError("rank-deficient needs 1 <= rank <= min(n, d)", "rank")

    @classmethod
    def parse(cls, text, seed=None):
        """Parse ``kind:key=value,...``, e.g. ``block-orthogonal:n=4,d=4,blocks=4``."""
        kind, _, rest = text.partition(":")
        kwargs = {}
        for item in filter(None, rest.split(",")):
            key, eq, value = item.partition("=")
            if not eq:
                raise SpecError(f"malformed parameter {item!r}", item)
            key = cls._ALIASES.get(key.strip(), key.strip())
            if key not in ("n", "d", "num_blocks", "num_groups", "rank", "seed"):
                raise SpecError(f"unknown generator parameter {key!r}", key)
            try:
                kwargs[key] = int(value)
            except ValueError:
                raise SpecError(f"parameter {key} must be an integer", key) from None
        if seed is not None and "seed" not in kwargs:
            kwargs["seed"] = seed
        for req in ("n", "d"):
            if req not in kwargs:
                raise SpecError(f"generator spec missing {req}", req)
        return cls(kind=kind.strip(), **kwargs)


def _near_equal_slices(total, parts):
    bounds = np.linspace(0, total, parts + 1).round().astype(int)
    return [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]


def generate_system(spec):
    """Generate a consistent system and its planted solution ``x_true``."""
    g = rngmod.stream(spec.seed, rngmod.GENERATOR, spec.kind)
    n, d = spec.n, spec.d
    labels = None
    rank = None
    if spec.kind == "random-consistent":
        A = g.standard_normal((n, d))
        rank = min(n, d)
    elif spec.kind == "rank-deficient":
        rank = spec.rank
        A = g.standard_normal((n, rank)) @ g.standard_normal((rank, d))
    elif spec.kind == "grouped":
        A = g.standard_normal((n, d))
        rank = min(n, d)
        labels = np.empty(n, dtype=np.int64)
        for k, s in enumerate(_near_equal_slices(n, spec.num_groups)):
            labels[s] = k
    else:
        # disjoint column supports make blocks exactly orthogonal
        A = np.zeros((n, d))
        labels = np.empty(n, dtype=np.int64)
        row_parts = _near_equal_slices(n, spec.num_blocks)
        col_parts = _near_equal_slices(d, spec.num_blocks)
        for k, (rs, cs) in enumerate(zip(row_parts, col_parts)):
            rep = g.standard_normal(cs.stop - cs.start)
            count = rs.stop - rs.start
            scale = g.choice([-1.0, 1.0], size=count) * g.uniform(0.5, 1.5, size=count)
            A[rs, cs] = scale[:, None] * rep[None, :]
            labels[rs] = k
        rank = spec.num_blocks
    x_true = g.standard_normal(d)
    b = A @ x_true
    return LinearSystem(A, b, rank_hint=rank, row_labels=labels), x_true
