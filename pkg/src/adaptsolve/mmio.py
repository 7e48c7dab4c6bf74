"""Matrix Market and plain-text vector I/O.

A small hand-rolled reader is used instead of ``scipy.io.mmread`` so that
parse failures can name the offending line.
"""
import numpy as np
import scipy.sparse as sp

from .errors import FormatError

_FIELDS = {"real", "integer", "double", "pattern"}
_SYMMETRIES = {"general", "symmetric", "skew-symmetric"}


def _data_lines(fh):
    for lineno, raw in enumerate(fh, start=2):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        yield lineno, line


def _parse_number(token, lineno, path):
    try:
        return float(token)
    except ValueError:
        raise FormatError(f"cannot parse number {token!r}", lineno, path) from None


def _parse_index(token, bound, lineno, path):
    try:
        i = int(token)
    except ValueError:
        raise FormatError(f"cannot parse index {token!r}", lineno, path) from None
    if not 1 <= i <= bound:
        raise FormatError(f"index {i} outside 1..{bound}", lineno, path)
    return i - 1


def read_matrix_market(path):
    """Read a real Matrix Market file into a CSR matrix.

    Both ``coordinate`` and ``array`` layouts are accepted, with
    ``general``, ``symmetric`` or ``skew-symmetric`` symmetry.
    Explicitly stored zeros are kept in the sparsity pattern.
    """
    with open(path) as fh:
        header = fh.readline()
        parts = header.strip().split()
        if len(parts) != 5 or parts[0].lower() != "%%matrixmarket":
            raise FormatError("missing %%MatrixMarket banner", 1, path)
        obj, layout, field, symmetry = (p.lower() for p in parts[1:])
        if obj != "matrix":
            raise FormatError(f"unsupported object {obj!r}", 1, path)
        if layout not in ("coordinate", "array"):
            raise FormatError(f"unsupported format {layout!r}", 1, path)
        if field not in _FIELDS:
            raise FormatError(f"unsupported field {field!r}", 1, path)
        if symmetry not in _SYMMETRIES:
            raise FormatError(f"unsupported symmetry {symmetry!r}", 1, path)
        if layout == "array" and field == "pattern":
            raise FormatError("pattern field requires coordinate format", 1, path)

        lines = _data_lines(fh)
        try:
            lineno, size_line = next(lines)
        except StopIteration:
            raise FormatError("missing size line", None, path) from None
        size = size_line.split()
        want = 3 if layout == "coordinate" else 2
        if len(size) != want:
            raise FormatError(f"size line needs {want} integers", lineno, path)
        try:
            dims = [int(s) for s in size]
        except ValueError:
            raise FormatError("size line must hold integers", lineno, path) from None
        n, d = dims[0], dims[1]
        if n <= 0 or d <= 0:
            raise FormatError("matrix dimensions must be positive", lineno, path)
        if symmetry != "general" and n != d:
            raise FormatError(f"{symmetry} matrix must be square", lineno, path)

        rows, cols, vals = [], [], []
        if layout == "coordinate":
            nnz = dims[2]
            count = 0
            for lineno, line in lines:
                tok = line.split()
                expected = 2 if field == "pattern" else 3
                if len(tok) != expected:
                    raise FormatError(f"expected {expected} fields, got {len(tok)}", lineno, path)
                i = _parse_index(tok[0], n, lineno, path)
                j = _parse_index(tok[1], d, lineno, path)
                v = 1.0 if field == "pattern" else _parse_number(tok[2], lineno, path)
                if symmetry != "general" and j > i:
                    raise FormatError("symmetric storage must be lower triangular", lineno, path)
                rows.append(i)
                cols.append(j)
                vals.append(v)
                count += 1
                if count > nnz:
                    raise FormatError(f"more than {nnz} entries", lineno, path)
            if count != nnz:
                raise FormatError(f"expected {nnz} entries, found {count}", None, path)
        else:
            if symmetry == "general":
                slots = [(i, j) for j in range(d) for i in range(n)]
            else:
                lo = 0 if symmetry == "symmetric" else 1
                slots = [(i, j) for j in range(d) for i in range(j + lo, n)]
            pos = 0
            for lineno, line in lines:
                for tok in line.split():
                    if pos >= len(slots):
                        raise FormatError(f"more than {len(slots)} values", lineno, path)
                    i, j = slots[pos]
                    rows.append(i)
                    cols.append(j)
                    vals.append(_parse_number(tok, lineno, path))
                    pos += 1
            if pos != len(slots):
                raise FormatError(f"expected {len(slots)} values, found {pos}", None, path)

    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    if symmetry != "general":
        off = rows != cols
        sign = -1.0 if symmetry == "skew-symmetric" else 1.0
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, sign * vals[off]]),
        )
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, d)).tocsr()
    A.sum_duplicates()
    return A


def write_matrix_market(path, A, layout="coordinate", comment=None):
    """Write ``A`` (dense or sparse) as a real ``general`` Matrix Market file.

    Values are written with ``repr`` so a read reproduces them exactly.
    """
    if layout not in ("coordinate", "array"):
        raise ValueError(f"unknown layout {layout!r}")
    n, d = A.shape
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix {layout} real general\n")
        if comment:
            for line in str(comment).splitlines():
                fh.write(f"% {line}\n")
        if layout == "array":
            dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
            fh.write(f"{n} {d}\n")
            for v in dense.ravel(order="F"):
                fh.write(f"{float(v)!r}\n")
        else:
            coo = sp.coo_matrix(A)
            coo.sum_duplicates()
            fh.write(f"{n} {d} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_vector(path):
    """Read a plain-text vector: whitespace-separated reals, ``#`` comments."""
    values = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            for tok in line.split():
                values.append(_parse_number(tok, lineno, path))
    if not values:
        raise FormatError("vector file holds no values", None, path)
    return np.asarray(values, dtype=float)


def write_vector(path, v, comment=None):
    with open(path, "w") as fh:
        if comment:
            for line in str(comment).splitlines():
                fh.write(f"# {line}\n")
        for x in np.asarray(v, dtype=float):
            fh.write(f"{float(x)!r}\n")
