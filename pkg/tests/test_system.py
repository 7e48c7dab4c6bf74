import logging

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from adaptsolve.errors import (
    DimensionError,
    FormatError,
    InconsistentSystemError,
    OracleUnavailableError,
    SpecError,
)
from adaptsolve.mmio import read_matrix_market, read_vector, write_matrix_market, write_vector
from adaptsolve.system import (
    GeneratorSpec,
    LinearSystem,
    generate_system,
    load_system,
    nullspace_projector,
    project_onto_solution_set,
    residual,
    write_system,
)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestLoad:
    def test_one_by_one(self, tmp_path):
        m = _write(tmp_path, "a.mtx", "%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 2\n")
        r = _write(tmp_path, "b.txt", "4\n")
        s = load_system(m, r)
        assert (s.n, s.d) == (1, 1)
        assert s.A[0, 0] == 2.0 and s.b[0] == 4.0

    def test_identity_array_format(self, tmp_path):
        m = _write(tmp_path, "a.mtx", "%%MatrixMarket matrix array real general\n2 2\n1\n0\n0\n1\n")
        r = _write(tmp_path, "b.txt", "# rhs\n1\n1\n")
        s = load_system(m, r)
        np.testing.assert_array_equal(s.A, np.eye(2))
        assert s.consistency_verified

    def test_inconsistent(self, tmp_path):
        m = _write(tmp_path, "a.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n2 1 1\n")
        r = _write(tmp_path, "b.txt", "1 2\n")
        with pytest.raises(InconsistentSystemError) as exc:
            load_system(m, r)
        assert exc.value.residual == pytest.approx(1 / np.sqrt(2))

    def test_format_error_names_line(self, tmp_path):
        m = _write(
            tmp_path, "a.mtx", "%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1\n2 x 1\n"
        )
        r = _write(tmp_path, "b.txt", "1 2\n")
        with pytest.raises(FormatError) as exc:
            load_system(m, r)
        assert exc.value.line == 5

    def test_dimension_mismatch(self, tmp_path):
        m = _write(tmp_path, "a.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n2 2 1\n")
        r = _write(tmp_path, "b.txt", "1 2 3\n")
        with pytest.raises(DimensionError):
            load_system(m, r)

    def test_symmetric_expands(self, tmp_path):
        m = _write(
            tmp_path, "a.mtx", "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2\n2 1 1\n"
        )
        A = read_matrix_market(m).toarray()
        np.testing.assert_array_equal(A, [[2, 1], [1, 0]])

    def test_bad_banner(self, tmp_path):
        m = _write(tmp_path, "a.mtx", "hello\n")
        with pytest.raises(FormatError) as exc:
            read_matrix_market(m)
        assert exc.value.line == 1

    def test_wrong_entry_count(self, tmp_path):
        m = _write(tmp_path, "a.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n")
        with pytest.raises(FormatError):
            read_matrix_market(m)

    def test_index_out_of_range(self, tmp_path):
        m = _write(tmp_path, "a.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n")
        with pytest.raises(FormatError) as exc:
            read_matrix_market(m)
        assert exc.value.line == 3

    def test_empty_vector(self, tmp_path):
        with pytest.raises(FormatError):
            read_vector(_write(tmp_path, "b.txt", "# nothing\n"))

    def test_oversized_accepted_unverified(self, tmp_path, caplog, monkeypatch):
        import adaptsolve.system as S

        monkeypatch.setattr(S, "ORACLE_LIMIT", 3)
        m = _write(tmp_path, "a.mtx", "%%MatrixMarket matrix array real general\n2 2\n1\n0\n0\n1\n")
        r = _write(tmp_path, "b.txt", "1 5\n")
        with caplog.at_level(logging.WARNING):
            s = S.load_system(m, r)
        assert not s.consistency_verified
        assert "unverified" in caplog.text


class TestLinearSystem:
    def test_zero_matrix_rejected(self):
        with pytest.raises(SpecError):
            LinearSystem(np.zeros((2, 2)), np.zeros(2))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            LinearSystem(np.eye(2), np.ones(3))

    def test_immutable(self):
        s = LinearSystem(np.eye(2), np.ones(2))
        with pytest.raises(ValueError):
            s.A[0, 0] = 5.0
        with pytest.raises(Exception):
            s.b = np.zeros(2)

    def test_large_is_sparse(self, monkeypatch):
        import adaptsolve.system as S

        monkeypatch.setattr(S, "DENSE_LIMIT", 3)
        s = S.LinearSystem(np.eye(2), np.ones(2))
        assert s.is_sparse
        np.testing.assert_array_equal(s.col(1), [0, 1])
        np.testing.assert_array_equal(s.row(0), [1, 0])
        np.testing.assert_array_equal(s.col_norms2, [1, 1])

    def test_dense_oracle_limit(self, monkeypatch):
        import adaptsolve.system as S

        s = S.LinearSystem(np.eye(2), np.ones(2))
        monkeypatch.setattr(S, "ORACLE_LIMIT", 3)
        with pytest.raises(OracleUnavailableError):
            s.dense()


class TestResidual:
    def test_identity(self):
        s = LinearSystem(np.eye(2), [1.0, 2.0])
        np.testing.assert_array_equal(residual(s, [0.0, 0.0]), [1, 2])

    def test_hand(self):
        s = LinearSystem([[1, 0], [1, 1]], [1.0, 2.0])
        np.testing.assert_array_equal(residual(s, [1.0, 0.0]), [0, 1])

    def test_exact_solution(self):
        s, x = generate_system(GeneratorSpec("random-consistent", 8, 5, seed=1))
        assert np.linalg.norm(residual(s, x)) < 1e-12

    def test_wrong_length(self):
        with pytest.raises(DimensionError):
            residual(LinearSystem(np.eye(2), [1.0, 2.0]), [1.0])


class TestProjection:
    def test_fixes_solutions(self):
        s, x = generate_system(GeneratorSpec("rank-deficient", 6, 6, rank=3, seed=0))
        x0 = project_onto_solution_set(s, np.zeros(6))
        np.testing.assert_allclose(project_onto_solution_set(s, x0), x0, atol=1e-12)

    def test_underdetermined_by_hand(self):
        s = LinearSystem([[1.0, 0.0]], [3.0])
        np.testing.assert_allclose(project_onto_solution_set(s, [0.0, 5.0]), [3.0, 5.0])

    def test_unique_solution(self):
        s = LinearSystem(np.eye(2), [1.0, 2.0])
        np.testing.assert_allclose(project_onto_solution_set(s, [7.0, -3.0]), [1.0, 2.0])

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
    def test_idempotent_and_orthogonal(self, seed, n, d):
        r = min(n, d)
        s, _ = generate_system(GeneratorSpec("rank-deficient", n, d, rank=max(1, r - 1), seed=seed))
        x0 = np.random.default_rng(seed).standard_normal(d)
        x1 = project_onto_solution_set(s, x0)
        x2 = project_onto_solution_set(s, x1)
        scale = 1 + np.linalg.norm(x1)
        assert np.linalg.norm(x2 - x1) <= 1e-10 * scale
        assert np.linalg.norm(s.A @ x1 - s.b) <= 1e-9 * (1 + np.linalg.norm(s.b))
        null = nullspace_projector(s)
        assert np.linalg.norm(null(x1 - x0)) <= 1e-10 * scale


class TestGenerator:
    def test_four_orthogonal_rows(self):
        s, _ = generate_system(GeneratorSpec("block-orthogonal", 4, 4, num_blocks=4))
        G = s.A @ s.A.T
        assert np.allclose(G - np.diag(np.diag(G)), 0.0, atol=1e-12)

    def test_deterministic(self):
        a, xa = generate_system(GeneratorSpec("random-consistent", 20, 10, seed=42))
        b, xb = generate_system(GeneratorSpec("random-consistent", 20, 10, seed=42))
        assert np.array_equal(a.A, b.A) and np.array_equal(a.b, b.b) and np.array_equal(xa, xb)

    def test_rank_deficient(self):
        s, _ = generate_system(GeneratorSpec("rank-deficient", 10, 10, rank=3, seed=0))
        sv = np.linalg.svd(s.A, compute_uv=False)
        assert sv[3] / sv[0] < 1e-10 < sv[2] / sv[0]
        assert s.rank == 3 == s.rank_hint

    def test_infeasible(self):
        with pytest.raises(SpecError) as exc:
            GeneratorSpec("block-orthogonal", 3, 5, num_blocks=4)
        assert exc.value.parameter == "num_blocks"
        with pytest.raises(SpecError):
            GeneratorSpec("nope", 3, 3)
        with pytest.raises(SpecError):
            GeneratorSpec("rank-deficient", 3, 3, rank=4)

    def test_parse(self):
        spec = GeneratorSpec.parse("block-orthogonal:n=25,d=25,blocks=5", seed=3)
        assert spec == GeneratorSpec("block-orthogonal", 25, 25, num_blocks=5, seed=3)
        with pytest.raises(SpecError) as exc:
            GeneratorSpec.parse("grouped:n=4,d=2,colour=3")
        assert exc.value.parameter == "colour"

    def test_grouped_contiguous_near_equal(self):
        s, _ = generate_system(GeneratorSpec("grouped", 10, 4, num_groups=3))
        labels = s.row_labels
        assert list(labels) == sorted(labels)
        sizes = np.bincount(labels)
        assert sizes.max() - sizes.min() <= 1 and len(sizes) == 3

    @given(
        st.integers(0, 2**32 - 1),
        st.integers(1, 12),
        st.integers(1, 12),
        st.sampled_from(["random-consistent", "block-orthogonal", "grouped", "rank-deficient"]),
    )
    def test_consistent_by_construction(self, seed, n, d, kind):
        k = min(n, d)
        spec = GeneratorSpec(
            kind,
            n,
            d,
            num_blocks=k if kind == "block-orthogonal" else None,
            num_groups=k if kind == "grouped" else None,
            rank=k if kind == "rank-deficient" else None,
            seed=seed,
        )
        s, x = generate_system(spec)
        assert np.linalg.norm(s.A @ x - s.b) <= 1e-12 * (1 + np.linalg.norm(s.b))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 10), st.data())
    def test_block_structure(self, seed, n, d, data):
        k = data.draw(st.integers(1, min(n, d)))
        s, _ = generate_system(GeneratorSpec("block-orthogonal", n, d, num_blocks=k, seed=seed))
        A, lab = s.A, s.row_labels
        norms = np.linalg.norm(A, axis=1)
        G = A @ A.T
        for i in range(n):
            for j in range(n):
                bound = 1e-12 * norms[i] * norms[j]
                if lab[i] == lab[j]:
                    assert abs(abs(G[i, j]) - norms[i] * norms[j]) <= bound * 10
                else:
                    assert abs(G[i, j]) <= bound


class TestMatrixMarket:
    @given(
        st.integers(1, 6),
        st.integers(1, 6),
        st.integers(0, 2**32 - 1),
        st.sampled_from(["coordinate", "array"]),
    )
    def test_round_trip_exact(self, n, d, seed, layout):
        import tempfile, os

        rng = np.random.default_rng(seed)
        A = rng.standard_normal((n, d)) * (rng.random((n, d)) < 0.6)
        with tempfile.TemporaryDirectory() as tmp:
            p = os.path.join(tmp, "a.mtx")
            write_matrix_market(p, A, layout=layout, comment="round trip")
            B = read_matrix_market(p).toarray()
        assert np.array_equal(A, B)

    def test_sparse_round_trip(self, tmp_path):
        A = sp.random(30, 20, density=0.1, random_state=1, format="csr")
        p = str(tmp_path / "a.mtx")
        write_matrix_market(p, A)
        assert (read_matrix_market(p) != A).nnz == 0

    def test_vector_round_trip(self, tmp_path):
        v = np.random.default_rng(0).standard_normal(7)
        p = str(tmp_path / "v.txt")
        write_vector(p, v, comment="rhs")
        assert np.array_equal(read_vector(p), v)

    def test_write_system_round_trip(self, tmp_path):
        s, _ = generate_system(GeneratorSpec("random-consistent", 5, 3, seed=2))
        m, r = str(tmp_path / "A.mtx"), str(tmp_path / "b.txt")
        write_system(s, m, r)
        t = load_system(m, r)
        assert np.array_equal(t.A, s.A) and np.array_equal(t.b, s.b)
