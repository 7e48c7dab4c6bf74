from itertools import combinations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from adaptsolve import diagnostics as D
from adaptsolve.engine import SolveConfig, UnifiedView, solve
from adaptsolve.errors import DegenerateDirectionError, DiagnosticsViolation, EnumerationBudgetError
from adaptsolve.strategies import parse_strategy
from adaptsolve.system import GeneratorSpec, LinearSystem, generate_system

seeds = st.integers(0, 2**32 - 1)


def brute_min_det(vectors):
    """Independent oracle: ``min det(H^T H)`` over every maximal linearly
    independent subset, via ``matrix_rank`` and ``np.linalg.det``."""
    U = [v / np.linalg.norm(v) for v in vectors]
    r = np.linalg.matrix_rank(np.column_stack(U), tol=1e-9)
    best = np.inf
    for combo in combinations(range(len(U)), r):
        H = np.column_stack([U[i] for i in combo])
        if np.linalg.matrix_rank(H, tol=1e-9) == r:
            best = min(best, np.linalg.det(H.T @ H))
    return best


def counterexample():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    return [a, b, a], np.array([1.0, 1.0, 1.0])


class TestChi:
    def test_zero_y(self):
        assert D.chi(UnifiedView(np.eye(2), np.zeros(2)), [1.0, 0.0]).value == 0

    def test_orthogonal(self):
        assert D.chi(UnifiedView(np.eye(2), np.array([1.0, 0.0])), [0.0, 1.0]).value == 0

    def test_score(self):
        f = D.chi(UnifiedView(np.eye(2), np.array([1.0, 1.0])), [1.0, 0.0])
        assert f.value == 1 and f.score == pytest.approx(1 / np.sqrt(2))

    def test_degenerate(self):
        with pytest.raises(DegenerateDirectionError):
            D.chi(UnifiedView(np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones(2)), [0.0, 1.0])


class TestSubspace:
    def test_contained_column(self):
        B, _ = D.extend_subspace(D.SubspaceBasis(2), [3.0, 0.0])
        B2, contained = D.extend_subspace(B, [1.0, 0.0])
        assert contained and B2.dimension == 1

    def test_normalizes(self):
        B, contained = D.extend_subspace(D.SubspaceBasis(2), [3.0, 0.0])
        assert not contained
        np.testing.assert_allclose(B.Q[:, 0], [1.0, 0.0])

    def test_gram_schmidt(self):
        B, _ = D.extend_subspace(D.SubspaceBasis(2), [1.0, 0.0])
        B2, contained = D.extend_subspace(B, [1.0, 1.0])
        assert not contained
        np.testing.assert_allclose(B2.Q[:, 1], [0.0, 1.0], atol=1e-15)
        assert B.dimension == 1

    def test_zero_vector(self):
        B, contained = D.extend_subspace(D.SubspaceBasis(3), np.zeros(3))
        assert contained and B.dimension == 0

    @given(seeds, st.integers(1, 8), st.integers(1, 12))
    def test_orthonormal_columns(self, seed, dim, count):
        rng = np.random.default_rng(seed)
        B = D.SubspaceBasis(dim)
        for _ in range(count):
            v = rng.standard_normal(dim) * 10.0 ** rng.integers(-3, 4)
            if rng.random() < 0.3 and B.dimension:
                v = B.Q @ rng.standard_normal(B.dimension)
            B.extend(v)
        assert B.dimension <= dim
        np.testing.assert_allclose(B.Q.T @ B.Q, np.eye(B.dimension), atol=1e-12)


class TestGram:
    def test_orthonormal(self):
        assert D.gram_determinant(list(np.eye(3))) == pytest.approx(1.0)

    def test_45_degrees(self):
        u = np.array([1.0, 0.0])
        v = np.array([1.0, 1.0]) / np.sqrt(2)
        assert D.gram_determinant([u, v]) == pytest.approx(0.5)

    def test_duplicates(self):
        u, v = np.array([1.0, 0.0, 0.0]), np.array([1.0, 2.0, 0.0])
        assert D.gram_determinant([u, u, v]) == pytest.approx(D.gram_determinant([u, v]))

    def test_empty(self):
        with pytest.raises(ValueError):
            D.gram_determinant([])

    @given(seeds, st.integers(1, 6), st.integers(1, 6))
    def test_matches_determinant_oracle(self, seed, k, dim):
        rng = np.random.default_rng(seed)
        V = rng.standard_normal((k, dim))
        U = V / np.linalg.norm(V, axis=1, keepdims=True)
        got = D.gram_determinant(list(V))
        if k <= dim:
            want = np.linalg.det(U @ U.T)
            assert abs(got - want) <= 1e-10
        assert 0.0 <= got <= 1.0 + 1e-12


class TestWorstCase:
    def test_identity(self):
        assert D.worst_case_gamma(list(np.eye(4))) == pytest.approx(0.0, abs=1e-15)

    def test_45_degrees(self):
        assert D.worst_case_gamma([[1.0, 0.0], [1.0, 1.0]]) == pytest.approx(0.5)

    @given(seeds)
    def test_matches_exhaustive_oracle(self, seed):
        A = np.random.default_rng(seed).standard_normal((5, 4))
        assert abs(D.worst_case_gamma(list(A)) - (1 - brute_min_det(list(A)))) <= 1e-10

    def test_budget(self):
        with pytest.raises(EnumerationBudgetError):
            D.worst_case_gamma(list(np.random.default_rng(0).standard_normal((13, 3))))

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            D.worst_case_gamma([[0.0, 0.0], [1.0, 0.0]])


class TestMeany:
    def test_orthonormal(self):
        rep = D.meany_check(list(np.eye(3)), np.array([1.0, -2.0, 0.5]))
        assert rep.left == pytest.approx(0.0, abs=1e-28) and rep.bound == pytest.approx(0.0, abs=1e-12)
        assert rep.holds

    def test_single_direction(self):
        rep = D.meany_check([np.array([0.0, 2.0])], np.array([0.0, -3.0]))
        assert rep.left == pytest.approx(0.0) and rep.holds

    @given(seeds, st.integers(1, 6), st.integers(1, 6))
    def test_bound_holds(self, seed, k, dim):
        rng = np.random.default_rng(seed)
        dirs = list(rng.standard_normal((k, dim)))
        if rng.random() < 0.3:
            dirs.append(dirs[0].copy())
        if rng.random() < 0.3 and k > 1:
            dirs.append(dirs[0] + dirs[1])
        y = np.column_stack(dirs) @ rng.standard_normal(len(dirs))
        assume(np.linalg.norm(y) > 1e-8)
        rep = D.meany_check(dirs, y)
        assert rep.in_span and rep.enumerated
        assert rep.min_det == pytest.approx(brute_min_det([d for d, c in zip(dirs, rep.chi) if c]), abs=1e-10)
        assert rep.left <= rep.bound + D.EPS_RATE

    def test_three_directions_in_r3(self):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            dirs = list(rng.standard_normal((3, 3)))
            y = rng.standard_normal(3)
            assert D.meany_check(dirs, y).holds


class TestStoppingTimes:
    def test_orthogonal_rows(self):
        s = LinearSystem([[1.0, 1.0], [1.0, -1.0]], [3.0, 1.0])
        tr = solve(s, "row", parse_strategy("cyclic"), SolveConfig(tol=0, max_iterations=2, trace_level="full-directions"))
        rep = D.detect_stopping_times(tr, s)
        seg = rep.segments[0]
        assert (seg.tau, seg.nu) == (0, 1)
        assert rep.taus[:2] == [0, 2]
        assert rep.norm_y_tau[1] == pytest.approx(0.0, abs=1e-14)
        assert seg.gamma == pytest.approx(0.0, abs=1e-14)

    def test_zero_error_segments(self):
        a = np.array([1.0, 1.0]) / np.sqrt(2)
        b = np.array([1.0, -1.0]) / np.sqrt(2)
        rep = D.stopping_times_from_path([a, b, a, b, a, b], np.array([2.0, -0.5]))
        tail = rep.segments[1:]
        assert tail and all(t.zero and t.gamma == 0.0 for t in tail)
        assert rep.taus == [0, 2, 3, 4, 5, 6]

    def test_needs_full_trace(self):
        s = LinearSystem(np.eye(2), np.ones(2))
        tr = solve(s, "row", parse_strategy("cyclic"))
        with pytest.raises(ValueError):
            D.detect_stopping_times(tr, s)

    def test_nu_rule_counterexample(self):
        dirs, y0 = counterexample()
        with pytest.raises(DiagnosticsViolation) as exc:
            D.stopping_times_from_path(dirs, y0)
        seg = exc.value.segment
        assert (seg.tau, seg.nu) == (0, 2)
        assert not seg.span_equal and not seg.independent
        ys = D.error_path(dirs, y0)
        np.testing.assert_allclose(ys[3], [0.0, 0.5, 1.0], atol=1e-15)

    def test_nu_rule_contraction_exceeds_gamma(self):
        dirs, y0 = counterexample()
        rep = D.stopping_times_from_path(dirs, y0, check=False)
        seg = rep.segments[0]
        assert seg.ratio_observed == pytest.approx(1.25 / 3)
        assert seg.gamma == pytest.approx(0.5)

    def test_span_rule_on_counterexample(self):
        dirs, y0 = counterexample()
        rep = D.stopping_times_from_path(dirs + [np.array([0.0, 0.0, 1.0])], y0, rule="span")
        seg = rep.segments[0]
        assert seg.structure_ok and seg.contraction_ok and seg.nu == 3

    def test_unknown_rule(self):
        dirs, y0 = counterexample()
        with pytest.raises(ValueError):
            D.stopping_times_from_path(dirs, y0, rule="other")

    @given(seeds, st.sampled_from(["iid", "cyclic", "greedy", "topm:m=3", "skm:sample=3", "sketch"]),
           st.sampled_from(["row", "column"]))
    def test_span_rule_contracts(self, seed, spec, mode):
        s, _ = generate_system(GeneratorSpec("random-consistent", 8, 4, seed=seed))
        tr = solve(s, mode, parse_strategy(spec), SolveConfig(max_iterations=80, seed=seed, trace_level="full-directions"))
        rep = D.detect_stopping_times(tr, s, rule="span", check=False)
        y0 = rep.norm_y0
        for seg, a, b in zip(rep.segments, rep.norm_y_tau, rep.norm_y_tau[1:]):
            assert 0.0 <= seg.gamma < 1.0 or seg.zero
            assert b**2 <= seg.gamma * a**2 + D.EPS_RATE * y0**2

    def test_mean_segment_length_iid(self):
        lengths = []
        for seed in range(100):
            s, _ = generate_system(GeneratorSpec("random-consistent", 5, 3, seed=seed))
            tr = solve(s, "row", parse_strategy("iid"), SolveConfig(max_iterations=300, seed=seed, trace_level="full-directions"))
            rep = D.detect_stopping_times(tr, s, check=False)
            lengths += [seg.nu + 1 for seg in rep.segments if not seg.zero]
        s, _ = generate_system(GeneratorSpec("random-consistent", 5, 3, seed=0))
        pi_hat = D.estimate_pi(parse_strategy("iid"), s, "row", trials=200, subspace_samples=20).pi_hat
        bound = 1 + 1 * 3 / pi_hat
        assert np.mean(lengths) <= bound + 3 * np.std(lengths) / np.sqrt(len(lengths))

    def test_report_json_fields(self):
        dirs, y0 = counterexample()
        d = D.stopping_times_from_path(dirs, y0, check=False).to_dict()
        assert set(d["segments"][0]) >= {"tau", "nu", "gamma", "det_G", "ratio_observed", "lemma42_ok"}


class TestEstimators:
    def test_iid_identity_window_probability(self):
        n = 4
        s = LinearSystem(np.eye(n), np.ones(n))
        V = np.eye(n)[:, :1]
        strat = parse_strategy("iid")
        f = D.window_orthogonality_frequency(strat, s, "row", V, V[:, 0], trials=4000)
        p = (n - 1) / n
        assert abs(f - p) <= 3 * np.sqrt(p * (1 - p) / 4000)

    def test_cyclic_orthogonal_rows_pi_one(self):
        s = LinearSystem(np.eye(3) * [1.0, 2.0, 3.0], np.ones(3))
        est = D.estimate_pi(parse_strategy("cyclic"), s, "row", trials=5, subspace_samples=30)
        assert est.N == 3 and est.pi_hat == 1.0 and not est.violations

    def test_greedy_column_no_violations(self):
        s, _ = generate_system(GeneratorSpec("random-consistent", 10, 6, seed=0))
        est = D.estimate_pi(parse_strategy("greedy:rule=colres"), s, "column", trials=5, subspace_samples=40)
        assert est.declared_pi == 1.0 and not est.violations

    def test_g_orthonormal(self):
        s = LinearSystem(np.eye(3), np.ones(3))
        assert D.estimate_g(parse_strategy("iid"), s, "row", trials=5, repeats=3) == pytest.approx(1.0)

    def test_g_sketch_positive(self):
        s, _ = generate_system(GeneratorSpec("random-consistent", 6, 3, seed=1))
        assert D.estimate_g(parse_strategy("sketch"), s, "row", trials=5, repeats=3) > 0.0

    def test_g_45_degrees_alternation(self):
        s = LinearSystem([[1.0, 0.0], [1.0, 1.0]], [1.0, 2.0])
        g = D.estimate_g(parse_strategy("cyclic"), s, "row", trials=10, repeats=2)
        assert g == pytest.approx(0.5)


class TestNullspaceDrift:
    def test_full_column_rank(self):
        s, _ = generate_system(GeneratorSpec("random-consistent", 8, 4, seed=0))
        tr = solve(s, "row", parse_strategy("iid"), SolveConfig(max_iterations=50, trace_level="full-directions"))
        assert D.nullspace_drift(s, tr) == 0.0

    def test_zero_rhs(self):
        s = LinearSystem(np.ones((2, 2)), np.zeros(2))
        x0 = np.array([1.0, -1.0])
        tr = solve(s, "row", parse_strategy("iid"), SolveConfig(trace_level="full-directions"), x0=x0)
        assert tr.converged and tr.iterations == 0
        np.testing.assert_array_equal(tr.final_x, x0)

    def test_column_trace_rejected(self):
        s = LinearSystem(np.eye(2), np.ones(2))
        tr = solve(s, "column", parse_strategy("iid"), SolveConfig(trace_level="full-directions"))
        with pytest.raises(ValueError):
            D.nullspace_drift(s, tr)
