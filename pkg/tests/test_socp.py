"""Cone solver tests against brute-force and active-set references."""

import numpy as np
import pytest

from gcmpc.socp import ConeProgram, SolveResult, solve

from oracles import active_set_qp, grid_search_cone


def random_qp(rng, n, m):
    """Random strictly convex QP with 0 strictly feasible."""
    M = rng.normal(size=(n, n))
    P = M.T @ M + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.1, 1.5, size=m)     # Av<=b holds strictly at v=0
    return P, q, A, b


class TestBasics:
    def test_active_bound(self):
        # min v^2 subject to v >= 1
        prog = ConeProgram(P=[[2.0]], q=[0.0], A_in=[[-1.0]], b_in=[-1.0])
        res = solve(prog)
        assert res.status == "optimal"
        assert res.z[0] == pytest.approx(1.0, abs=1e-8)
        assert res.objective == pytest.approx(1.0, abs=1e-8)

    def test_unconstrained(self):
        rng = np.random.default_rng(0)
        M = rng.normal(size=(4, 4))
        P = M.T @ M + np.eye(4)
        q = rng.normal(size=4)
        prog = ConeProgram(P=P, q=q, A_in=np.zeros((0, 4)), b_in=np.zeros(0))
        res = solve(prog)
        np.testing.assert_allclose(res.z, np.linalg.solve(P, -q), atol=1e-9)

    def test_infeasible(self):
        # v <= -1 and v >= 1
        prog = ConeProgram(P=[[2.0]], q=[0.0],
                           A_in=[[1.0], [-1.0]], b_in=[-1.0, -1.0])
        res = solve(prog)
        assert res.status == "infeasible"

    def test_rejects_negative_coupling(self):
        with pytest.raises(ValueError):
            ConeProgram(P=[[1.0]], q=[0.0], A_in=[[1.0]], b_in=[1.0],
                        cones=[(np.eye(1), np.zeros(1))],
                        coupling=[[-1.0]])

    def test_simple_soc(self):
        # min (v-2)^2 s.t. |v| <= 1 written through an epigraph row
        prog = ConeProgram(
            P=[[2.0]], q=[-4.0],
            A_in=[[0.0]], b_in=[1.0],
            cones=[(np.eye(1), np.zeros(1))],
            coupling=[[1.0]],
        )
        res = solve(prog)
        assert res.status == "optimal"
        assert res.z[0] == pytest.approx(1.0, abs=1e-7)


class TestAgainstActiveSet:
    def test_random_qps(self):
        rng = np.random.default_rng(42)
        for k in range(50):
            n = rng.integers(2, 8)
            m = rng.integers(1, 3 * n)
            P, q, A, b = random_qp(rng, int(n), int(m))
            res = solve(ConeProgram(P=P, q=q, A_in=A, b_in=b))
            assert res.status == "optimal", f"case {k}"
            x_ref = active_set_qp(P, q, A, b, np.zeros(int(n)))
            obj_ref = 0.5 * x_ref @ P @ x_ref + q @ x_ref
            assert res.objective == pytest.approx(obj_ref, abs=1e-8, rel=1e-8)
            np.testing.assert_allclose(res.z, x_ref, atol=1e-6)

    def test_wide_scale_spread(self):
        # cost scales spanning many orders of magnitude (the application has
        # weights from 1e-10 to 1e6); equilibration must keep this solvable
        rng = np.random.default_rng(7)
        scales = np.array([1e-8, 1.0, 1e6])
        P = np.diag(scales)
        q = rng.normal(size=3) * scales
        A = rng.normal(size=(4, 3))
        b = rng.uniform(0.5, 2.0, size=4)
        res = solve(ConeProgram(P=P, q=q, A_in=A, b_in=b))
        assert res.status == "optimal"
        x_ref = active_set_qp(P, q, A, b, np.zeros(3))
        obj_ref = 0.5 * x_ref @ P @ x_ref + q @ x_ref
        assert res.objective == pytest.approx(obj_ref, rel=1e-7, abs=1e-10)


class TestAgainstGridOracle:
    def test_soc_programs(self):
        rng = np.random.default_rng(9)
        for k in range(20):
            n = 2
            P = np.diag(rng.uniform(0.5, 2.0, size=n)) * 2
            q = rng.normal(size=n)
            # box plus one coupled-norm row
            A = np.vstack([np.eye(n), -np.eye(n), rng.normal(size=(1, n))])
            b = np.r_[np.full(2 * n, 2.0), rng.uniform(1.0, 2.0)]
            D = rng.normal(size=(2, n))
            d = rng.normal(size=2) * 0.3
            coupling = np.zeros((b.size, 1))
            coupling[-1, 0] = rng.uniform(0.2, 1.0)
            prog = ConeProgram(P=P, q=q, A_in=A, b_in=b, cones=[(D, d)],
                               coupling=coupling)
            res = solve(prog)
            assert res.status == "optimal", f"case {k}"
            points = 641
            h = 4.0 / (points - 1)
            obj_grid, _ = grid_search_cone(P, q, A, b, [(D, d)], coupling,
                                           np.full(n, -2.0), np.full(n, 2.0), points)
            # solver must not be beaten by any feasible grid point, and must
            # be within the grid's own resolution of the best one
            assert obj_grid >= res.objective - 1e-7
            assert obj_grid - res.objective <= 5.0 * h

    def test_four_var_single_cone(self):
        rng = np.random.default_rng(11)
        n = 4
        P = 2 * np.eye(n)
        q = rng.normal(size=n)
        A = np.vstack([np.eye(n), -np.eye(n), rng.normal(size=(1, n))])
        b = np.r_[np.full(2 * n, 1.5), 1.0]
        D = rng.normal(size=(2, n)) * 0.5
        d = rng.normal(size=2) * 0.2
        coupling = np.zeros((b.size, 1))
        coupling[-1, 0] = 0.7
        prog = ConeProgram(P=P, q=q, A_in=A, b_in=b, cones=[(D, d)], coupling=coupling)
        res = solve(prog)
        assert res.status == "optimal"
        points = 31                      # ~9.2e5 grid candidates
        h = 3.0 / (points - 1)
        obj_grid, _ = grid_search_cone(P, q, A, b, [(D, d)], coupling,
                                       np.full(n, -1.5), np.full(n, 1.5), points)
        assert obj_grid >= res.objective - 1e-7
        assert obj_grid - res.objective <= 5.0 * h


class TestContracts:
    def test_kkt_residuals_on_optimal(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            P, q, A, b = random_qp(rng, 5, 8)
            res = solve(ConeProgram(P=P, q=q, A_in=A, b_in=b))
            assert res.status == "optimal"
            assert res.kkt_max <= 1e-6

    def test_objective_recompute(self):
        rng = np.random.default_rng(4)
        P, q, A, b = random_qp(rng, 6, 10)
        res = solve(ConeProgram(P=P, q=q, A_in=A, b_in=b))
        assert res.objective == pytest.approx(
            0.5 * res.z @ P @ res.z + q @ res.z, abs=1e-12)

    def test_no_constraint_violation(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            P, q, A, b = random_qp(rng, 4, 12)
            res = solve(ConeProgram(P=P, q=q, A_in=A, b_in=b))
            assert np.max(A @ res.z - b) <= 1e-8

    def test_warm_start_matches_cold(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            P, q, A, b = random_qp(rng, 4, 6)
            prog = ConeProgram(P=P, q=q, A_in=A, b_in=b)
            cold = solve(prog)
            warm = solve(prog, warm_start=cold.z + rng.normal(size=4) * 0.1)
            assert cold.status == warm.status == "optimal"
            assert warm.objective == pytest.approx(cold.objective, abs=1e-7, rel=1e-7)
            np.testing.assert_allclose(warm.z, cold.z, atol=1e-5)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        P, q, A, b = random_qp(rng, 5, 9)
        D = rng.normal(size=(2, 5))
        coupling = np.zeros((9, 1))
        coupling[0, 0] = 0.5
        prog = ConeProgram(P=P, q=q, A_in=A, b_in=b,
                           cones=[(D, np.zeros(2))], coupling=coupling)
        r1 = solve(prog)
        r2 = solve(prog)
        assert np.array_equal(r1.z, r2.z)
        assert r1.objective == r2.objective

    def test_uncoupled_cone_is_ignored(self):
        rng = np.random.default_rng(10)
        P, q, A, b = random_qp(rng, 3, 5)
        base = solve(ConeProgram(P=P, q=q, A_in=A, b_in=b))
        with_cone = solve(ConeProgram(
            P=P, q=q, A_in=A, b_in=b,
            cones=[(rng.normal(size=(2, 3)), rng.normal(size=2))],
            coupling=np.zeros((5, 1))))
        np.testing.assert_allclose(with_cone.z, base.z, atol=1e-9)
