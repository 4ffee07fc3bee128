"""Solver tests against closed-form optima and an independent oracle."""

import numpy as np
import pytest

from chwplan.qp import QPConvergenceError, solve_qp


def test_scalar_clipped_minimum():
    # min (1/2)x^2 - x on [0, 0.5]: unconstrained optimum 1 clips to 0.5
    res = solve_qp(np.array([[1.0]]), np.array([-1.0]),
                   np.array([[1.0]]), np.array([0.0]), np.array([0.5]))
    assert res.status == "solved"
    assert res.x[0] == pytest.approx(0.5, abs=1e-5)
    assert res.objective == pytest.approx(0.5 * 0.25 - 0.5, abs=1e-5)


def test_symmetric_equality_split():
    # min (1/2)|x|^2 subject to x1 + x2 = 1 -> (0.5, 0.5) by symmetry
    res = solve_qp(np.eye(2), np.zeros(2),
                   np.array([[1.0, 1.0]]), np.array([1.0]), np.array([1.0]))
    assert res.x == pytest.approx([0.5, 0.5], abs=1e-5)


def test_box_projection_matches_clip():
    # with P=I, q=-v, A=I the optimum is the euclidean projection of v
    rng = np.random.default_rng(42)
    for _ in range(5):
        v = rng.normal(0, 2, size=6)
        lo = rng.uniform(-1, 0, size=6)
        hi = lo + rng.uniform(0.1, 2, size=6)
        res = solve_qp(np.eye(6), -v, np.eye(6), lo, hi)
        assert res.status == "solved"
        assert res.x == pytest.approx(np.clip(v, lo, hi), abs=5e-5)


def test_equality_constrained_kkt_oracle():
    # independent oracle: solve the KKT system [[P, E'], [E, 0]] directly
    rng = np.random.default_rng(7)
    for _ in range(5):
        n, meq = 5, 2
        G = rng.normal(size=(n, n))
        P = G @ G.T + n * np.eye(n)
        q = rng.normal(size=n)
        E = rng.normal(size=(meq, n))
        d = rng.normal(size=meq)
        kkt = np.block([[P, E.T], [E, np.zeros((meq, meq))]])
        expected = np.linalg.solve(kkt, np.concatenate([-q, d]))[:n]
        res = solve_qp(P, q, E, d, d)
        assert res.x == pytest.approx(expected, abs=1e-4)


def test_random_feasible_boxes_match_slsqp():
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(11)
    for _ in range(4):
        n, m = 4, 6
        G = rng.normal(size=(n, n))
        P = G @ G.T + np.eye(n)
        q = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        x0 = rng.normal(size=n)
        slack = rng.uniform(0.05, 1.0, size=m)
        lo, hi = A @ x0 - slack, A @ x0 + slack

        res = solve_qp(P, q, A, lo, hi)
        assert res.status == "solved"
        assert np.all(A @ res.x >= lo - 1e-5)
        assert np.all(A @ res.x <= hi + 1e-5)

        ref = scipy_opt.minimize(
            lambda x: 0.5 * x @ P @ x + q @ x,
            x0,
            jac=lambda x: P @ x + q,
            method="SLSQP",
            constraints=[
                {"type": "ineq", "fun": lambda x: A @ x - lo, "jac": lambda x: A},
                {"type": "ineq", "fun": lambda x: hi - A @ x, "jac": lambda x: -A},
            ],
            options={"maxiter": 500, "ftol": 1e-12},
        )
        assert ref.success
        assert res.objective == pytest.approx(ref.fun, abs=5e-4, rel=5e-4)


def test_one_sided_rows_and_unbounded_side():
    # min (x-3)^2 + (y+2)^2 with x <= 1, y >= 0 -> (1, 0)
    P = 2 * np.eye(2)
    q = np.array([-6.0, 4.0])
    A = np.eye(2)
    lo = np.array([-np.inf, 0.0])
    hi = np.array([1.0, np.inf])
    res = solve_qp(P, q, A, lo, hi)
    assert res.x == pytest.approx([1.0, 0.0], abs=1e-5)


def test_unconstrained_problem():
    res = solve_qp(2 * np.eye(2), np.array([-2.0, 2.0]), np.zeros((0, 2)),
                   np.zeros(0), np.zeros(0))
    assert res.x == pytest.approx([1.0, -1.0], abs=1e-5)
    assert res.primal_residual == 0.0


def test_contradictory_rows_detected_infeasible():
    # x >= 1 and x <= 0 cannot both hold
    res = solve_qp(np.array([[1.0]]), np.zeros(1),
                   np.array([[1.0], [1.0]]),
                   np.array([1.0, -np.inf]), np.array([np.inf, 0.0]))
    assert res.status == "primal_infeasible"
    assert res.x is None
    # the certificate direction itself: A'y ~ 0 with negative support
    e = res.y
    assert abs(e[0] + e[1]) <= 1e-6
    assert 1.0 * min(e[0], 0) + 0.0 * max(e[1], 0) < 0


def test_crossed_bounds_rejected():
    with pytest.raises(ValueError):
        solve_qp(np.eye(1), np.zeros(1), np.eye(1), np.array([1.0]), np.array([0.0]))


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        solve_qp(np.eye(2), np.zeros(3), np.eye(2), np.zeros(2), np.ones(2))


def test_iteration_budget_error_carries_count():
    with pytest.raises(QPConvergenceError) as exc:
        solve_qp(np.eye(2), np.array([-1.0, 2.0]),
                 np.array([[1.0, 1.0]]), np.array([1.0]), np.array([1.0]),
                 max_iterations=1)
    assert exc.value.iterations == 1
    assert exc.value.primal_residual >= 0.0


def test_solver_is_deterministic():
    rng = np.random.default_rng(3)
    G = rng.normal(size=(5, 5))
    P = G @ G.T + np.eye(5)
    q = rng.normal(size=5)
    A = rng.normal(size=(8, 5))
    x0 = rng.normal(size=5)
    lo, hi = A @ x0 - 0.5, A @ x0 + 0.5
    a = solve_qp(P, q, A, lo, hi)
    b = solve_qp(P, q, A, lo, hi)
    assert np.array_equal(a.x, b.x)
    assert a.iterations == b.iterations
