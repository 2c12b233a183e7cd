#!/usr/bin/env python3
"""
Tests for the convex QP solver, its backward pass and the active-set oracle.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.models.errors import Infeasible, NotConvex, StaleSolution, TooLarge
from src.solvers.qp_solver import (
    QpProblem, QpSolution, active_set_oracle, backward_qp, dump_problem, kkt_residual, solve_qp,
)
from src.utils.helpers import max_relative_error


def random_convex_qp(rng, n, m, p):
    """Random strictly feasible convex QP."""
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    x0 = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    h = G @ x0 + rng.uniform(0.1, 1.0, size=m)
    A = rng.normal(size=(p, n))
    b = A @ x0
    return QpProblem.create(Q, q, G, h, A, b)


def planted_qp(rng, n=5, m=3, p=1, n_active=2):
    """QP whose optimum, active set and multipliers are known and strictly complementary."""
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.5 * np.eye(n)
    x_star = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    slack = np.where(np.arange(m) < n_active, 0.0, rng.uniform(0.2, 1.0, size=m))
    lam = np.where(np.arange(m) < n_active, rng.uniform(0.2, 1.0, size=m), 0.0)
    h = G @ x_star + slack
    A = rng.normal(size=(p, n))
    b = A @ x_star
    nu = rng.normal(size=p)
    q = -(Q @ x_star + G.T @ lam + A.T @ nu)
    return QpProblem.create(Q, q, G, h, A, b), x_star


def check_certificate(problem, solution, tol=1e-8):
    res = kkt_residual(problem, solution.xstar, solution.lambdastar, solution.nustar, solution.ridge)
    assert res.max <= tol
    assert np.all(solution.lambdastar >= -1e-8)
    assert np.all(problem.Gineq @ solution.xstar - problem.hineq <= 1e-8)


def test_unconstrained_stationary_point():
    """Without constraints the optimum solves Qx + q = 0."""
    problem = QpProblem.create(2 * np.eye(2), [-2.0, -2.0])
    solution = solve_qp(problem)
    np.testing.assert_allclose(solution.xstar, [1.0, 1.0], atol=1e-10)


def test_equality_split_and_multiplier():
    """Symmetry forces an equal split; the multiplier is -1."""
    problem = QpProblem.create(2 * np.eye(2), [0.0, 0.0], A=[[1.0, 1.0]], b=[1.0])
    solution = solve_qp(problem)
    np.testing.assert_allclose(solution.xstar, [0.5, 0.5], atol=1e-9)
    np.testing.assert_allclose(solution.nustar, [-1.0], atol=1e-8)


def test_inequality_example_matches_oracle():
    """Box-and-budget example reaches (0, 1) for both solver and oracle."""
    problem = QpProblem.create(2 * np.eye(2), [-1.0, -3.0],
                               G=[[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], h=[1.0, 0.0, 0.0])
    solution = solve_qp(problem)
    oracle = active_set_oracle(problem)
    np.testing.assert_allclose(solution.xstar, [0.0, 1.0], atol=1e-7)
    np.testing.assert_allclose(oracle.xstar, [0.0, 1.0], atol=1e-10)
    check_certificate(problem, solution)


def test_oracle_reproduces_solver_examples():
    problems = [
        QpProblem.create(2 * np.eye(2), [-2.0, -2.0]),
        QpProblem.create(2 * np.eye(2), [0.0, 0.0], A=[[1.0, 1.0]], b=[1.0]),
    ]
    for problem in problems:
        np.testing.assert_allclose(active_set_oracle(problem).xstar, solve_qp(problem).xstar, atol=1e-8)


def test_simplex_projection():
    """Projecting (2, 0) onto the probability simplex gives (1, 0)."""
    problem = QpProblem.create(np.eye(2), [-2.0, 0.0], G=-np.eye(2), h=np.zeros(2),
                               A=[[1.0, 1.0]], b=[1.0])
    np.testing.assert_allclose(active_set_oracle(problem).xstar, [1.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(solve_qp(problem).xstar, [1.0, 0.0], atol=1e-8)


def test_infeasible_budget():
    """Row sum 1 cannot be met with both entries at most 0.2."""
    problem = QpProblem.create(np.eye(2), [0.0, 0.0], G=np.eye(2), h=[0.2, 0.2],
                               A=[[1.0, 1.0]], b=[1.0])
    with pytest.raises(Infeasible):
        active_set_oracle(problem)
    with pytest.raises(Infeasible):
        solve_qp(problem)


def test_inconsistent_equalities():
    problem = QpProblem.create(np.eye(2), [0.0, 0.0], A=[[1.0, 1.0], [2.0, 2.0]], b=[1.0, 3.0])
    with pytest.raises(Infeasible):
        solve_qp(problem)


def test_redundant_equality_rows_are_dropped():
    problem = QpProblem.create(2 * np.eye(2), [0.0, 0.0], A=[[1.0, 1.0], [2.0, 2.0]], b=[1.0, 2.0])
    solution = solve_qp(problem)
    assert len(solution.eq_rows) == 1
    assert solution.nustar.shape == (2,)
    np.testing.assert_allclose(solution.xstar, [0.5, 0.5], atol=1e-9)


def test_indefinite_matrix_is_ridge_repaired():
    Q = np.diag([1.0, -0.5])
    problem = QpProblem.create(Q, [0.0, 0.0], G=-np.eye(2), h=np.zeros(2), A=[[1.0, 1.0]], b=[1.0])
    solution = solve_qp(problem)
    assert solution.ridge == pytest.approx(0.5 + 1e-8)
    check_certificate(problem, solution)


def test_non_finite_matrix_is_not_convex():
    problem = QpProblem.create(np.array([[np.nan, 0.0], [0.0, 1.0]]), [0.0, 0.0])
    with pytest.raises(NotConvex):
        solve_qp(problem)


def test_oracle_size_limit():
    problem = QpProblem.create(np.eye(13), np.zeros(13))
    with pytest.raises(TooLarge):
        active_set_oracle(problem)


@pytest.mark.slow
def test_interior_point_matches_oracle_on_random_problems():
    """Interior point and enumeration agree on 200 random convex QPs."""
    for seed in range(200):
        rng = np.random.default_rng(seed)
        problem = random_convex_qp(rng, n=int(rng.integers(1, 7)), m=int(rng.integers(0, 7)),
                                   p=int(rng.integers(0, 3)))
        solution = solve_qp(problem)
        oracle = active_set_oracle(problem)
        assert np.max(np.abs(solution.xstar - oracle.xstar)) <= 1e-5, f"seed {seed}"
        assert solution.kkt_residual <= 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), factor=st.floats(0.1, 100.0))
def test_scaling_cost_keeps_minimizer(seed, factor):
    problem = random_convex_qp(np.random.default_rng(seed), n=4, m=3, p=1)
    base = solve_qp(problem)
    scaled = solve_qp(problem.scaled(factor))
    assert np.max(np.abs(base.xstar - scaled.xstar)) <= 1e-7


def test_backward_unconstrained_identity():
    """With Q = I, x* = -q so dL/dq = -dL/dx."""
    rng = np.random.default_rng(3)
    problem = QpProblem.create(np.eye(3), rng.normal(size=3))
    g = rng.normal(size=3)
    grads = backward_qp(problem, solve_qp(problem), g)
    np.testing.assert_allclose(grads.dq, -g, atol=1e-12)


def test_backward_equality_budget():
    """min 1/2 x^T x s.t. sum(x) = b0 has dx/db0 = 1/4 in every coordinate."""
    problem = QpProblem.create(np.eye(4), np.zeros(4), A=np.ones((1, 4)), b=[2.0])
    g = np.array([1.0, -2.0, 0.5, 3.0])
    grads = backward_qp(problem, solve_qp(problem), g)
    np.testing.assert_allclose(grads.db, [g.mean()], atol=1e-10)
    np.testing.assert_allclose(grads.dQ, grads.dQ.T, atol=1e-14)


def test_backward_rejects_stale_solution():
    problem = QpProblem.create(np.eye(2), [1.0, 1.0])
    stale = QpSolution(xstar=np.zeros(2), lambdastar=np.zeros(0), nustar=np.zeros(0),
                       kkt_residual=0.0, iterations=0)
    with pytest.raises(StaleSolution):
        backward_qp(problem, stale, np.ones(2))


def finite_difference_gradients(problem, g, step=1e-5):
    """Central differences of L = g^T x*(theta) with respect to every datum."""
    names = ("Qmat", "qvec", "Gineq", "hineq", "Aeq", "beq")
    result = {}
    for name in names:
        base = getattr(problem, name)
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            values = []
            for sign in (1.0, -1.0):
                data = {k: getattr(problem, k).copy() for k in names}
                data[name][idx] += sign * step
                perturbed = QpProblem(**data)
                values.append(g @ solve_qp(perturbed, tol=1e-10).xstar)
            grad[idx] = (values[0] - values[1]) / (2 * step)
        result[name] = grad
    return result


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    """Every datum gradient agrees with central differences on planted QPs."""
    rng = np.random.default_rng(100 + seed)
    problem, x_star = planted_qp(rng)
    solution = solve_qp(problem, tol=1e-10)
    np.testing.assert_allclose(solution.xstar, x_star, atol=1e-8)
    g = rng.normal(size=problem.n)
    grads = backward_qp(problem, solution, g)
    assert not grads.degenerate

    fd = finite_difference_gradients(problem, g)
    pairs = {"Qmat": grads.dQ, "qvec": grads.dq, "Gineq": grads.dG,
             "hineq": grads.dh, "Aeq": grads.dA, "beq": grads.db}
    for name, analytic in pairs.items():
        assert max_relative_error(analytic, fd[name]) <= 1e-4, name


def test_degenerate_constraint_is_flagged():
    """A constraint with zero multiplier and zero slack marks the gradients approximate."""
    problem = QpProblem.create(2 * np.eye(2), [-1.0, -3.0],
                               G=[[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], h=[1.0, 0.0, 0.0])
    solution = active_set_oracle(problem)
    grads = backward_qp(problem, solution, np.array([1.0, 0.0]))
    assert grads.degenerate
    assert all(np.all(np.isfinite(v)) for v in (grads.dQ, grads.dq, grads.dG, grads.dh))


def test_dump_problem_lists_every_block():
    problem = QpProblem.create(np.eye(2), [1.0, 2.0], G=-np.eye(2), h=np.zeros(2))
    text = dump_problem(problem)
    assert text.startswith("QpProblem n=2 m=2 p=0")
    for name in ("[Q]", "[q]", "[G]", "[h]", "[A]", "[b]"):
        assert name in text
    assert "(empty)" in text


if __name__ == "__main__":
    pytest.main([__file__])
