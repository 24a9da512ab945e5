import numpy as np
import pytest

from epikeedmd.errors import InvalidQP
from epikeedmd.qp import INF, SOLVED, QPProblem, solve_qp
from qp_oracle import certify, enumerate_box_qp, random_box_qp, solve_box_qp


def test_clipped_scalar():
    sol = solve_qp(QPProblem([[2.0]], [-2.0], [[1.0]], [0.0], [0.5]))
    assert sol.status == SOLVED and sol.x[0] == pytest.approx(0.5, abs=1e-6)


def test_unconstrained_matches_linear_solve():
    rng = np.random.default_rng(11)
    M = rng.standard_normal((6, 6))
    P = M @ M.T + 0.1 * np.eye(6)
    q = rng.standard_normal(6)
    sol = solve_qp(QPProblem(P, q, np.eye(6), np.full(6, -INF), np.full(6, INF)))
    assert np.max(np.abs(sol.x + np.linalg.solve(P, q))) <= 1e-6


def test_inverted_bounds_rejected_at_construction():
    with pytest.raises(InvalidQP):
        QPProblem([[1.0]], [0.0], [[1.0]], [1.0], [0.0])
    with pytest.raises(InvalidQP):
        QPProblem([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0], np.eye(2), [0, 0], [1, 1])


def test_oracle_self_consistency():
    rng = np.random.default_rng(0)
    for d in (2, 5, 8):
        P, q, lo, hi = random_box_qp(rng, d)
        x = enumerate_box_qp(P, q, lo, hi)
        assert certify(P, q, lo, hi, x)


@pytest.mark.parametrize("seed", range(10))
def test_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 20))
    P, q, lo, hi = random_box_qp(rng, d)
    sol = solve_qp(QPProblem(P, q, np.eye(d), lo, hi))
    assert sol.status == SOLVED
    assert np.max(np.abs(sol.x - solve_box_qp(P, q, lo, hi))) <= 1e-5


def test_warm_start_agrees_with_cold():
    rng = np.random.default_rng(3)
    P, q, lo, hi = random_box_qp(rng, 12)
    prob = QPProblem(P, q, np.eye(12), lo, hi)
    cold = solve_qp(prob)
    prob2 = QPProblem(P, q + 0.01, np.eye(12), lo, hi)
    warm = solve_qp(prob2, warm=cold)
    assert np.max(np.abs(warm.x - solve_qp(prob2).x)) <= 1e-6


def test_primal_infeasible_detected():
    # x >= 1 and x <= 0 written as two rows of a general constraint matrix
    sol = solve_qp(QPProblem([[1.0]], [0.0], [[1.0], [1.0]], [1.0, -INF], [INF, 0.0]))
    assert sol.status == "PrimalInfeasible"


def test_deterministic():
    rng = np.random.default_rng(4)
    P, q, lo, hi = random_box_qp(rng, 15)
    a = solve_qp(QPProblem(P, q, np.eye(15), lo, hi))
    b = solve_qp(QPProblem(P, q, np.eye(15), lo, hi))
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations
