import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csrsos.sdp import SdpProblem, SdpSettings, SdpStatus, certify, solve, tril_index

TOL = SdpSettings()


def _assert_certified(prob, sol, settings=TOL):
    """Recompute the residual invariants from the returned matrices only."""
    assert sol.ok
    x = np.zeros(prob.nvar)
    x[: prob.n_free] = sol.free
    for off, n, X in zip(prob.block_offsets, prob.block_dims, sol.blocks):
        assert np.allclose(X, X.T)
        assert np.linalg.eigvalsh(X)[0] >= -settings.eig_tol
        for j, (p, q) in enumerate(tril_index(n)):
            x[off + j] = X[p, q]
    assert np.max(np.abs(prob.A @ x - prob.b), initial=0.0) <= settings.feas_tol
    assert sol.gap <= settings.gap_tol * max(1.0, abs(sol.objective))


def test_trace_one_by_one():
    prob = SdpProblem.from_matrices([1], [[np.eye(1)]], [1.0], objective=[np.eye(1)])
    sol = solve(prob)
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert sol.blocks[0][0, 0] == pytest.approx(1.0, abs=1e-6)
    _assert_certified(prob, sol)


def test_negative_trace_infeasible():
    prob = SdpProblem.from_matrices([2], [[np.eye(2)]], [-1.0])
    assert solve(prob).status is SdpStatus.INFEASIBLE


def test_two_by_two_affine():
    # minimize x subject to [[x, 1], [1, x]] >= 0, written as X11 - X22 = 0, X21 = 1
    A1 = np.diag([1.0, -1.0])
    A2 = np.array([[0.0, 0.5], [0.5, 0.0]])
    C = np.diag([1.0, 0.0])
    prob = SdpProblem.from_matrices([2], [[A1], [A2]], [0.0, 1.0], objective=[C])
    sol = solve(prob)
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(sol.blocks[0], [[1, 1], [1, 1]], atol=1e-6)
    _assert_certified(prob, sol)


def test_free_variables():
    # minimize t subject to X = [[1, t], [t, 1]] >= 0 with t free: optimum t = -1
    A = [[np.array([[1.0, 0], [0, 0]])], [np.array([[0, 0], [0, 1.0]])],
         [np.array([[0, 0.5], [0.5, 0]])]]
    prob = SdpProblem.from_matrices([2], A, [1.0, 1.0, 0.0], n_free=1,
                                    free_constraints=[[0.0], [0.0], [-1.0]], free_objective=[1.0])
    sol = solve(prob)
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.free[0] == pytest.approx(-1.0, abs=1e-6)


def test_inconsistent_rows_infeasible():
    prob = SdpProblem.from_matrices([1], [[np.eye(1)], [np.eye(1)]], [1.0, 2.0])
    assert solve(prob).status is SdpStatus.INFEASIBLE


def test_redundant_rows_are_tolerated():
    A = np.eye(2)
    prob = SdpProblem.from_matrices([2], [[A], [2 * A], [A]], [1.0, 2.0, 1.0], objective=[np.eye(2)])
    sol = solve(prob)
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


def test_deterministic():
    rng = np.random.default_rng(7)
    prob = _random_feasible(rng, 3, 2)
    a, b = solve(prob), solve(prob)
    assert np.array_equal(a.blocks[0], b.blocks[0])
    assert a.objective == b.objective


def test_certify_flags_bad_point():
    prob = SdpProblem.from_matrices([1], [[np.eye(1)]], [1.0])
    cert = certify(prob, np.array([-2.0]))
    assert cert["primal_residual"] == pytest.approx(3.0)
    assert cert["min_eig"] == pytest.approx(-2.0)


def test_json_dump():
    prob = SdpProblem.from_matrices([2], [[np.eye(2)]], [1.0], objective=[np.eye(2)])
    d = json.loads(prob.to_json())
    assert d["block_dims"] == [2]
    assert sorted(t[:2] for t in d["A"]) == [[0, 0], [0, 2]]


def _random_feasible(rng, n, m):
    """min <C, X> with C positive definite and constraints satisfied by some X0 > 0."""
    C = rng.normal(size=(n, n))
    C = C @ C.T + 0.5 * np.eye(n)
    X0 = rng.normal(size=(n, n))
    X0 = X0 @ X0.T + np.eye(n)
    As = []
    for _ in range(m):
        A = rng.normal(size=(n, n))
        As.append(0.5 * (A + A.T))
    b = [float(np.sum(A * X0)) for A in As]
    return SdpProblem.from_matrices([n], [[A] for A in As], b, objective=[C])


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_objective_scaling(seed):
    rng = np.random.default_rng(seed)
    prob = _random_feasible(rng, 3, 2)
    double = SdpProblem(prob.block_dims, prob.n_free, prob.A, prob.b, 2 * prob.c)
    s1, s2 = solve(prob), solve(double)
    _assert_certified(prob, s1)
    assert s2.objective == pytest.approx(2 * s1.objective, rel=1e-6, abs=1e-9)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_min_eigenvalue_oracle(seed):
    # min <C, X> s.t. tr X = 1, X >= 0 equals the smallest eigenvalue of C
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(2, 2))
    C = 0.5 * (C + C.T)
    prob = SdpProblem.from_matrices([2], [[np.eye(2)]], [1.0], objective=[C])
    sol = solve(prob)
    _assert_certified(prob, sol)
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-4)
