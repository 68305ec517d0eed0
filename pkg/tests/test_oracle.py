import numpy as np
import pytest

from obstacle_ocp.errors import InvalidArgument, OracleInapplicable
from obstacle_ocp.fem import assemble_operator, build_structured_mesh
from obstacle_ocp.ocp import OCPProblem, path_follow
from obstacle_ocp.oracle import enumerate_vi, fd_directional, lq_kkt_solve
from obstacle_ocp.scenarios import biactive_instance, lq
from obstacle_ocp.vi import directional_derivative, solve_vi

MESH4 = build_structured_mesh(4)
OP4 = assemble_operator(MESH4)


def test_enumeration_trivial_cases():
    res = enumerate_vi(OP4, np.zeros(9), -1.0)
    assert res.active_set.size == 0 and np.all(res.y == 0)
    res = enumerate_vi(OP4, -np.ones(9), 0.0)
    assert res.active_set.tolist() == list(range(9))
    assert np.allclose(res.xi, MESH4.m)
    assert res.sets_tried == 512 and res.feasible_sets >= 1


def test_enumeration_cap():
    op = assemble_operator(build_structured_mesh(5))
    with pytest.raises(InvalidArgument):
        enumerate_vi(op, np.zeros(16), -1.0)


def test_enumeration_complementarity(rng):
    for _ in range(10):
        u = rng.normal(0, 2, 9)
        ya = rng.uniform(-0.1, 0.05, 9)
        res = enumerate_vi(OP4, u, MESH4.extend(ya))
        dens = res.xi / MESH4.m
        assert np.abs(np.minimum(dens, res.y - ya)).max() <= 1e-12
        assert np.abs(OP4.matrix @ res.y - MESH4.m * u - res.xi).max() <= 1e-12


def test_enumeration_degenerate_instance_unique():
    # biactive nodes make several active sets feasible; all give one solution
    r = np.random.default_rng(5)
    u, ya, bi, strict = biactive_instance(r, OP4, n_bi=2, n_strict=1)
    res = enumerate_vi(OP4, u, MESH4.extend(ya))
    assert res.feasible_sets >= 2
    assert np.array_equal(np.sort(res.active_set), np.sort(strict))


def test_fd_inactive_exact():
    u = np.ones(9)
    h = np.random.default_rng(0).normal(size=9)
    lim, q = fd_directional(OP4, u, -1.0, h)
    exact = np.linalg.solve(OP4.matrix.toarray(), MESH4.m * h)
    assert np.abs(q - exact).max() <= 1e-9
    assert np.abs(lim - exact).max() <= 1e-9


def test_fd_strictly_active_zero():
    lim, q = fd_directional(OP4, -np.ones(9), 0.0, np.ones(9))
    assert np.abs(q[-3:]).max() <= 1e-12


def test_fd_bad_steps():
    with pytest.raises(InvalidArgument):
        fd_directional(OP4, np.zeros(9), -1.0, np.ones(9), t_list=(1e-3, 1e-2))


def test_fd_matches_derivative_biactive():
    mesh = build_structured_mesh(8)
    op = assemble_operator(mesh)
    r = np.random.default_rng(11)
    for _ in range(5):
        u, ya, bi, _ = biactive_instance(r, op)
        sol = solve_vi(op, u, mesh.extend(ya))
        assert set(bi) <= set(sol.biactive)
        h = r.normal(size=mesh.n_interior)
        z = directional_derivative(op, sol, h).interior_values
        lim, _ = fd_directional(op, u, mesh.extend(ya), h)
        assert np.abs(z - lim).max() <= 1e-7


def test_lq_zero_target():
    op = assemble_operator(build_structured_mesh(6))
    pr = OCPProblem.create(op, -1e9, 1e9, 0.0)
    u, y, p = lq_kkt_solve(pr)
    assert np.all(u == 0) and np.all(y == 0) and np.all(p == 0)


def test_lq_residuals():
    problem, _ = lq(12)
    u, y, p = lq_kkt_solve(problem)
    K, m = problem.operator.matrix, problem.mesh.m
    assert np.abs(u).max() > 1e-3
    assert np.abs(K @ y - m * u).max() <= 1e-12
    assert np.abs(K.T @ p + m * (y - problem.y_d)).max() <= 1e-12
    assert np.abs((problem.alpha + 1) * u - problem.u_ref - p).max() <= 1e-12


def test_lq_inapplicable():
    op = assemble_operator(build_structured_mesh(8))
    pr = OCPProblem.create(op, -1e9, 0.001, 1.0)
    with pytest.raises(OracleInapplicable):
        lq_kkt_solve(pr)


def test_lq_matches_path():
    problem, schedule = lq(12)
    u_star, _, _ = lq_kkt_solve(problem)
    u = path_follow(problem, schedule).final.u.interior_values
    assert np.sqrt(np.sum(problem.mesh.m * (u - u_star) ** 2)) <= 1e-8
