"""
Acceptance criteria 1-10 at their stated tolerances.

Each test prints one ``PASS``/``FAIL`` line and appends it to the list shown
in the terminal summary.  Run directly with ``python3 tests/test_acceptance.py``.
"""
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from obstacle_ocp.fem import assemble_operator, build_structured_mesh, lumped_l2
from obstacle_ocp.ocp import path_follow, reduced_objective
from obstacle_ocp.oracle import enumerate_vi, fd_directional, lq_kkt_solve
from obstacle_ocp.scenarios import biactive_instance, lq, mixed, random_vi_instance, s1
from obstacle_ocp.stationarity import (check_b_stationarity, check_c_stationarity,
                                       check_strong_stationarity, normal_cone_certificate,
                                       normal_cone_vector, recover_multipliers)
from obstacle_ocp.vi import directional_derivative, solve_vi


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_01_oracle_equivalence():
    t0 = time.perf_counter()
    mesh = build_structured_mesh(4)
    op = assemble_operator(mesh)
    rng = np.random.default_rng(1)
    err, mismatched = 0.0, 0
    for _ in range(50):
        u, ya = random_vi_instance(rng, mesh)
        ref = enumerate_vi(op, u, mesh.extend(ya))
        sol = solve_vi(op, u, mesh.extend(ya))
        err = max(err, np.abs(sol.y.interior_values - ref.y).max())
        mismatched += not np.array_equal(sol.active, ref.active_set)
    dt = time.perf_counter() - t0
    record(1, "oracle equivalence", err <= 1e-10 and mismatched == 0 and dt <= 10,
           f"max |y - y*| = {err:.2e}, active-set mismatches = {mismatched}, {dt:.2f} s")


def test_02_vi_properties():
    t0 = time.perf_counter()
    mesh = build_structured_mesh(8)
    op = assemble_operator(mesh)
    n = mesh.n_interior
    rng = np.random.default_rng(2)
    S = lambda u, ya: solve_vi(op, u, mesh.extend(ya))
    worst = {"monotone": 0.0, "convex": 0.0, "tangent": 0.0, "sublinear": 0.0}
    for _ in range(100):
        u1, ya = random_vi_instance(rng, mesh)
        u2 = u1 + np.abs(rng.normal(0.0, 1.0, n))
        y1, y2 = S(u1, ya).y.values, S(u2, ya).y.values
        worst["monotone"] = max(worst["monotone"], (y1 - y2).max())

        u1, ya = random_vi_instance(rng, mesh)
        u2, _ = random_vi_instance(rng, mesh)
        a = rng.uniform(0.05, 0.95)
        ym = S(a * u1 + (1 - a) * u2, ya).y.values
        gap = ym - a * S(u1, ya).y.values - (1 - a) * S(u2, ya).y.values
        worst["convex"] = max(worst["convex"], gap.max())

        u, ya = random_vi_instance(rng, mesh)
        h = rng.normal(0.0, 1.0, n)
        sol = S(u, ya)
        d = directional_derivative(op, sol, h).values
        gap = sol.y.values + d - S(u + h, ya).y.values
        worst["tangent"] = max(worst["tangent"], gap.max())

        u, ya, _, _ = biactive_instance(rng, op)
        sol = S(u, ya)
        h1, h2 = rng.normal(0.0, 1.0, (2, n))
        d1 = directional_derivative(op, sol, h1).values
        d2 = directional_derivative(op, sol, h2).values
        d12 = directional_derivative(op, sol, h1 + h2).values
        worst["sublinear"] = max(worst["sublinear"], (d12 - d1 - d2).max())
    dt = time.perf_counter() - t0
    ok = all(v <= 1e-9 for v in worst.values()) and dt <= 60
    record(2, "VI property suite", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {dt:.1f} s")


def test_03_derivative_correctness():
    mesh = build_structured_mesh(8)
    op = assemble_operator(mesh)
    rng = np.random.default_rng(3)
    fd_err, hom_err = 0.0, 0.0
    for _ in range(10):
        u, ya, bi, _ = biactive_instance(rng, op)
        sol = solve_vi(op, u, mesh.extend(ya))
        assert set(bi) <= set(sol.biactive)
        h = rng.normal(0.0, 1.0, mesh.n_interior)
        z = directional_derivative(op, sol, h).interior_values
        lim, _ = fd_directional(op, u, mesh.extend(ya), h)
        fd_err = max(fd_err, np.abs(z - lim).max())
        for c in (0.5, 3.0):
            zc = directional_derivative(op, sol, c * h).interior_values
            hom_err = max(hom_err, np.abs(zc - c * z).max())
    record(3, "derivative correctness", fd_err <= 1e-7 and hom_err <= 1e-10,
           f"fd error {fd_err:.2e}, homogeneity error {hom_err:.2e}")


def test_04_lq_oracle():
    problem, schedule = lq(16)
    u_star, _, _ = lq_kkt_solve(problem)
    u = path_follow(problem, schedule).final.u.interior_values
    err = lumped_l2(problem.mesh, u - u_star)
    record(4, "LQ oracle", err <= 1e-8, f"||u - u*||_L2 = {err:.2e}")


def test_05_path_diagnostics():
    t0 = time.perf_counter()
    problem, schedule = s1(32)
    history = path_follow(problem, schedule)
    dt = time.perf_counter() - t0
    gap = history.column("penalty_gap")
    nu = history.column("nu_l1")
    rho = history.column("rho")
    g = history.column("gamma")
    nu_1e4 = nu[np.isclose(g, 1e4)][0]
    a = gap[-1] <= 1e-6 and np.isclose(g[-1], 1e8)
    b = nu.max() <= 2 * nu_1e4
    c = rho.min() >= 0.05
    record(5, "S1 path diagnostics", a and b and c and dt <= 120,
           f"(a) gap {gap[-1]:.2e}, (b) max nu {nu.max():.4f} vs 2x{nu_1e4:.4f}, "
           f"(c) min rho {rho.min():.3g}, {dt:.1f} s")


def test_06_c_stationarity(s1_run):
    _, _, point = s1_run
    rep = check_c_stationarity(point)
    worst = max(rep.residuals[k] / rep.tolerances[k] for k in rep.residuals)
    full_phi = rep.residuals["c_stat_45_global"] <= 1e-8
    record(6, "C-stationarity at S1", rep.passed and full_phi,
           f"failures {rep.failures() or 'none'}, worst residual/tol {worst:.2e}, "
           f"global sign residual {rep.residuals['c_stat_45_global']:.1e}")


def test_07_strong_vs_b(s2_run):
    problem, _, point = s2_run
    strong = check_strong_stationarity(point)
    b = check_b_stationarity(problem, point.u, n_random=500, seed=7)
    u = point.u.copy()
    free = np.setdiff1d(np.arange(u.size), np.flatnonzero(point.xi > 0))
    u[free[len(free) // 2]] += 0.1
    moved = recover_multipliers(problem, u=u)
    strong_bad = check_strong_stationarity(moved)
    b_bad = check_b_stationarity(problem, u, n_random=500, seed=7)
    ok = (strong.passed and b.admitted >= 500 and b.min_value >= -1e-5
          and not strong_bad.passed and b_bad.min_value < -1e-5)
    record(7, "strong vs B on S2", ok,
           f"strong {strong.passed}, B min {b.min_value:.1e} over {b.admitted} "
           f"tangent directions; "
           f"perturbed: strong {strong_bad.passed}, B min {b_bad.min_value:.1e}")


def test_08_normal_cone(s1_run):
    problem, _, point = s1_run
    n = problem.mesh.n_interior
    rng = np.random.default_rng(8)
    controls = [np.zeros(n), point.u] + [rng.normal(0.0, 0.2, n) for _ in range(3)]
    zero_ok = all(normal_cone_certificate(problem, u, np.zeros(n)).passed for u in controls)
    interior = np.zeros(n)                                 # S(0) = 0 < y_b strictly
    nonzero_fail = all(not normal_cone_certificate(problem, interior,
                                                   rng.normal(size=n)).passed
                       for _ in range(3))
    tau = normal_cone_vector(problem, point.nu, point.mu)
    endpoint = normal_cone_certificate(problem, point.u, tau)
    record(8, "normal-cone certificate", zero_ok and nonzero_fail and endpoint.passed,
           f"zero passes {zero_ok}, nonzero at interior fails {nonzero_fail}, "
           f"S1 endpoint passes {endpoint.passed}")


def test_09_gradient_check():
    problem, _ = mixed(8)
    mesh = problem.mesh
    gamma = 1e2
    worst = 0.0
    for seed in range(5):
        u = np.random.default_rng(seed).normal(1.0, 5.0, mesh.n_interior)
        _, g = reduced_objective(problem, u, gamma, gamma, 1 / gamma)
        fd = np.empty_like(u)
        for i in range(u.size):
            e = np.zeros_like(u)
            e[i] = 1e-5
            fd[i] = (reduced_objective(problem, u + e, gamma, gamma, 1 / gamma)[0]
                     - reduced_objective(problem, u - e, gamma, gamma, 1 / gamma)[0]) / 2e-5
        an = mesh.m * g
        worst = max(worst, np.linalg.norm(fd - an) / np.linalg.norm(an))
    record(9, "gradient check", worst <= 1e-5, f"max relative error {worst:.2e}")


CONFIG = """\
mesh.nsub = 16
bounds.y_a = -0.3
bounds.y_b = 0.1
objective.y_d = 1
objective.alpha = 0.01
schedule.prox = off
seed = 42
"""


def test_10_cli_determinism(tmp_path):
    cfg = tmp_path / "s1.cfg"
    cfg.write_text(CONFIG)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cmds = [["solve"], ["verify", "--which", "c"], ["verify", "--which", "b"]]
        for cmd in cmds:
            r = subprocess.run([sys.executable, "-m", "obstacle_ocp", *cmd, "--config",
                                str(cfg), "--out", str(out)], capture_output=True)
            assert r.returncode == 0, r.stderr.decode()
        outs.append(out)
    names = ["path.csv", "summary.txt", "report_c.txt", "report_b.txt"]
    same = [n for n in names if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    record(10, "CLI determinism", len(same) == len(names),
           f"{len(same)}/{len(names)} artifacts byte-identical")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
