"""
Command line driver: ``solve``, ``verify``, ``oracle`` and ``slater``.

Exit codes: 0 success, 1 verification failed, 2 usage or config error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import build_problem, load_config, tolerances
from .errors import (InvalidArgument, InvalidCoefficients, InvalidData, OracleInapplicable,
                     SolverFailure)
from .fem import DualField, NodalField, lumped_l2
from .ocp import (CSV_COLUMNS, construct_slater_candidate, path_follow, slater_check)
from .oracle import (ENUMERATION_CAP, assemble_by_quadrature, enumerate_vi, fd_directional,
                     lq_kkt_solve)
from .scenarios import biactive_instance
from .stationarity import (StationaryPoint, check_b_stationarity, check_c_stationarity,
                           check_strong_stationarity, normal_cone_certificate,
                           normal_cone_vector)
from .vi import directional_derivative, solve_vi

log = logging.getLogger("obstacle_ocp")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
FIELD_NAMES = ("u", "y", "p", "xi", "nu", "mu", "lambda")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parser():
    p = _Parser(prog="obstacle-ocp",
                description="Obstacle-problem optimal control with state constraints.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("solve", "run the penalty path and write artifacts"),
                       ("verify", "check stationarity of dumped fields"),
                       ("oracle", "cross-check solvers against reference computations"),
                       ("slater", "compute the Slater margin")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("--seed", type=int, default=None)
        if name == "solve":
            s.add_argument("--gamma-max", type=float, default=None)
        if name == "verify":
            s.add_argument("--which", choices=("b", "c", "strong", "normal-cone"), default="c")
    return p


def _out_dir(args, cfg) -> Path:
    out = args.out if args.out is not None else Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, cfg) -> int:
    return cfg["seed"] if args.seed is None else args.seed


def _write_kv(path: Path, items: dict):
    path.write_text("".join(f"{k} = {v}\n" for k, v in items.items()))


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# --------------------------------------------------------------- solve ----

def _write_history(out: Path, history):
    io.write_csv(out / "path.csv", history.diagnostics, CSV_COLUMNS)


def _write_fields(out: Path, problem, it):
    fdir = out / "fields"
    fdir.mkdir(exist_ok=True)
    flds = {"u": it.u, "y": it.y, "p": it.p, "xi": it.xi, "nu": it.nu, "mu": it.mu,
            "lambda": it.lam}
    for name in FIELD_NAMES:
        io.write_field(fdir / f"{name}.txt", flds[name], name)
    sol = solve_vi(problem.operator, it.u, problem.ya_nodes)
    (fdir / "state_vi.txt").write_text(io.format_vi_solution(sol))
    io.write_vtk(out / "fields.vtk", problem.mesh, flds)


def run_solve(args) -> int:
    cfg = load_config(args.config)
    problem, schedule = build_problem(cfg)
    if args.gamma_max is not None:
        if args.gamma_max < schedule.gamma_start:
            raise InvalidArgument("--gamma-max is below schedule.gamma_start")
        schedule = dataclasses.replace(schedule, gamma_end=args.gamma_max)
    out = _out_dir(args, cfg)
    try:
        history = path_follow(problem, schedule)
    except SolverFailure as exc:
        partial = exc.diagnostics.get("history")
        if partial is not None and partial.iterates:
            _write_history(out, partial)
            _write_fields(out, problem, partial.final)
        _write_kv(out / "summary.txt", {"status": "solver-failure", "message": str(exc),
                                        "residual": _fmt(exc.residual or float("nan"))})
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    _write_history(out, history)
    it = history.final
    _write_fields(out, problem, it)
    point = StationaryPoint.from_fields(problem, it.u, it.p, it.nu, it.mu)
    rep = check_c_stationarity(point, tolerances(cfg))
    diag = history.diagnostics[-1]
    summary = {"status": "ok", "steps": len(history.iterates),
               "gamma_end": _fmt(it.gamma), "gamma_a_end": _fmt(it.gamma_a),
               "prox": cfg["schedule.prox"], "J": _fmt(it.objective),
               "kkt_residual": _fmt(it.kkt_residual), "penalty_gap": _fmt(diag["penalty_gap"]),
               "nu_l1": _fmt(diag["nu_l1"]), "rho": _fmt(diag["rho"])}
    if cfg["slater.u_hat"] is not None:
        u_hat = problem.mesh.interpolate(cfg["slater.u_hat"])
        summary["slater_tau"] = _fmt(slater_check(problem, u_hat))
    for k in sorted(rep.residuals):
        summary[f"final.{k}"] = _fmt(rep.residuals[k])
    _write_kv(out / "summary.txt", summary)
    print((out / "summary.txt").read_text(), end="")
    return EXIT_OK


# -------------------------------------------------------------- verify ----

def _read_fields(fdir: Path, mesh):
    flds = {}
    for name in ("u", "p", "nu", "mu"):
        flds[name] = io.read_field(fdir / f"{name}.txt", mesh)
    if not isinstance(flds["u"], NodalField) or not isinstance(flds["p"], NodalField):
        raise InvalidArgument("u and p must be nodal fields")
    if not isinstance(flds["nu"], DualField) or not isinstance(flds["mu"], DualField):
        raise InvalidArgument("nu and mu must be dual fields")
    return flds


def verify_report(problem, flds, which, tols, n_random=100, seed=42):
    """Stationarity report for dumped fields; shared by the CLI and tests."""
    if which in ("c", "strong"):
        point = StationaryPoint.from_fields(problem, flds["u"], flds["p"], flds["nu"], flds["mu"])
        check = check_c_stationarity if which == "c" else check_strong_stationarity
        return check(point, tols)
    if which == "b":
        return check_b_stationarity(problem, flds["u"], tols=tols, n_random=n_random,
                                    seed=seed).report
    tau = flds.get("tau")
    if tau is None:
        tau = normal_cone_vector(problem, flds["nu"], flds["mu"])
    return normal_cone_certificate(problem, flds["u"], tau, tols=tols, n_random=n_random,
                                   seed=seed)


def run_verify(args) -> int:
    cfg = load_config(args.config)
    problem, _ = build_problem(cfg)
    out = _out_dir(args, cfg)
    flds = _read_fields(out / "fields", problem.mesh)
    tau_file = out / "fields" / "tau.txt"
    if args.which == "normal-cone" and tau_file.exists():
        flds["tau"] = io.read_field(tau_file, problem.mesh)
    rep = verify_report(problem, flds, args.which, tolerances(cfg),
                        cfg["verify.directions"], _seed(args, cfg))
    name = args.which.replace("-", "_")
    (out / f"report_{name}.txt").write_text(rep.to_text())
    print(rep.to_table(), end="")
    if any(v == "not-applicable" for v in rep.verdicts.values()):
        print("warning: some conditions are not applicable with a control box", file=sys.stderr)
    if rep.passed:
        return EXIT_OK
    print("failed: " + ", ".join(rep.failures()), file=sys.stderr)
    return EXIT_FAIL


# -------------------------------------------------------------- oracle ----

def oracle_suite(problem, instances: int, seed: int, enumerate_: bool = True) -> list:
    """Rows ``(check, instances, max_error, tolerance, verdict)``."""
    op = problem.operator
    mesh = problem.mesh
    rng = np.random.default_rng(seed)
    rows = []

    def row(name, count, err, tol):
        rows.append((name, count, float(err), tol, "pass" if err <= tol else "fail"))

    if enumerate_:
        err = 0.0
        for _ in range(instances):
            u = rng.normal(0.0, 2.0, mesh.n_interior)
            ya = problem.y_a + rng.uniform(-0.1, 0.05, mesh.n_interior)
            ref = enumerate_vi(op, u, mesh.extend(ya))
            sol = solve_vi(op, u, mesh.extend(ya))
            e = np.abs(sol.y.interior_values - ref.y).max()
            if not np.array_equal(sol.active, ref.active_set):
                e = np.inf
            err = max(err, e)
        row("enumeration", instances, err, 1e-10)
    err = 0.0
    for _ in range(instances):
        u, ya, _, _ = biactive_instance(rng, op, n_bi=min(2, mesh.n_interior // 3),
                                        n_strict=min(2, mesh.n_interior // 3))
        h = rng.normal(size=mesh.n_interior)
        sol = solve_vi(op, u, mesh.extend(ya))
        z = directional_derivative(op, sol, h).interior_values
        lim, _ = fd_directional(op, u, mesh.extend(ya), h)
        err = max(err, np.abs(z - lim).max())
    row("directional_derivative", instances, err, 1e-7)
    K = assemble_by_quadrature(mesh, op.spec)
    row("assembly_quadrature", 1, abs(K - op.matrix).max(), 1e-12)
    try:
        u_star, _, _ = lq_kkt_solve(problem)
    except (OracleInapplicable, SolverFailure) as exc:
        rows.append(("lq_kkt", 0, float("nan"), 1e-8, "not-applicable"))
        log.info("LQ oracle skipped: %s", exc)
    else:
        u = path_follow(problem).final.u.interior_values
        row("lq_kkt", 1, lumped_l2(mesh, u - u_star), 1e-8)
    return rows


def run_oracle(args) -> int:
    cfg = load_config(args.config)
    problem, _ = build_problem(cfg)
    if cfg["oracle.enumerate"] and problem.mesh.n_interior > ENUMERATION_CAP:
        raise InvalidArgument(f"enumeration needs at most {ENUMERATION_CAP} interior nodes, "
                              f"mesh has {problem.mesh.n_interior}")
    rows = oracle_suite(problem, cfg["oracle.instances"], _seed(args, cfg), cfg["oracle.enumerate"])
    lines = [f"{'check':<24} {'n':>4} {'max_error':>12} {'tolerance':>10}  verdict"]
    for name, n, err, tol, verdict in rows:
        lines.append(f"{name:<24} {n:>4} {err:12.4e} {tol:10.1e}  {verdict}")
    text = "\n".join(lines) + "\n"
    out = _out_dir(args, cfg)
    (out / "oracle.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if all(r[4] != "fail" for r in rows) else EXIT_FAIL


# -------------------------------------------------------------- slater ----

def run_slater(args) -> int:
    cfg = load_config(args.config)
    problem, _ = build_problem(cfg)
    if cfg["slater.u_hat"] is not None:
        u_hat = problem.mesh.interpolate(cfg["slater.u_hat"])
        source = "config"
    else:
        u_hat = construct_slater_candidate(problem).values
        source = "constructed"
    tau = slater_check(problem, u_hat)
    print(f"source = {source}\ntau = {tau!r}\nslater = {str(tau > 0).lower()}")
    return EXIT_OK if tau > 0 else EXIT_FAIL


COMMANDS = {"solve": run_solve, "verify": run_verify, "oracle": run_oracle,
            "slater": run_slater}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (InvalidArgument, InvalidData, InvalidCoefficients) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
