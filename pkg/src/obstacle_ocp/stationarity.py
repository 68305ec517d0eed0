"""
Numerical certificates for first-order conditions at a candidate control.

Index sets (interior positions):

* ``omega_a``  nodes with ``y <= y_a + eps``  (obstacle contact)
* ``omega_s``  nodes of ``omega_a`` with multiplier density ``>= eps``
* ``omega_b``  nodes with ``y >= y_b - eps``  (state bound contact)

Multipliers ``nu`` and ``mu`` are load vectors, ``p`` a nodal function and
``lam`` an L2 density.  Pairings are plain sums over interior nodes.

Sign conditions quantified over infinite-dimensional cones are tested on
finite families (hat functions and plateaus, sampled directions), so a
failing verdict certifies a violation while a passing one is a sampled
necessary condition.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import InvalidArgument
from .fem import DualField, NodalField, hminus1_norm, lumped_l2
from .ocp import OCPIterate, OCPProblem, Schedule, path_follow
from .vi import VISolution, directional_derivative, pdas, solve_vi

PASS, FAIL, NA, INFO = "pass", "fail", "not-applicable", "info"


@dataclass(frozen=True)
class Tolerances:
    residual: float = 1e-6
    sign: float = 1e-8           # for <mu, Phi p> >= 0
    active: float = None         # default 1e-6 (1 + |y|_inf)
    b_stationarity: float = 1e-6
    membership: float = 1e-9


@dataclass(frozen=True, eq=False)
class ActiveSets:
    omega_a: np.ndarray
    omega_s: np.ndarray
    omega_b: np.ndarray
    biactive: np.ndarray
    free: np.ndarray
    hat_a: np.ndarray            # open neighbourhood of omega_a
    eps: float

    @property
    def description(self) -> str:
        return "omega_a plus mesh neighbours, minus omega_b"


def _neighbours(mesh, idx: np.ndarray) -> np.ndarray:
    full = mesh.interior[idx]
    adj = mesh.mass_matrix[full].tocoo().col
    pos = np.full(mesh.n_nodes, -1)
    pos[mesh.interior] = np.arange(mesh.n_interior)
    near = pos[adj]
    return np.union1d(idx, near[near >= 0])


def active_sets(problem: OCPProblem, y: np.ndarray, xi: np.ndarray,
                eps: float = None) -> ActiveSets:
    mesh = problem.mesh
    if eps is None:
        eps = 1e-6 * (1.0 + np.abs(y).max(initial=0.0))
    omega_a = np.flatnonzero(y <= problem.y_a + eps)
    dens = xi / mesh.m
    omega_s = omega_a[dens[omega_a] >= eps]
    omega_b = np.flatnonzero(y >= problem.y_b - eps)
    free = np.setdiff1d(np.arange(mesh.n_interior), omega_a)
    hat_a = np.setdiff1d(_neighbours(mesh, omega_a), omega_b) if omega_a.size else omega_a
    return ActiveSets(omega_a, omega_s, omega_b, np.setdiff1d(omega_a, omega_s), free,
                      hat_a, float(eps))


# ------------------------------------------------------------- points ----

@dataclass(frozen=True, eq=False)
class StationaryPoint:
    """Candidate control with state from the exact VI and recovered multipliers."""

    problem: OCPProblem
    u: np.ndarray
    sol: VISolution
    p: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    lam: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.sol.y.interior_values

    @property
    def xi(self) -> np.ndarray:
        return np.asarray(self.sol.xi.values)

    @classmethod
    def from_fields(cls, problem: OCPProblem, u, p, nu, mu) -> "StationaryPoint":
        """Assemble a point from a control and externally given multipliers.

        The state and obstacle multiplier come from an exact VI solve at
        ``u``; ``lam`` is fixed by the gradient equation ``lam = p - J_u``.
        """
        mesh = problem.mesh
        u = mesh.to_interior(u.values if isinstance(u, NodalField) else u)
        p = mesh.to_interior(p.values if isinstance(p, NodalField) else p)
        nu = np.array(nu.values if isinstance(nu, DualField) else nu, dtype=float)
        mu = np.array(mu.values if isinstance(mu, DualField) else mu, dtype=float)
        for name, v in (("nu", nu), ("mu", mu)):
            if v.shape != (mesh.n_interior,):
                raise InvalidArgument(f"{name} has {v.size} entries, mesh needs {mesh.n_interior}")
        sol = solve_vi(problem.operator, u, problem.ya_nodes)
        lam = p - problem.J_u(u)
        return cls(problem, u, sol, p, nu, mu, lam)

    def fields(self) -> dict:
        mesh = self.problem.mesh
        return {
            "u": NodalField(mesh, mesh.extend(self.u), "control"),
            "y": self.sol.y,
            "p": NodalField(mesh, mesh.extend(self.p)),
            "xi": self.sol.xi,
            "nu": DualField(mesh, self.nu, "measure"),
            "mu": DualField(mesh, self.mu, "residual"),
            "lambda": DualField(mesh, mesh.m * self.lam, "residual"),
        }


def recover_multipliers(problem: OCPProblem, u=None, iterate: OCPIterate = None,
                        gamma: float = 1e8) -> StationaryPoint:
    """Multipliers at ``u`` from a regularized iterate, re-solving if none is given.

    Without ``iterate`` a short continuation up to ``gamma`` is warm
    started at ``u`` and its endpoint supplies ``p``, ``nu`` and ``mu``.
    """
    if u is None:
        if iterate is None:
            raise InvalidArgument("need a control or an iterate")
        u = iterate.u
    if iterate is None:
        sched = Schedule(gamma_start=min(1e4, gamma), gamma_end=gamma, prox="initial")
        iterate = path_follow(problem, sched, u0=u).final
    return StationaryPoint.from_fields(problem, u, iterate.p, iterate.nu, iterate.mu)


# ------------------------------------------------------------- report ----

@dataclass
class StationarityReport:
    kind: str
    residuals: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    sets: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def add(self, name, residual, tol, verdict=None, worst=None):
        residual = float(residual)
        self.residuals[name] = residual
        self.tolerances[name] = float(tol)
        if verdict is None:
            verdict = PASS if residual <= tol else FAIL
        self.verdicts[name] = verdict
        if worst is not None:
            self.worst[name] = int(worst)

    @property
    def passed(self) -> bool:
        return all(v in (PASS, NA, INFO) for v in self.verdicts.values())

    def failures(self) -> list:
        return sorted(k for k, v in self.verdicts.items() if v == FAIL)

    def to_text(self) -> str:
        """Machine-readable ``key = value`` block."""
        lines = [f"report = {self.kind}", f"passed = {str(self.passed).lower()}"]
        for k in sorted(self.residuals):
            lines.append(f"{k}.residual = {self.residuals[k]!r}")
            lines.append(f"{k}.tolerance = {self.tolerances[k]!r}")
            lines.append(f"{k}.verdict = {self.verdicts[k]}")
            if k in self.worst:
                lines.append(f"{k}.worst_index = {self.worst[k]}")
        for k in sorted(self.sets):
            lines.append(f"set.{k} = " + " ".join(str(i) for i in self.sets[k]))
        for k in sorted(self.notes):
            lines.append(f"note.{k} = {self.notes[k]}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Human-readable table."""
        w = max([len(k) for k in self.residuals] + [9])
        out = [f"{self.kind} stationarity: {'PASS' if self.passed else 'FAIL'}",
               f"{'condition':<{w}}  {'residual':>12}  {'tolerance':>10}  verdict"]
        for k in sorted(self.residuals):
            out.append(f"{k:<{w}}  {self.residuals[k]:12.4e}  {self.tolerances[k]:10.2e}"
                       f"  {self.verdicts[k]}")
        for k in sorted(self.notes):
            out.append(f"  {k}: {self.notes[k]}")
        return "\n".join(out) + "\n"


def _record_sets(report, sets: ActiveSets):
    report.sets["omega_a"] = sets.omega_a.tolist()
    report.sets["omega_s"] = sets.omega_s.tolist()
    report.sets["omega_b"] = sets.omega_b.tolist()
    report.notes["active_eps"] = repr(sets.eps)
    report.notes["hat_omega_a"] = sets.description


def _max_abs(v, idx):
    if idx.size == 0:
        return 0.0, None
    k = int(np.argmax(np.abs(v[idx])))
    return float(abs(v[idx][k])), int(idx[k])


# --------------------------------------------------------- test functions ----

@dataclass(frozen=True, eq=False)
class TestFunctionFamily:
    """Nonnegative nodal fields (interior values) vanishing off ``support``."""

    functions: np.ndarray        # (k, n_interior)
    support: np.ndarray
    description: str

    __test__ = False             # not a pytest class


def build_test_functions(mesh, sets: ActiveSets, restricted: bool = True) -> TestFunctionFamily:
    n = mesh.n_interior
    support = sets.hat_a if restricted else np.arange(n)
    funcs = []
    for i in support:
        e = np.zeros(n)
        e[i] = 1.0
        funcs.append(e)
    if support.size:
        ind = np.zeros(n)
        ind[support] = 1.0
        funcs.append(ind)
        core = np.zeros(n)
        core[sets.omega_a] = 1.0
        funcs.append(core)
        plateau = 0.5 * ind
        plateau[sets.omega_a] = 1.0
        funcs.append(plateau)
    arr = np.array(funcs) if funcs else np.zeros((0, n))
    desc = ("hats, indicator and plateaus on " + sets.description) if restricted \
        else "hats and constant on all interior nodes"
    return TestFunctionFamily(arr, support, desc)


def _phi_sign(mu, p, family: TestFunctionFamily):
    if family.functions.shape[0] == 0:
        return 0.0, None
    vals = family.functions @ (mu * p)
    k = int(np.argmin(vals))
    return max(0.0, -float(vals[k])), k


# ------------------------------------------------------------ C and strong ----

def _box_violation(problem: OCPProblem, u, lam, eps=1e-12):
    if problem.u_box is None:
        return np.abs(lam)
    lo, hi = problem.u_box
    at_lo = u <= lo + eps
    at_hi = u >= hi - eps
    viol = np.abs(lam)
    viol = np.where(at_lo & ~at_hi, np.maximum(lam, 0.0), viol)
    viol = np.where(at_hi & ~at_lo, np.maximum(-lam, 0.0), viol)
    return np.where(at_lo & at_hi, 0.0, viol)


def _c_residuals(report, point: StationaryPoint, sets: ActiveSets, tols: Tolerances):
    problem = point.problem
    mesh = problem.mesh
    K = problem.operator.matrix
    tol = tols.residual
    y, p, nu, mu, lam = point.y, point.p, point.nu, point.mu, point.lam
    adj = K.T @ p + problem.J_y(y) + nu + mu
    report.add("c_stat_1", hminus1_norm(mesh, adj), tol)
    report.add("c_stat_2", lumped_l2(mesh, problem.J_u(point.u) + lam - p), tol)
    r3, w3 = _max_abs(p, sets.omega_s)
    report.add("c_stat_3", r3, tol, worst=w3)
    off_a = np.setdiff1d(np.arange(mesh.n_interior), sets.omega_a)
    r4, w4 = _max_abs(mu, off_a)
    report.add("c_stat_4", r4, tol, worst=w4)
    fam = build_test_functions(mesh, sets, restricted=True)
    r45, w45 = _phi_sign(mu, p, fam)
    report.add("c_stat_45", r45, tols.sign, worst=w45)
    fam_all = build_test_functions(mesh, sets, restricted=False)
    r45g, w45g = _phi_sign(mu, p, fam_all)
    report.add("c_stat_45_global", r45g, tols.sign,
               verdict=INFO, worst=w45g)
    report.notes["phi_family"] = f"{fam.functions.shape[0]} functions: {fam.description}"
    off_b = np.setdiff1d(np.arange(mesh.n_interior), sets.omega_b)
    report.add("c_stat_5", float(np.sum(np.abs(nu[off_b]))), tol)
    report.add("nu_nonneg", max(0.0, -float(nu.min(initial=0.0))), tol,
               worst=int(np.argmin(nu)) if nu.size and nu.min() < 0 else None)
    report.add("c_stat_6", lumped_l2(mesh, _box_violation(problem, point.u, lam)), tol)


def check_c_stationarity(point: StationaryPoint, tols: Tolerances = None) -> StationarityReport:
    tols = tols or Tolerances()
    sets = active_sets(point.problem, point.y, point.xi, tols.active)
    report = StationarityReport("C")
    _c_residuals(report, point, sets, tols)
    _record_sets(report, sets)
    return report


def check_strong_stationarity(point: StationaryPoint,
                              tols: Tolerances = None) -> StationarityReport:
    """C-stationarity residuals plus the sign of p on the contact set and the polar cone test.

    Only meaningful without control constraints; with a box the strong
    items are reported as not applicable.
    """
    tols = tols or Tolerances()
    problem = point.problem
    sets = active_sets(problem, point.y, point.xi, tols.active)
    report = StationarityReport("strong")
    _c_residuals(report, point, sets, tols)
    _record_sets(report, sets)
    if problem.u_box is not None:
        for name in ("strong_stat_3_sign", "strong_stat_4_polar"):
            report.add(name, 0.0, tols.residual, verdict=NA)
        report.notes["scope"] = "strong stationarity is only necessary without control constraints"
        return report
    p, mu = point.p, point.mu
    if sets.omega_a.size:
        k = int(np.argmax(p[sets.omega_a]))
        report.add("strong_stat_3_sign", max(0.0, float(p[sets.omega_a][k])), tols.residual,
                   worst=int(sets.omega_a[k]))
    else:
        report.add("strong_stat_3_sign", 0.0, tols.residual)
    cands = []
    if sets.biactive.size:
        cands.append((float(mu[sets.biactive].max()), int(sets.biactive[np.argmax(mu[sets.biactive])])))
    if sets.free.size:
        j = int(np.argmax(np.abs(mu[sets.free])))
        cands.append((float(abs(mu[sets.free][j])), int(sets.free[j])))
    val, worst = max(cands, default=(0.0, None))
    report.add("strong_stat_4_polar", max(val, 0.0), tols.residual, worst=worst)
    return report


def complementarity_gap(nu, y, y_b) -> float:
    """|sum_i nu_i (y_b,i - y_i)| for a nodal measure ``nu``."""
    nu = np.asarray(nu.values if isinstance(nu, DualField) else nu, dtype=float)
    return float(abs(np.sum(nu * (np.asarray(y_b) - np.asarray(y)))))


# ------------------------------------------------------------ primal side ----

def _state_and_sets(problem, u, tols):
    sol = solve_vi(problem.operator, u, problem.ya_nodes)
    y = sol.y.interior_values
    sets = active_sets(problem, y, np.asarray(sol.xi.values), tols.active)
    # the derivative VI is posed on the cone of the classified sets
    sol = dataclasses.replace(sol, active=sets.omega_a, strict=sets.omega_s,
                              biactive=sets.biactive)
    return sol, y, sets


def _interior(problem, v):
    return problem.mesh.to_interior(v.values if isinstance(v, NodalField) else v)


def tangent_cone_membership(problem: OCPProblem, u, h, tol: float = 1e-9,
                            tols: Tolerances = None) -> bool:
    """True iff S'(u; h) <= tol on the contact set of the state bound."""
    tols = tols or Tolerances()
    u = _interior(problem, u)
    sol, y, sets = _state_and_sets(problem, u, tols)
    if np.any(y > problem.y_b + sets.eps):
        raise InvalidArgument("control is not feasible for the state constraint")
    if sets.omega_b.size == 0:
        return True
    z = directional_derivative(problem.operator, sol, _interior(problem, h)).interior_values
    return bool(z[sets.omega_b].max() <= tol)


def _tangent_to_box(problem, u, h, eps=1e-12):
    if problem.u_box is None:
        return h
    lo, hi = problem.u_box
    h = np.where(u <= lo + eps, np.maximum(h, 0.0), h)
    return np.where(u >= hi - eps, np.minimum(h, 0.0), h)


def _linearized_gradient(problem, sol, sets, Jy, Ju):
    """J_u - p with p the adjoint of the linearization that fixes omega_s."""
    K = problem.operator.matrix
    n = problem.mesh.n_interior
    keep = np.setdiff1d(np.arange(n), sets.omega_s)
    p = np.zeros(n)
    if keep.size:
        Krr = K[keep][:, keep]
        x, _, _ = pdas(Krr.T, -Jy[keep], np.zeros(keep.size), np.zeros(keep.size, bool),
                       problem.mesh.m[keep])
        p[keep] = x
    return Ju - p


def default_directions(problem: OCPProblem, u, sol, sets, Jy, Ju, n_random=100, seed=42):
    """Signed hats, seeded Gaussian fields and steepest-descent candidates."""
    n = problem.mesh.n_interior
    rng = np.random.default_rng(seed)
    dirs = [-Ju, -_linearized_gradient(problem, sol, sets, Jy, Ju)]
    eye = np.eye(n)
    for i in range(n):
        dirs.append(eye[i])
        dirs.append(-eye[i])
    dirs.extend(rng.standard_normal((n_random, n)))
    return dirs


@dataclass(frozen=True, eq=False)
class BStationarityResult:
    min_value: float
    report: StationarityReport
    values: np.ndarray
    admitted: int
    sampled: int


def _derivative_map(problem, sol, sets):
    """h -> S'(u; h); a single factorization when there are no biactive nodes."""
    if sets.biactive.size:
        return lambda h: directional_derivative(problem.operator, sol, h).interior_values
    mesh = problem.mesh
    keep = np.setdiff1d(np.arange(mesh.n_interior), sets.omega_s)
    if keep.size == 0:
        return lambda h: np.zeros(mesh.n_interior)
    lu = spla.splu(problem.operator.matrix[keep][:, keep].tocsc())

    def dS(h):
        z = np.zeros(mesh.n_interior)
        z[keep] = lu.solve(mesh.m[keep] * h[keep])
        return z
    return dS


def _b_check(problem, u, Jy_fn, Ju_fn, directions, tols, n_random, seed, label):
    sol, y, sets = _state_and_sets(problem, u, tols)
    dS = _derivative_map(problem, sol, sets)
    Jy, Ju = Jy_fn(y, u), Ju_fn(y, u)
    if directions is None:
        directions = default_directions(problem, u, sol, sets, Jy, Ju, n_random, seed)
    m = problem.mesh.m
    vals = []
    worst_idx = None
    best = np.inf
    sampled = 0
    for j, h in enumerate(directions):
        h = _tangent_to_box(problem, u, _interior(problem, h))
        norm = lumped_l2(problem.mesh, h)
        sampled += 1
        if norm == 0.0:
            continue
        z = dS(h)
        if sets.omega_b.size and z[sets.omega_b].max() > tols.membership * (1 + np.abs(z).max()):
            continue
        v = (float(Jy @ z) + float(np.sum(m * Ju * h))) / norm
        vals.append(v)
        if v < best:
            best, worst_idx = v, j
    vals = np.array(vals)
    min_value = float(vals.min()) if vals.size else 0.0
    report = StationarityReport(label)
    report.add("b_stat", max(0.0, -min_value), tols.b_stationarity, worst=worst_idx)
    report.notes["directions_sampled"] = str(sampled)
    report.notes["directions_admitted"] = str(vals.size)
    report.notes["min_value"] = repr(min_value)
    _record_sets(report, sets)
    return BStationarityResult(min_value, report, vals, int(vals.size), sampled), sol, sets


def check_b_stationarity(problem: OCPProblem, u, directions=None, tols: Tolerances = None,
                         n_random: int = 100, seed: int = 42) -> BStationarityResult:
    """Sampled test of <J_y, S'(u;h)> + (J_u, h) >= 0 over tangent directions.

    Values are normalized by |h|_L2.  Directions leaving the control box
    are projected onto its tangent cone; those with S'(u;h) > 0 somewhere
    on the state-bound contact set are discarded.
    """
    tols = tols or Tolerances()
    u = _interior(problem, u)
    res, _, _ = _b_check(problem, u, lambda y, u: problem.J_y(y), lambda y, u: problem.J_u(u),
                         directions, tols, n_random, seed, "B")
    return res


def normal_cone_certificate(problem: OCPProblem, u, tau_vec, directions=None,
                            tols: Tolerances = None, n_random: int = 100,
                            seed: int = 42) -> StationarityReport:
    """Test ``tau_vec`` in the normal cone of the feasible control set at ``u``.

    Runs the sampled primal test for the objective ``-(tau, u)``; when it
    passes, ``p = -tau`` is split through ``-K^T p = nu + mu`` and the
    sign conditions on ``p``, ``mu`` and ``nu`` are reported as well.
    """
    tols = tols or Tolerances()
    mesh = problem.mesh
    u = _interior(problem, u)
    tau = _interior(problem, tau_vec)
    sol, y, sets = _state_and_sets(problem, u, tols)
    if np.any(y > problem.y_b + sets.eps):
        raise InvalidArgument("control is not feasible for the state constraint")
    aux = dataclasses.replace(problem, box_nodes=None)
    zero = np.zeros(mesh.n_interior)
    if directions is None:
        directions = [tau] + default_directions(aux, u, sol, sets, zero, -tau, n_random, seed)
    res, sol, sets = _b_check(aux, u, lambda y, u: zero, lambda y, u: -tau,
                              directions, tols, n_random, seed, "normal-cone")
    report = res.report
    if not report.passed:
        return report
    p = -tau
    r = -(problem.operator.matrix.T @ p)
    nu = np.zeros_like(r)
    mu = np.zeros_like(r)
    nu[sets.omega_b] = r[sets.omega_b]
    mu[sets.omega_a] = r[sets.omega_a]
    rest = r - nu - mu
    tol = tols.residual
    report.add("adjoint", hminus1_norm(mesh, rest), tol)
    r3, w3 = _max_abs(p, sets.omega_s)
    report.add("strong_stat_3_zero", r3, tol, worst=w3)
    report.add("strong_stat_3_sign",
               max(0.0, float(p[sets.omega_a].max(initial=-np.inf))) if sets.omega_a.size else 0.0,
               tol)
    polar = [0.0]
    if sets.biactive.size:
        polar.append(float(mu[sets.biactive].max()))
    if sets.free.size:
        polar.append(float(np.abs(mu[sets.free]).max()))
    report.add("strong_stat_4_polar", max(polar), tol)
    report.add("strong_stat_5_nu_nonneg", max(0.0, -float(nu.min(initial=0.0))), tol)
    report.notes["recovered_nu_mass"] = repr(float(nu.sum()))
    return report


def normal_cone_vector(problem: OCPProblem, nu, mu) -> np.ndarray:
    """Candidate normal vector ``-p`` where ``K^T p = -(nu + mu)``."""
    nu = np.asarray(nu.values if isinstance(nu, DualField) else nu, dtype=float)
    mu = np.asarray(mu.values if isinstance(mu, DualField) else mu, dtype=float)
    p = problem.operator.solve(-(nu + mu), transpose=True)
    return -p
