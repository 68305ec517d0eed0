"""
Regularized optimal control of the obstacle problem.

For penalties ``gamma`` (state bound) and ``gamma_a`` (obstacle) the
smoothed problem reads

    min_u  J(y, u) + gamma/2 |max(0, y - y_b)|^2
    s.t.   K y = M u + gamma_a M m_delta(y_a - y),   u in U_ad,

with the C^1 ramp ``m_delta`` and the tracking objective

    J(y, u) = 1/2 |y - y_d|^2 + alpha/2 |u|^2 + (g, u) + w/2 |u - u_ref|^2.

The last term is the proximal term of the regularized problems (weight
``w = 1``); its center ``u_ref`` belongs to the problem data.  Setting
``w = 0`` corresponds to a center at the unknown solution.  All L2 products use the
lumped mass ``M = diag(m)``.  The reduced problem is solved by a projected
Newton method whose step comes from one sparse saddle-point solve.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, InvalidData, SolverFailure
from .fem import (DualField, NodalField, SparseOperator, hminus1_norm, lumped_l2)
from .vi import solve_vi

log = logging.getLogger(__name__)


# ------------------------------------------------------------- problem ----

def _nodal(mesh, value) -> np.ndarray:
    if isinstance(value, NodalField):
        return np.array(value.values)
    if callable(value) or np.ndim(value) == 0:
        return mesh.interpolate(value)
    v = np.asarray(value, dtype=float)
    if v.shape == (mesh.n_interior,):
        return mesh.extend(v)
    if v.shape != (mesh.n_nodes,):
        raise InvalidArgument(f"nodal data of shape {v.shape} does not fit the mesh")
    return v.copy()


@dataclass(frozen=True, eq=False)
class OCPProblem:
    """Problem data; nodal arrays cover all mesh nodes."""

    operator: SparseOperator
    ya_nodes: np.ndarray
    yb_nodes: np.ndarray
    yd_nodes: np.ndarray
    alpha: float = 1.0
    uref_nodes: np.ndarray = None
    g_nodes: np.ndarray = None
    box_nodes: tuple = None
    slater_margin: float = None
    prox_weight: float = 1.0

    @classmethod
    def create(cls, operator, y_a, y_b, y_d, alpha=1.0, u_ref=0.0, g=0.0,
               u_box=None, prox_weight=1.0) -> "OCPProblem":
        """Build a problem from constants, callables ``f(x, y)`` or nodal arrays."""
        mesh = operator.mesh
        box = None
        if u_box is not None:
            box = (_nodal(mesh, u_box[0]), _nodal(mesh, u_box[1]))
        return cls(operator, _nodal(mesh, y_a), _nodal(mesh, y_b), _nodal(mesh, y_d),
                   float(alpha), _nodal(mesh, u_ref), _nodal(mesh, g), box,
                   prox_weight=float(prox_weight))

    def __post_init__(self):
        mesh = self.operator.mesh
        if self.uref_nodes is None:
            object.__setattr__(self, "uref_nodes", np.zeros(mesh.n_nodes))
        if self.g_nodes is None:
            object.__setattr__(self, "g_nodes", np.zeros(mesh.n_nodes))
        if self.alpha < 0:
            raise InvalidData("control cost alpha must be nonnegative")
        bnd = mesh.boundary_mask
        if np.any(self.ya_nodes[bnd] > 0):
            raise InvalidData("obstacle must satisfy y_a <= 0 on the boundary")
        if np.any(self.yb_nodes[bnd] <= 0):
            raise InvalidData("state bound must satisfy y_b > 0 on the boundary")
        if not self.gap > 0:
            raise InvalidData(f"need y_a < y_b with a positive gap, got {self.gap:g}")
        if self.box_nodes is not None and np.any(self.box_nodes[0] > self.box_nodes[1]):
            raise InvalidData("control box has u_low > u_high")

    @property
    def mesh(self):
        return self.operator.mesh

    @property
    def gap(self) -> float:
        return float(np.min(self.yb_nodes - self.ya_nodes))

    def _int(self, v):
        return v[self.mesh.interior]

    y_a = property(lambda self: self._int(self.ya_nodes))
    y_b = property(lambda self: self._int(self.yb_nodes))
    y_d = property(lambda self: self._int(self.yd_nodes))
    u_ref = property(lambda self: self._int(self.uref_nodes))
    g = property(lambda self: self._int(self.g_nodes))

    @property
    def u_box(self):
        if self.box_nodes is None:
            return None
        return self._int(self.box_nodes[0]), self._int(self.box_nodes[1])

    def with_u_ref(self, u_ref) -> "OCPProblem":
        return dataclasses.replace(self, uref_nodes=_nodal(self.mesh, u_ref))

    def project(self, u: np.ndarray) -> np.ndarray:
        if self.box_nodes is None:
            return u
        lo, hi = self.u_box
        return np.clip(u, lo, hi)

    def objective(self, y, u) -> float:
        m = self.mesh.m
        return float(0.5 * np.sum(m * (y - self.y_d) ** 2)
                     + 0.5 * self.alpha * np.sum(m * u ** 2)
                     + np.sum(m * self.g * u)
                     + 0.5 * self.prox_weight * np.sum(m * (u - self.u_ref) ** 2))

    def J_y(self, y) -> np.ndarray:
        """Derivative in y as a load vector."""
        return self.mesh.m * (y - self.y_d)

    def J_u(self, u) -> np.ndarray:
        """Derivative in u as an L2 density (prox term included)."""
        return self.alpha * u + self.g + self.prox_weight * (u - self.u_ref)


# ----------------------------------------------------------- smoothing ----

def m_delta(s, delta):
    s = np.asarray(s, dtype=float)
    return np.where(s <= 0, 0.0, np.where(s < delta, s * s / (2 * delta), s - 0.5 * delta))


def dm_delta(s, delta):
    s = np.asarray(s, dtype=float)
    return np.clip(s / delta, 0.0, 1.0)


def ddm_delta(s, delta):
    s = np.asarray(s, dtype=float)
    return np.where((s > 0) & (s < delta), 1.0 / delta, 0.0)


@dataclass(frozen=True, eq=False)
class SmoothedState:
    y: np.ndarray            # interior
    xi: np.ndarray           # load vector gamma_a m m_delta(y_a - y)
    linearized: sp.csc_matrix
    slope: np.ndarray        # m_delta'(y_a - y)
    iterations: int


def _state_residual(K, y, f, ya, m, gamma_a, delta):
    return K @ y - gamma_a * m * m_delta(ya - y, delta) - f


def smoothed_state_solve(problem: OCPProblem, u, gamma_a: float, delta: float,
                         y0=None, tol: float = 1e-11, max_iter: int = 100) -> SmoothedState:
    """Damped Newton for ``K y - gamma_a M m_delta(y_a - y) = M u``."""
    if not (gamma_a > 0 and delta > 0):
        raise InvalidArgument("gamma_a and delta must be positive")
    op = problem.operator
    mesh = op.mesh
    K = op.matrix
    m = mesh.m
    ya = problem.y_a
    u = mesh.to_interior(u.values if isinstance(u, NodalField) else u)
    f = m * u
    y = op.solve(f) if y0 is None else np.array(y0, dtype=float)
    r = _state_residual(K, y, f, ya, m, gamma_a, delta)
    for it in range(max_iter + 1):
        rn = np.abs(r).max(initial=0.0)
        # round-off in K y and the penalty term grows with their size
        scale = (1.0 + np.abs(f).max(initial=0.0) + np.abs(K @ y).max(initial=0.0)
                 + gamma_a * np.abs(m * m_delta(ya - y, delta)).max(initial=0.0))
        # a warm start may already satisfy the tolerance while still lagging
        # behind a tiny change of u; one full Newton step polishes it
        polish = it == 0 and rn <= tol * scale
        if rn <= tol * scale and not polish:
            break
        if it == max_iter:
            raise SolverFailure("smoothed state equation: Newton did not converge",
                                residual=float(rn))
        slope = dm_delta(ya - y, delta)
        L = (K + sp.diags(gamma_a * m * slope)).tocsc()
        dy = spla.spsolve(L, -r)
        if polish:
            y = y + dy
            r = _state_residual(K, y, f, ya, m, gamma_a, delta)
            continue
        t = 1.0
        r2n = np.linalg.norm(r)
        while True:
            y_new = y + t * dy
            r_new = _state_residual(K, y_new, f, ya, m, gamma_a, delta)
            if np.linalg.norm(r_new) <= (1 - 1e-4 * t) * r2n or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10:
            if rn <= 1e3 * tol * scale:
                break               # stalled at round-off level
            raise SolverFailure("smoothed state equation: Newton stalled", residual=float(rn))
        y, r = y_new, r_new
    slope = dm_delta(ya - y, delta)
    L = (K + sp.diags(gamma_a * m * slope)).tocsc()
    xi = gamma_a * m * m_delta(ya - y, delta)
    return SmoothedState(y, xi, L, slope, it)


# ---------------------------------------------------- reduced problem ----

@dataclass(frozen=True, eq=False)
class _Eval:
    u: np.ndarray
    F: float
    state: SmoothedState
    p: np.ndarray
    grad: np.ndarray          # L2 density


def _evaluate(problem, u, gamma, gamma_a, delta, y0=None, with_gradient=True) -> _Eval:
    st = smoothed_state_solve(problem, u, gamma_a, delta, y0)
    m = problem.mesh.m
    viol = np.maximum(st.y - problem.y_b, 0.0)
    F = problem.objective(st.y, u) + 0.5 * gamma * float(np.sum(m * viol ** 2))
    p = grad = None
    if with_gradient:
        rhs = -(problem.J_y(st.y) + gamma * m * viol)
        p = spla.spsolve(st.linearized.T.tocsc(), rhs)
        grad = problem.J_u(u) - p
    return _Eval(u, F, st, p, grad)


def reduced_objective(problem: OCPProblem, u, gamma: float, gamma_a: float, delta: float):
    """Value and L2 gradient (density) of the smoothed reduced objective."""
    ev = _evaluate(problem, np.asarray(u, dtype=float), gamma, gamma_a, delta)
    return ev.F, ev.grad


def kkt_residual(problem: OCPProblem, u, grad) -> float:
    return lumped_l2(problem.mesh, u - problem.project(u - grad))


def _binding(problem, u, grad, eps=1e-12):
    if problem.box_nodes is None:
        return np.zeros(u.size, dtype=bool)
    lo, hi = problem.u_box
    return ((u <= lo + eps) & (grad > 0)) | ((u >= hi - eps) & (grad < 0))


def _newton_direction(problem, ev, gamma, gamma_a, delta, binding, convexify):
    mesh = problem.mesh
    n = mesh.n_interior
    m = mesh.m
    st = ev.state
    chi = (st.y > problem.y_b).astype(float)
    curv = -gamma_a * m * ddm_delta(problem.y_a - st.y, delta) * ev.p
    if convexify:
        curv = np.maximum(curv, 0.0)
    W = sp.diags(m * (1.0 + gamma * chi) + curv)
    free = ~binding
    Muu = sp.diags(np.where(free, (problem.alpha + problem.prox_weight) * m, 1.0))
    Mul = sp.diags(np.where(free, -m, 0.0))
    M = sp.diags(m)
    Z = sp.csr_matrix((n, n))
    kkt = sp.bmat([[W, Z, st.linearized.T],
                   [Z, Muu, Mul],
                   [st.linearized, -M, Z]]).tocsc()
    rhs = np.concatenate([np.zeros(n), np.where(free, -m * ev.grad, 0.0), np.zeros(n)])
    sol = spla.splu(kkt).solve(rhs)
    du = sol[n:2 * n]
    du[binding] = 0.0
    return du


@dataclass(frozen=True, eq=False)
class OCPIterate:
    u: NodalField
    y: NodalField
    p: NodalField
    xi: DualField
    nu: DualField
    mu: DualField
    lam: DualField
    gamma: float
    gamma_a: float
    delta: float
    kkt_residual: float
    objective: float
    u_ref: np.ndarray = None
    iterations: int = 0

    @property
    def mesh(self):
        return self.u.mesh


def _make_iterate(problem, ev, gamma, gamma_a, delta, its) -> OCPIterate:
    mesh = problem.mesh
    m = mesh.m
    st = ev.state
    y = st.y
    nu = gamma * m * np.maximum(y - problem.y_b, 0.0)
    mu = gamma_a * m * st.slope * ev.p
    lam = ev.p - problem.J_u(ev.u)
    return OCPIterate(
        u=NodalField(mesh, ev.u, "control"),
        y=NodalField(mesh, y),
        p=NodalField(mesh, ev.p),
        xi=DualField(mesh, st.xi, "measure"),
        nu=DualField(mesh, nu, "measure"),
        mu=DualField(mesh, mu, "residual"),
        lam=DualField(mesh, m * lam, "residual"),
        gamma=float(gamma), gamma_a=float(gamma_a), delta=float(delta),
        kkt_residual=kkt_residual(problem, ev.u, ev.grad),
        objective=problem.objective(y, ev.u),
        u_ref=problem.u_ref.copy(), iterations=its,
    )


def solve_pgamma(problem: OCPProblem, gamma: float, gamma_a: float = None,
                 u0=None, delta: float = None, tol: float = 1e-8,
                 max_iter: int = 200, y0=None) -> OCPIterate:
    """Projected Newton method for the smoothed regularized problem.

    ``gamma_a`` defaults to ``gamma`` and ``delta`` to ``1 / gamma_a``.
    The Newton step solves the saddle-point system of the quadratic model;
    if it is not a descent direction the curvature contributed by the
    obstacle smoothing is clipped to be nonnegative, and as a last resort
    the negative gradient is used.  Steps are globalized by an Armijo
    search along the projection arc.
    """
    gamma_a = gamma if gamma_a is None else gamma_a
    delta = 1.0 / gamma_a if delta is None else delta
    mesh = problem.mesh
    m = mesh.m
    u = np.zeros(mesh.n_interior) if u0 is None else mesh.to_interior(
        u0.values if isinstance(u0, NodalField) else u0)
    u = problem.project(u)
    ev = _evaluate(problem, u, gamma, gamma_a, delta, y0)
    res = kkt_residual(problem, u, ev.grad)
    for it in range(max_iter):
        if res <= tol:
            return _make_iterate(problem, ev, gamma, gamma_a, delta, it)
        binding = _binding(problem, u, ev.grad)
        candidates = []
        for convexify in (False, True):
            try:
                candidates.append(_newton_direction(problem, ev, gamma, gamma_a, delta,
                                                    binding, convexify))
            except RuntimeError:   # singular saddle-point matrix
                continue
        candidates.append(np.where(binding, 0.0, -ev.grad))
        accepted = None
        for du in candidates:
            slope = float(np.sum(m * ev.grad * du))
            if not slope < 0:
                continue
            accepted = _line_search(problem, ev, du, gamma, gamma_a, delta, res)
            if accepted is not None:
                break
        if accepted is None:
            raise SolverFailure("line search failed in the regularized problem",
                                residual=res,
                                diagnostics={"gamma": gamma, "iteration": it, "u": u})
        ev = accepted
        u = ev.u
        res = kkt_residual(problem, u, ev.grad)
    if res <= tol:
        return _make_iterate(problem, ev, gamma, gamma_a, delta, max_iter)
    raise SolverFailure(f"projected Newton did not converge in {max_iter} iterations",
                        residual=res, diagnostics={"gamma": gamma, "u": u})


def _line_search(problem, ev, du, gamma, gamma_a, delta, res, sigma=1e-4):
    m = problem.mesh.m
    noise = 1e-12 * (1.0 + abs(ev.F))
    # once the predicted decrease is below the rounding level of F, F
    # carries no information and the optimality residual is the merit
    flat = abs(float(np.sum(m * ev.grad * (problem.project(ev.u + du) - ev.u)))) <= noise
    t = 1.0
    while t >= 1e-12:
        u_new = problem.project(ev.u + t * du)
        step = u_new - ev.u
        try:
            cand = _evaluate(problem, u_new, gamma, gamma_a, delta, ev.state.y)
        except SolverFailure:
            t *= 0.5
            continue
        decrease = float(np.sum(m * ev.grad * step))
        if not flat and cand.F <= ev.F + sigma * decrease:
            return cand
        if (cand.F <= ev.F + noise
                and kkt_residual(problem, u_new, cand.grad) <= (1.0 - 0.5 * t) * res):
            return cand
        t *= 0.5
    return None


# ---------------------------------------------------------- continuation ----

@dataclass(frozen=True)
class Schedule:
    gamma_start: float = 1.0
    gamma_end: float = 1e8
    factor: float = 10.0
    gamma_a_ratio: float = 1.0          # gamma_a = ratio * gamma
    prox: str = "initial"               # "previous" or "off"
    u_change_tol: float = 1e-9
    kkt_tol: float = 1e-8
    max_halvings: int = 3               # retries of a failed step, log-step halved each time

    def __post_init__(self):
        if not self.factor > 1:
            raise InvalidArgument("schedule factor must exceed 1")
        if not 0 < self.gamma_start <= self.gamma_end:
            raise InvalidArgument("need 0 < gamma_start <= gamma_end")
        if self.prox not in ("initial", "previous", "off"):
            raise InvalidArgument(f"unknown prox policy {self.prox!r}")

    @property
    def gammas(self) -> np.ndarray:
        out = []
        g = float(self.gamma_start)
        while g <= self.gamma_end * (1 + 1e-12):
            out.append(g)
            g *= self.factor
        return np.array(out)


@dataclass
class PathHistory:
    iterates: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    schedule: Schedule = None
    terminated_early: bool = False

    @property
    def final(self) -> OCPIterate:
        return self.iterates[-1]

    def column(self, key) -> np.ndarray:
        return np.array([d[key] for d in self.diagnostics])


CSV_COLUMNS = ("gamma", "J", "viol_l2", "nu_l1", "mu_hm1", "rho", "kkt_residual")


def separation(problem: OCPProblem, y: np.ndarray, eps: float = None) -> float:
    """Distance between the near-contact sets of the obstacle and the state bound."""
    if eps is None:
        eps = 1e-6 * (1.0 + np.abs(problem.y_b).max(initial=0.0))
    mesh = problem.mesh
    lower = mesh.interior[y <= problem.y_a + eps]
    upper = mesh.interior[y >= problem.y_b - eps]
    return mesh.node_distances(lower, upper)


def diagnostics(problem: OCPProblem, it: OCPIterate) -> dict:
    mesh = problem.mesh
    y = it.y.interior_values
    viol = np.maximum(y - problem.y_b, 0.0)
    viol_l2 = lumped_l2(mesh, viol)
    return {
        "gamma": it.gamma,
        "J": it.objective,
        "viol_l2": viol_l2,
        "nu_l1": float(np.sum(it.nu.values)),
        "mu_hm1": hminus1_norm(mesh, it.mu.values),
        "p_h1": float(np.sqrt(max(it.p.values @ (mesh.laplacian @ it.p.values), 0.0))),
        "rho": separation(problem, y),
        "penalty_gap": it.gamma * viol_l2 ** 2,
        "complementarity": float(abs(np.sum(it.nu.values * (problem.y_b - y)))),
        "kkt_residual": it.kkt_residual,
    }


def path_follow(problem: OCPProblem, schedule: Schedule = None, u0=None) -> PathHistory:
    """Warm-started continuation over increasing penalties.

    With ``schedule.prox == "initial"`` the proximal center stays at the
    problem's ``u_ref``; with ``"previous"`` it moves to the previous
    converged control; ``"off"`` drops the proximal term.  Stops early once
    two consecutive controls differ by less than ``schedule.u_change_tol``
    in L2.  A failed step is retried
    at the geometric midpoint with the last converged penalty, at most
    ``schedule.max_halvings`` times per scheduled penalty.
    """
    schedule = schedule or Schedule()
    history = PathHistory(schedule=schedule)
    mesh = problem.mesh
    u = problem.u_ref.copy() if u0 is None else mesh.to_interior(
        u0.values if isinstance(u0, NodalField) else u0)
    y = None
    current = problem
    if schedule.prox == "off":
        current = problem = dataclasses.replace(problem, prox_weight=0.0)
    pending = list(schedule.gammas)
    targets = set(pending)
    halvings = 0
    while pending:
        gamma = pending[0]
        k = len(history.iterates)
        if schedule.prox == "previous" and k > 0:
            current = problem.with_u_ref(mesh.extend(u))
        gamma_a = schedule.gamma_a_ratio * gamma
        try:
            it = solve_pgamma(current, gamma, gamma_a, u0=u, tol=schedule.kkt_tol, y0=y)
        except SolverFailure as exc:
            if k == 0 or halvings >= schedule.max_halvings:
                exc.diagnostics["history"] = history
                raise
            # retry from the last converged point with half the step in log(gamma)
            halvings += 1
            pending.insert(0, float(np.sqrt(history.iterates[-1].gamma * gamma)))
            log.debug("gamma=%g failed, retrying at %g", gamma, pending[0])
            continue
        pending.pop(0)
        if gamma in targets:
            halvings = 0
        log.debug("gamma=%g newton=%d kkt=%.2e", gamma, it.iterations, it.kkt_residual)
        change = lumped_l2(mesh, it.u.interior_values - u) if k > 0 else np.inf
        history.iterates.append(it)
        history.diagnostics.append(diagnostics(current, it))
        u, y = it.u.interior_values, it.y.interior_values
        if change < schedule.u_change_tol:
            history.terminated_early = True
            break
    return history


# -------------------------------------------------------------- Slater ----

def slater_check(problem: OCPProblem, u_hat) -> float:
    """Margin ``min(y_b - S(u_hat))`` over all nodes; positive certifies a Slater point."""
    mesh = problem.mesh
    u = mesh.to_interior(u_hat.values if isinstance(u_hat, NodalField) else u_hat)
    if problem.u_box is not None:
        lo, hi = problem.u_box
        if np.any(u < lo) or np.any(u > hi):
            raise InvalidArgument("Slater candidate lies outside the control box")
    y = solve_vi(problem.operator, u, problem.ya_nodes).y.values
    return float(np.min(problem.yb_nodes - y))


def bubble(mesh) -> np.ndarray:
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    return 16.0 * x * (1 - x) * y * (1 - y)


def construct_slater_candidate(problem: OCPProblem) -> NodalField:
    """Control whose state is ``max(y_a, 0) + eps * bubble`` with eps half the gap."""
    if problem.u_box is not None:
        raise InvalidArgument("Slater construction needs unconstrained controls")
    mesh = problem.mesh
    lifted = np.maximum(problem.ya_nodes, 0.0)
    gap = float(np.min(problem.yb_nodes - lifted))
    if not gap > 0:
        raise InvalidData(f"no room between max(y_a, 0) and y_b (gap {gap:g})")
    y_tilde = lifted + 0.5 * gap * bubble(mesh)
    u_hat = (problem.operator.matrix @ y_tilde[mesh.interior]) / mesh.m
    return NodalField(mesh, mesh.extend(u_hat), "control")
