"""
Independent reference computations.

Nothing here shares code paths with the production solvers: the VI is
solved by enumerating active sets with dense linear algebra, derivatives
by difference quotients of full VI solves, the LQ problem by one coupled
linear system, and the stiffness matrix by a separate quadrature loop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InternalError, InvalidArgument, OracleInapplicable
from .fem import DualField, Mesh, NodalField, OperatorSpec, SparseOperator

ENUMERATION_CAP = 14


@dataclass(frozen=True, eq=False)
class EnumerationResult:
    y: np.ndarray            # interior values
    xi: np.ndarray           # load-vector multiplier, interior
    active_set: np.ndarray   # lowest-index feasible subset (interior positions)
    sets_tried: int
    feasible_sets: int


def _load_and_obstacle(op, u, y_a):
    mesh = op.mesh
    if isinstance(u, DualField):
        f = np.array(u.values, dtype=float)
    else:
        f = mesh.m * mesh.to_interior(u.values if isinstance(u, NodalField) else u)
    ya = np.asarray(y_a.values if isinstance(y_a, NodalField) else y_a, dtype=float)
    ya = np.full(mesh.n_interior, float(ya)) if ya.ndim == 0 else mesh.to_interior(ya)
    return f, ya


def enumerate_vi(op: SparseOperator, u, y_a, tol: float = 1e-12) -> EnumerationResult:
    """Solve the discrete obstacle problem by trying all 2^n active sets."""
    n = op.dimension
    if n > ENUMERATION_CAP:
        raise InvalidArgument(f"enumeration limited to {ENUMERATION_CAP} unknowns, got {n}")
    f, ya = _load_and_obstacle(op, u, y_a)
    K = op.matrix.toarray()
    scale = 1.0 + np.abs(f).max(initial=0.0) + np.abs(ya).max(initial=0.0)
    found = None
    feasible = 0
    for mask in range(2 ** n):
        act = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        ina = ~act
        y = np.where(act, ya, 0.0)
        if ina.any():
            y[ina] = np.linalg.solve(K[np.ix_(ina, ina)], f[ina] - K[np.ix_(ina, act)] @ ya[act])
        xi = np.zeros(n)
        xi[act] = (K @ y - f)[act]
        if np.all(xi[act] >= -tol * scale) and np.all(y[ina] >= ya[ina] - tol * scale):
            feasible += 1
            if found is None:
                found = (y, xi, np.flatnonzero(act))
            elif (np.abs(y - found[0]).max() > 1e-12 * scale
                  or np.abs(xi - found[1]).max() > 1e-12 * scale):
                raise InternalError("two feasible active sets with different solutions")
    if found is None:
        raise InternalError("no feasible active set: the LCP has no solution")
    return EnumerationResult(found[0], found[1], found[2], 2 ** n, feasible)


def difference_quotients(op: SparseOperator, u, y_a, h, t_list):
    """Quotients (S(u + t h) - S(u)) / t on interior nodes, one row per t."""
    from .vi import solve_vi  # the solution map itself is the object under study

    mesh = op.mesh
    f, _ = _load_and_obstacle(op, u, y_a)
    g, _ = _load_and_obstacle(op, h, y_a)
    y0 = solve_vi(op, DualField(mesh, f), y_a).y.interior_values
    rows = []
    for t in t_list:
        yt = solve_vi(op, DualField(mesh, f + t * g), y_a).y.interior_values
        rows.append((yt - y0) / t)
    return np.array(rows)


def fd_directional(op: SparseOperator, u, y_a, h, t_list=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6)):
    """One-sided difference quotients and their Richardson-extrapolated limit.

    The quotient has an O(t) error for small t, so the last two quotients
    with ratio ``r = t_{k-1} / t_k`` are combined as ``(r q_k - q_{k-1}) / (r - 1)``.
    Returns ``(limit, quotients)`` with ``limit`` on interior nodes.
    """
    t = np.asarray(t_list, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(t <= 0) or np.any(np.diff(t) >= 0):
        raise InvalidArgument("t_list must be a decreasing sequence of positive steps")
    q = difference_quotients(op, u, y_a, h, t)
    r = t[-2] / t[-1]
    limit = (r * q[-1] - q[-2]) / (r - 1.0)
    return limit, q


def assemble_by_quadrature(mesh: Mesh, spec: OperatorSpec) -> sp.csc_matrix:
    """Interior stiffness matrix by a per-element loop with edge-midpoint quadrature.

    Coefficients are interpolated linearly to the quadrature points; the
    rule is exact for quadratics, hence exact for constant coefficients.
    """
    a, b, c, d = spec.nodal(mesh.n_nodes)
    qbary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    n = mesh.n_nodes
    rows, cols, vals = [], [], []
    for tri in mesh.triangles:
        p = mesh.nodes[tri]
        jac = np.array([p[1] - p[0], p[2] - p[0]]).T
        area = 0.5 * abs(np.linalg.det(jac))
        ref_grad = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        grad = ref_grad @ np.linalg.inv(jac)
        local = np.zeros((3, 3))
        for lam in qbary:
            w = area / 3.0
            aq = np.tensordot(lam, a[tri], axes=1)
            bq = np.tensordot(lam, b[tri], axes=1)
            cq = np.tensordot(lam, c[tri], axes=1)
            dq = lam @ d[tri]
            for i in range(3):
                for j in range(3):
                    local[i, j] += w * (grad[i] @ aq @ grad[j]
                                        + lam[j] * (bq @ grad[i])
                                        + lam[i] * (cq @ grad[j])
                                        + dq * lam[i] * lam[j])
        for i in range(3):
            for j in range(3):
                rows.append(tri[i])
                cols.append(tri[j])
                vals.append(local[i, j])
    full = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    idx = mesh.interior
    return full[idx][:, idx].tocsc()


def lq_kkt_solve(problem):
    """Coupled linear optimality system of the tracking problem without active bounds.

    Solves ``K y = M u``, ``K^T p = -M (y - y_d)`` and
    ``(alpha + w) u - w u_ref + g = p`` (``w`` the proximal weight) in one sparse factorization and
    returns interior ``(u, y, p)``.  Raises :class:`OracleInapplicable` if
    the solution touches the obstacle or the state bound, or leaves the
    control box.
    """
    op = problem.operator
    mesh = op.mesh
    n = mesh.n_interior
    M = sp.diags(mesh.m)
    I = sp.identity(n)
    K = op.matrix
    Z = sp.csr_matrix((n, n))
    w = problem.prox_weight
    # unknowns (y, u, p)
    system = sp.bmat([
        [K, -M, Z],
        [M, Z, K.T],
        [Z, (problem.alpha + w) * I, -I],
    ]).tocsc()
    rhs = np.concatenate([np.zeros(n), M @ problem.y_d, w * problem.u_ref - problem.g])
    sol = spla.splu(system).solve(rhs)
    y, u, p = sol[:n], sol[n:2 * n], sol[2 * n:]
    if np.any(y <= problem.y_a) or np.any(y >= problem.y_b):
        raise OracleInapplicable("state bounds are active at the LQ solution")
    if problem.u_box is not None:
        lo, hi = problem.u_box
        if np.any(u <= lo) or np.any(u >= hi):
            raise OracleInapplicable("control bounds are active at the LQ solution")
    return u, y, p
