"""
The obstacle problem  y >= y_a,  K y - M u = xi >= 0,  xi (y - y_a) = 0.

Solved by the primal-dual active set method (semismooth Newton applied to
``min(xi / m, c (y - y_a)) = 0``).  The same kernel solves the VI for the
directional derivative of the solution map on the critical cone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, InvalidData, SolverFailure
from .fem import DualField, NodalField, SparseOperator

MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class CriticalCone:
    """Discrete critical cone: zero on ``zero_indices``, >= 0 on ``nonneg_indices``.

    Index arrays refer to positions in the interior-node numbering.
    """

    zero_indices: np.ndarray
    nonneg_indices: np.ndarray
    free_indices: np.ndarray

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v)
        return bool(np.all(np.abs(v[self.zero_indices]) <= tol)
                    and np.all(v[self.nonneg_indices] >= -tol))


@dataclass(frozen=True, eq=False)
class VISolution:
    """Solution of the obstacle problem with classified index sets.

    ``active``, ``strict`` and ``biactive`` are positions in the interior
    numbering of the mesh (``mesh.interior[active]`` gives node ids).
    """

    y: NodalField
    xi: DualField
    y_a: np.ndarray              # interior obstacle values
    active: np.ndarray
    strict: np.ndarray
    biactive: np.ndarray
    eps_y: float
    eps_xi: float
    iterations: int = 0
    residual: float = 0.0

    @property
    def mesh(self):
        return self.y.mesh

    @property
    def critical_cone(self) -> CriticalCone:
        n = self.mesh.n_interior
        free = np.setdiff1d(np.arange(n), self.active)
        return CriticalCone(self.strict, self.biactive, free)


def complementarity_residual(y, xi_density, lower) -> float:
    return float(np.abs(np.minimum(xi_density, y - lower)).max(initial=0.0))


def classify(mesh, y_int, xi, y_a_int, eps_y=None, eps_xi=None):
    """Active / strictly active / biactive sets from nodal values.

    ``xi`` is the load-vector representation; the strict set is decided on
    its density so that the threshold does not depend on the mesh width.
    Exactly biactive nodes (y = y_a, xi = 0) land in the biactive set.
    """
    dens = xi / mesh.m
    if eps_y is None:
        eps_y = 1e-9 * (1.0 + np.abs(y_a_int).max(initial=0.0))
    if eps_xi is None:
        eps_xi = 1e-9 * (1.0 + np.abs(dens).max(initial=0.0))
    active = np.flatnonzero(y_int <= y_a_int + eps_y)
    strict = active[dens[active] >= eps_xi]
    biactive = np.setdiff1d(active, strict)
    return active, strict, biactive, float(eps_y), float(eps_xi)


def _factor(mat):
    return spla.splu(mat.tocsc())


def pdas(K, f, lower, constrained, weights, c=1.0, max_iter=MAX_ITER, active0=None):
    """Primal-dual active set method for a unilateral linear complementarity problem.

    Finds ``x`` with ``x >= lower`` and ``mult := K x - f >= 0`` on the
    index mask ``constrained``, ``mult = 0`` elsewhere, and
    ``mult * (x - lower) = 0``.  Returns ``(x, mult, iterations)``.
    """
    n = f.size
    constrained = np.asarray(constrained, dtype=bool)
    K = K.tocsr()
    if active0 is None:
        active = np.zeros(n, dtype=bool)
    else:
        active = np.zeros(n, dtype=bool)
        active[active0] = True
        active &= constrained
    x = np.zeros(n)
    mult = np.zeros(n)
    for it in range(1, max_iter + 1):
        inactive = ~active
        x = np.where(active, lower, 0.0)
        if inactive.any():
            ii = np.flatnonzero(inactive)
            ia = np.flatnonzero(active)
            rhs = f[ii] - K[ii][:, ia] @ lower[ia]
            x[ii] = _factor(K[ii][:, ii]).solve(rhs)
        mult = np.zeros(n)
        mult[active] = (K @ x - f)[active]
        new_active = constrained & (mult / weights + c * (lower - x) > 0.0)
        if np.array_equal(new_active, active):
            return x, mult, it
        # exactly biactive nodes can toggle on round-off once the triple holds
        dens = mult / weights
        scale = 1.0 + np.abs(f / weights).max(initial=0.0) + np.abs(dens).max(initial=0.0)
        free = ~constrained
        if (complementarity_residual(x[constrained], dens[constrained], lower[constrained])
                <= 1e-13 * scale and np.all(dens[free] == 0.0)):
            return x, mult, it
        active = new_active
    lo = np.where(constrained, lower, -np.inf)
    raise SolverFailure(
        f"primal-dual active set method did not converge in {max_iter} iterations",
        residual=complementarity_residual(x[constrained], (mult / weights)[constrained],
                                          lo[constrained]),
    )


def _load(op: SparseOperator, u) -> np.ndarray:
    """Load vector of a control.

    NodalFields and plain arrays are densities and get lumped; a DualField
    is already a load vector.
    """
    mesh = op.mesh
    if isinstance(u, DualField):
        return np.array(u.values, dtype=float)
    vals = u.values if isinstance(u, NodalField) else u
    return mesh.m * mesh.to_interior(vals)


def _obstacle(op: SparseOperator, y_a) -> np.ndarray:
    mesh = op.mesh
    vals = np.asarray(y_a.values if isinstance(y_a, NodalField) else y_a, dtype=float)
    if vals.ndim == 0:
        vals = np.full(mesh.n_nodes, float(vals))
    if vals.shape == (mesh.n_nodes,):
        if np.any(vals[mesh.boundary_mask] > 0.0):
            raise InvalidData("obstacle must satisfy y_a <= 0 on the boundary")
        return vals[mesh.interior]
    return mesh.to_interior(vals)


def solve_vi(op: SparseOperator, u, y_a, c: float = 1.0, max_iter: int = MAX_ITER,
             active0=None) -> VISolution:
    """Solve the obstacle problem for control ``u`` (nodal density or load vector)."""
    mesh = op.mesh
    f = _load(op, u)
    lower = _obstacle(op, y_a)
    n = mesh.n_interior
    x, xi, it = pdas(op.matrix, f, lower, np.ones(n, dtype=bool), mesh.m, c,
                     max_iter, active0)
    dens = xi / mesh.m
    res = complementarity_residual(x, dens, lower)
    scale = 1.0 + np.abs(lower).max(initial=0.0) + np.abs(dens).max(initial=0.0)
    if res > 1e-10 * scale:
        raise SolverFailure("complementarity residual too large", residual=res)
    active, strict, biactive, eps_y, eps_xi = classify(mesh, x, xi, lower)
    return VISolution(
        y=NodalField(mesh, mesh.extend(x)),
        xi=DualField(mesh, xi, "measure"),
        y_a=lower, active=active, strict=strict, biactive=biactive,
        eps_y=eps_y, eps_xi=eps_xi, iterations=it, residual=res,
    )


def solution_map(op: SparseOperator, y_a):
    """``u -> S(u)`` on interior values, for repeated evaluations."""
    def S(u):
        return solve_vi(op, u, y_a).y.interior_values
    return S


def directional_derivative(op: SparseOperator, sol: VISolution, h,
                           c: float = 1.0, max_iter: int = MAX_ITER) -> NodalField:
    """Directional derivative S'(u; h) as the solution of the VI on the critical cone."""
    mesh = op.mesh
    rhs = _load(op, h)
    n = mesh.n_interior
    keep = np.ones(n, dtype=bool)
    keep[sol.strict] = False
    z = np.zeros(n)
    if keep.any():
        r = np.flatnonzero(keep)
        nonneg = np.zeros(n, dtype=bool)
        nonneg[sol.biactive] = True
        Krr = op.matrix[r][:, r]
        zr, _, _ = pdas(Krr, rhs[r], np.zeros(r.size), nonneg[r], mesh.m[r], c, max_iter)
        z[r] = zr
    return NodalField(mesh, mesh.extend(z))


def check_monotonicity(op: SparseOperator, u1, u2, y_a, tol: float = 1e-10) -> bool:
    """u1 <= u2 implies S(u1) <= S(u2) (checked nodewise up to ``tol``)."""
    f1, f2 = _load(op, u1), _load(op, u2)
    if np.any(f1 > f2):
        raise InvalidArgument("monotonicity check needs u1 <= u2 nodewise")
    y1 = solve_vi(op, DualField(op.mesh, f1), y_a).y.values
    y2 = solve_vi(op, DualField(op.mesh, f2), y_a).y.values
    return bool(np.all(y1 <= y2 + tol))


def check_convexity(op: SparseOperator, u1, u2, alpha: float, y_a,
                    tol: float = 1e-10) -> bool:
    """S(a u1 + (1-a) u2) <= a S(u1) + (1-a) S(u2) nodewise."""
    if not 0.0 < alpha < 1.0:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha}")
    f1, f2 = _load(op, u1), _load(op, u2)
    y1 = solve_vi(op, DualField(op.mesh, f1), y_a).y.values
    y2 = solve_vi(op, DualField(op.mesh, f2), y_a).y.values
    ym = solve_vi(op, DualField(op.mesh, alpha * f1 + (1 - alpha) * f2), y_a).y.values
    return bool(np.all(ym <= alpha * y1 + (1 - alpha) * y2 + tol))
