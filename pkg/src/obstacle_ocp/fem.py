"""
P1 finite elements on the unit square.

Structured triangulation, assembly of the general second-order operator

    <A y, v> = ∫ ∇v·a∇y + y (b·∇v) + v (c·∇y) + d y v dx

restricted to interior nodes (homogeneous Dirichlet data), lumped and
consistent mass matrices, discrete norms and direct sparse solves.

Conventions
-----------
* Functions (states, controls, adjoints, obstacles) are :class:`NodalField`
  objects holding one value per mesh node.
* Functionals (multipliers, residuals, load vectors) are :class:`DualField`
  objects holding one value per *interior* node.  The stored value is the
  functional applied to the hat function of that node, so a density ``f``
  is represented by ``m_i f_i`` with lumped weights ``m_i`` and the pairing
  with a function ``v`` is simply ``sum_i values_i v_i``.  For nonnegative
  measures these are the nodal masses and ``sum(values)`` is the total
  variation norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, InvalidCoefficients, SolverFailure

NODAL_KINDS = ("primal", "control")
DUAL_KINDS = ("residual", "measure")


# ---------------------------------------------------------------- mesh ----

@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform right-triangle mesh of [0, 1]^2.

    Nodes are numbered lexicographically by (row, col), i.e. node
    ``row * (n_sub + 1) + col`` sits at ``(col * h, row * h)``.  Every
    square cell is split along its south-west/north-east diagonal.
    """

    n_sub: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray

    @property
    def h(self) -> float:
        return 1.0 / self.n_sub

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def n_interior(self) -> int:
        return self.interior.size

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the three barycentric functions, (nt, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        twice_area = 2.0 * self.areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        return np.stack([gx, gy], axis=2) / twice_area[:, None, None]

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        """Consistent P1 mass matrix over all nodes."""
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        vals = self.areas[:, None, None] * local[None]
        return _scatter(self.triangles, vals, self.n_nodes)

    @cached_property
    def lumped_weights(self) -> np.ndarray:
        """Row sums of the mass matrix, all nodes."""
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return w

    @cached_property
    def m(self) -> np.ndarray:
        """Lumped weights of the interior nodes."""
        return self.lumped_weights[self.interior]

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Stiffness matrix of -Δ over all nodes (no boundary conditions)."""
        g = self.gradients
        vals = self.areas[:, None, None] * np.einsum("tik,tjk->tij", g, g)
        return _scatter(self.triangles, vals, self.n_nodes)

    @cached_property
    def laplacian_interior(self) -> sp.csc_matrix:
        idx = self.interior
        return self.laplacian[idx][:, idx].tocsc()

    @cached_property
    def _laplacian_lu(self):
        return spla.splu(self.laplacian_interior)

    def to_interior(self, values) -> np.ndarray:
        """Interior values of a full nodal vector (or pass interior vectors through)."""
        v = np.asarray(values, dtype=float)
        if v.shape == (self.n_nodes,):
            return v[self.interior]
        if v.shape == (self.n_interior,):
            return v.copy()
        raise InvalidArgument(
            f"vector of shape {v.shape} fits neither {self.n_nodes} nodes "
            f"nor {self.n_interior} interior nodes"
        )

    def extend(self, interior_values, boundary_value: float = 0.0) -> np.ndarray:
        """Full nodal vector from interior values; boundary set to a constant."""
        out = np.full(self.n_nodes, float(boundary_value))
        out[self.interior] = interior_values
        return out

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of a callable ``f(x, y)`` or a constant."""
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        if callable(f):
            return np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy()
        return np.full(self.n_nodes, float(f))

    def node_distances(self, i: np.ndarray, j: np.ndarray) -> float:
        """Smallest Euclidean distance between two node sets (inf if one is empty)."""
        i, j = np.asarray(i), np.asarray(j)
        if i.size == 0 or j.size == 0:
            return float("inf")
        a, b = self.nodes[i], self.nodes[j]
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return float(np.sqrt(d2.min()))


def _scatter(triangles, local_vals, n) -> sp.csr_matrix:
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    # duplicate entries are summed in COO order, which is fixed by the mesh
    return sp.coo_matrix((local_vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def build_structured_mesh(n_sub: int) -> Mesh:
    """Structured triangulation with ``2 * n_sub**2`` triangles of area h^2/2."""
    if int(n_sub) != n_sub or n_sub < 2:
        raise InvalidArgument(f"n_sub must be an integer >= 2, got {n_sub!r}")
    n = int(n_sub)
    h = 1.0 / n
    rows, cols = np.divmod(np.arange((n + 1) ** 2), n + 1)
    nodes = np.column_stack([cols * h, rows * h])
    r, c = np.divmod(np.arange(n * n), n)
    ll = r * (n + 1) + c
    lr, ul, ur = ll + 1, ll + n + 1, ll + n + 2
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([ll, lr, ur])
    tris[1::2] = np.column_stack([ll, ur, ul])
    boundary = (rows == 0) | (rows == n) | (cols == 0) | (cols == n)
    for arr in (nodes, tris, boundary):
        arr.setflags(write=False)
    return Mesh(n, nodes, tris, boundary)


# -------------------------------------------------------------- fields ----

@dataclass(frozen=True, eq=False)
class NodalField:
    mesh: Mesh
    values: np.ndarray
    kind: str = "primal"

    def __post_init__(self):
        if self.kind not in NODAL_KINDS:
            raise InvalidArgument(f"unknown nodal kind {self.kind!r}")
        v = np.array(self.values, dtype=float)
        if v.shape == (self.mesh.n_interior,):
            v = self.mesh.extend(v)
        if v.shape != (self.mesh.n_nodes,):
            raise InvalidArgument(f"nodal field needs {self.mesh.n_nodes} values")
        if self.kind == "primal" and np.any(v[self.mesh.boundary_mask] != 0.0):
            raise InvalidArgument("H0^1 field must vanish on boundary nodes")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.mesh.interior]


@dataclass(frozen=True, eq=False)
class DualField:
    mesh: Mesh
    values: np.ndarray
    kind: str = "residual"

    def __post_init__(self):
        if self.kind not in DUAL_KINDS:
            raise InvalidArgument(f"unknown dual kind {self.kind!r}")
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n_interior,):
            raise InvalidArgument(f"dual field needs {self.mesh.n_interior} values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def density(self) -> np.ndarray:
        return self.values / self.mesh.m

    def pair(self, v) -> float:
        return float(self.values @ self.mesh.to_interior(
            v.values if isinstance(v, NodalField) else v))

    @classmethod
    def lumped(cls, mesh: Mesh, density, kind: str = "residual") -> "DualField":
        """Lumped load vector of a nodal density."""
        return cls(mesh, mesh.m * mesh.to_interior(density), kind)


Field = Union[NodalField, DualField]


# ------------------------------------------------------------ operator ----

def _as_node_field(value, shape_tail, n_nodes, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape == shape_tail:
        return np.broadcast_to(arr, (n_nodes,) + shape_tail)
    if arr.shape == (n_nodes,) + shape_tail:
        return arr
    raise InvalidArgument(f"coefficient {name} has shape {arr.shape}")


@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients of the elliptic operator.

    Each coefficient is either a constant (``a``: 2x2, ``b``/``c``: 2-vector,
    ``d``: scalar) or a per-node array with a leading node axis.
    """

    a: object = ((1.0, 0.0), (0.0, 1.0))
    b: object = (0.0, 0.0)
    c: object = (0.0, 0.0)
    d: object = 0.0

    @classmethod
    def laplacian(cls) -> "OperatorSpec":
        return cls()

    def is_constant(self) -> bool:
        return (np.ndim(self.a) == 2 and np.ndim(self.b) == 1
                and np.ndim(self.c) == 1 and np.ndim(self.d) == 0)

    def is_symmetric(self) -> bool:
        """True when the assembled operator is symmetric (b = c, a symmetric)."""
        a = np.asarray(self.a, dtype=float)
        return (np.array_equal(np.asarray(self.b, float), np.asarray(self.c, float))
                and np.array_equal(a, np.swapaxes(a, -1, -2)))

    def nodal(self, n_nodes: int):
        a = _as_node_field(self.a, (2, 2), n_nodes, "a")
        b = _as_node_field(self.b, (2,), n_nodes, "b")
        c = _as_node_field(self.c, (2,), n_nodes, "c")
        d = _as_node_field(self.d, (), n_nodes, "d")
        return a, b, c, d

    def ellipticity(self, n_nodes: int = 1) -> float:
        """Smallest eigenvalue of the symmetric part of ``a`` over all nodes."""
        a = _as_node_field(self.a, (2, 2), max(n_nodes, 1), "a")
        sym = 0.5 * (a + np.swapaxes(a, -1, -2))
        return float(np.linalg.eigvalsh(sym)[..., 0].min())


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Discrete operator on interior nodes; ``matrix[i, j] = <A φ_j, φ_i>``."""

    matrix: sp.csc_matrix
    mesh: Mesh
    spec: OperatorSpec = field(default_factory=OperatorSpec)
    ellipticity: float = float("nan")
    coercivity: float = float("nan")

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def lu(self):
        return spla.splu(self.matrix.tocsc())

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(self.matrix.T.tocsc(), self.mesh, self.spec,
                              self.ellipticity, self.coercivity)

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        return self.lu.solve(np.asarray(rhs, dtype=float), trans="T" if transpose else "N")

    @cached_property
    def is_symmetric(self) -> bool:
        return (self.matrix != self.matrix.T).nnz == 0


def _local_matrices(mesh: Mesh, spec: OperatorSpec) -> np.ndarray:
    """Element matrices with coefficients frozen at the centroid."""
    a, b, c, d = spec.nodal(mesh.n_nodes)
    tri = mesh.triangles
    a_t, b_t, c_t, d_t = (np.asarray(x)[tri].mean(axis=1) for x in (a, b, c, d))
    g = mesh.gradients                       # (nt, 3, 2)
    area = mesh.areas
    diff = np.einsum("tik,tkl,tjl->tij", g, a_t, g)   # ∇φ_i · a ∇φ_j
    bgrad = np.einsum("tik,tk->ti", g, b_t)           # b · ∇φ_i (test)
    cgrad = np.einsum("tjk,tk->tj", g, c_t)           # c · ∇φ_j (trial)
    conv = bgrad[:, :, None] / 3.0 + cgrad[:, None, :] / 3.0
    react = d_t[:, None, None] * (np.ones((3, 3)) + np.eye(3)) / 12.0
    return area[:, None, None] * (diff + conv + react)


def coercivity_constant(matrix, mesh: Mesh) -> float:
    """Smallest generalized eigenvalue of sym(K) relative to the H^1 Gram matrix."""
    idx = mesh.interior
    gram = (mesh.laplacian + mesh.mass_matrix)[idx][:, idx]
    ksym = 0.5 * (matrix + matrix.T)
    if mesh.n_interior <= 2500:
        return float(scipy.linalg.eigh(ksym.toarray(), gram.toarray(),
                                       eigvals_only=True, subset_by_index=[0, 0])[0])
    val = spla.eigsh(ksym.tocsc(), k=1, M=gram.tocsc(), which="SA",
                     return_eigenvectors=False)
    return float(val[0])


def assemble_operator(mesh: Mesh, spec: OperatorSpec | None = None,
                      check_coercivity: bool = True) -> SparseOperator:
    """Assemble the interior stiffness matrix of ``spec`` on ``mesh``.

    Raises :class:`InvalidCoefficients` if the leading coefficient is not
    uniformly elliptic or the assembled form is not coercive.
    """
    spec = spec or OperatorSpec()
    gamma0 = spec.ellipticity(mesh.n_nodes)
    if not gamma0 > 0:
        raise InvalidCoefficients(f"operator is not strictly elliptic (gamma0={gamma0:g})")
    full = _scatter(mesh.triangles, _local_matrices(mesh, spec), mesh.n_nodes)
    idx = mesh.interior
    k = full[idx][:, idx].tocsc()
    k.sort_indices()
    gamma1 = float("nan")
    if check_coercivity:
        gamma1 = coercivity_constant(k, mesh)
        if not gamma1 > 0:
            raise InvalidCoefficients(f"bilinear form is not coercive (gamma1={gamma1:g})")
    return SparseOperator(k, mesh, spec, gamma0, gamma1)


def assemble_mass(mesh: Mesh):
    """Consistent interior mass matrix wrapped as an operator, and lumped weights."""
    idx = mesh.interior
    m = mesh.mass_matrix[idx][:, idx].tocsc()
    return SparseOperator(m, mesh), mesh.lumped_weights.copy()


# -------------------------------------------------------------- solves ----

def _rhs_vector(op: SparseOperator, rhs) -> np.ndarray:
    if isinstance(rhs, DualField):
        return np.asarray(rhs.values, dtype=float)
    r = np.asarray(rhs, dtype=float)
    if r.shape != (op.dimension,):
        raise InvalidArgument(f"rhs has shape {r.shape}, operator dimension {op.dimension}")
    return r


def solve_linear(op: SparseOperator, rhs, transpose: bool = False,
                 kind: str = "primal") -> NodalField:
    """Solve ``K x = r`` (or ``K^T x = r``) by sparse LU with one refinement step."""
    r = _rhs_vector(op, rhs)
    try:
        x = op.solve(r, transpose)
    except RuntimeError as exc:  # singular factor
        raise SolverFailure(f"sparse factorization failed: {exc}") from exc
    mat = op.matrix.T if transpose else op.matrix
    res = r - mat @ x
    tol = 1e-12 * (1.0 + np.linalg.norm(r))
    if np.linalg.norm(res) > tol:
        x = x + op.solve(res, transpose)
        res = r - mat @ x
    if not np.all(np.isfinite(x)) or np.linalg.norm(res) > tol:
        raise SolverFailure("linear solve did not reach the residual tolerance",
                            residual=float(np.linalg.norm(res)))
    return NodalField(op.mesh, op.mesh.extend(x), kind)


# --------------------------------------------------------------- norms ----

def hminus1_norm(mesh: Mesh, r: np.ndarray) -> float:
    """sqrt(r^T K0^{-1} r) with K0 the interior Dirichlet Laplacian."""
    r = np.asarray(r, dtype=float)
    return float(np.sqrt(max(r @ mesh._laplacian_lu.solve(r), 0.0)))


def l2_norm(mesh: Mesh, v: np.ndarray) -> float:
    """Consistent-mass L2 norm of a full nodal vector."""
    return float(np.sqrt(max(v @ (mesh.mass_matrix @ v), 0.0)))


def lumped_l2(mesh: Mesh, v_int: np.ndarray) -> float:
    """Lumped L2 norm of an interior nodal vector."""
    return float(np.sqrt(np.sum(mesh.m * v_int ** 2)))


def norms(fld: Field) -> dict:
    mesh = fld.mesh
    if isinstance(fld, NodalField):
        v = fld.values
        return {
            "l2": l2_norm(mesh, v),
            "h1_semi": float(np.sqrt(max(v @ (mesh.laplacian @ v), 0.0))),
            "linf": float(np.abs(v).max(initial=0.0)),
            "h_minus1": hminus1_norm(mesh, mesh.m * v[mesh.interior]),
        }
    dens = fld.density
    hm1 = hminus1_norm(mesh, fld.values)
    return {
        "l2": lumped_l2(mesh, dens),
        "h1_semi": hm1,   # energy norm of the Riesz representative
        "linf": float(np.abs(dens).max(initial=0.0)),
        "h_minus1": hm1,
    }
