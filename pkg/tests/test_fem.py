import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from obstacle_ocp.errors import InvalidArgument, InvalidCoefficients
from obstacle_ocp.fem import (DualField, NodalField, OperatorSpec, assemble_mass,
                              assemble_operator, build_structured_mesh, coercivity_constant,
                              hminus1_norm, norms, solve_linear)
from obstacle_ocp.oracle import assemble_by_quadrature


@pytest.mark.parametrize("n,nodes,interior", [(2, 9, 1), (4, 25, 9), (32, 1089, 961)])
def test_mesh_counts(n, nodes, interior):
    mesh = build_structured_mesh(n)
    assert mesh.n_nodes == nodes
    assert mesh.n_interior == interior
    assert len(mesh.triangles) == 2 * n * n


def test_mesh_geometry():
    mesh = build_structured_mesh(5)
    p = mesh.nodes[mesh.triangles]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    assert np.allclose(signed, mesh.h ** 2 / 2)
    x, y = mesh.nodes.T
    on_bnd = (x == 0) | (x == 1) | (y == 0) | (y == 1)
    assert np.array_equal(mesh.boundary_mask, on_bnd)
    # lexicographic (row, col)
    assert np.allclose(mesh.nodes[8], (2 * mesh.h, 1 * mesh.h))


def test_mesh_too_coarse():
    with pytest.raises(InvalidArgument):
        build_structured_mesh(1)


def test_single_interior_entry():
    op = assemble_operator(build_structured_mesh(2))
    assert op.matrix.shape == (1, 1)
    assert op.matrix[0, 0] == 4.0


def test_mass_weights():
    mesh = build_structured_mesh(2)
    M, m = assemble_mass(mesh)
    assert m[mesh.interior][0] == pytest.approx(0.25)
    assert mesh.m[0] == pytest.approx(0.25)
    assert mesh.lumped_weights.sum() == pytest.approx(1.0)
    one = np.ones(mesh.n_nodes)
    assert one @ (mesh.mass_matrix @ one) == pytest.approx(1.0)
    assert np.all(build_structured_mesh(7).lumped_weights > 0)


def test_solve_by_hand():
    mesh = build_structured_mesh(2)
    op = assemble_operator(mesh)
    rhs = DualField.lumped(mesh, np.ones(mesh.n_nodes))
    x = solve_linear(op, rhs)
    assert x.interior_values[0] == pytest.approx(0.0625)
    assert norms(rhs)["h_minus1"] == pytest.approx(0.125)
    assert np.all(solve_linear(op, DualField(mesh, [0.0])).values == 0)


def test_solve_round_trip(rng):
    mesh = build_structured_mesh(12)
    op = assemble_operator(mesh, OperatorSpec(b=(1.0, 0.5), d=0.3))
    r = rng.normal(size=mesh.n_interior)
    x = solve_linear(op, DualField(mesh, r)).interior_values
    assert np.abs(op.matrix @ x - r).max() <= 1e-12 * (1 + np.abs(r).max())
    xt = solve_linear(op, DualField(mesh, r), transpose=True).interior_values
    assert np.abs(op.matrix.T @ xt - r).max() <= 1e-12 * (1 + np.abs(r).max())


def test_symmetry_and_convection():
    mesh = build_structured_mesh(6)
    sym = assemble_operator(mesh, OperatorSpec(d=2.0)).matrix
    assert (sym != sym.T).nnz == 0
    conv = assemble_operator(mesh, OperatorSpec(b=(1.0, 0.0))).matrix
    ref = assemble_by_quadrature(mesh, OperatorSpec(b=(1.0, 0.0)))
    skew = conv - conv.T
    assert abs(skew - (ref - ref.T)).max() <= 1e-13
    assert abs(skew).max() > 0.1


@pytest.mark.parametrize("spec", [
    OperatorSpec(),
    OperatorSpec(a=((2.0, 0.3), (0.3, 1.0)), b=(0.5, -0.2), c=(0.1, 0.4), d=1.5),
])
def test_quadrature_oracle_constant(spec):
    mesh = build_structured_mesh(7)
    K = assemble_operator(mesh, spec).matrix
    assert abs(K - assemble_by_quadrature(mesh, spec)).max() <= 1e-13


def test_variable_coefficients_close_to_oracle():
    mesh = build_structured_mesh(16)
    x, y = mesh.nodes.T
    a = np.zeros((mesh.n_nodes, 2, 2))
    a[:, 0, 0] = a[:, 1, 1] = 1 + x * y
    spec = OperatorSpec(a=a, d=1 + x)
    K = assemble_operator(mesh, spec).matrix
    ref = assemble_by_quadrature(mesh, spec)
    assert abs(K - ref).max() < 5e-3


def test_ellipticity_violation():
    mesh = build_structured_mesh(4)
    with pytest.raises(InvalidCoefficients):
        assemble_operator(mesh, OperatorSpec(a=((1.0, 0.0), (0.0, -0.5))))


def test_coercivity_positive():
    mesh = build_structured_mesh(8)
    op = assemble_operator(mesh, OperatorSpec(b=(0.5, 0.5), d=0.1))
    assert op.coercivity > 0
    assert coercivity_constant(op.matrix, mesh) == pytest.approx(op.coercivity)


def test_poisson_refinement_trend():
    maxima = []
    for n in (4, 8, 16, 32):
        mesh = build_structured_mesh(n)
        op = assemble_operator(mesh)
        y = solve_linear(op, DualField.lumped(mesh, np.ones(mesh.n_nodes)))
        maxima.append(y.values.max())
    assert np.all(np.diff(maxima) > 0)
    assert maxima[-1] == pytest.approx(0.0737, abs=2e-3)


def test_norms_basic():
    mesh = build_structured_mesh(6)
    z = norms(NodalField(mesh, np.zeros(mesh.n_nodes)))
    assert all(v == 0 for v in z.values())
    one = norms(NodalField(mesh, np.ones(mesh.n_nodes), "control"))
    assert one["l2"] == pytest.approx(1.0)
    assert one["linf"] == 1.0


def test_primal_field_boundary():
    mesh = build_structured_mesh(3)
    with pytest.raises(InvalidArgument):
        NodalField(mesh, np.ones(mesh.n_nodes))
    NodalField(mesh, np.ones(mesh.n_nodes), "control")


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 31 - 1))
def test_adjoint_pairing_exact(n, seed):
    mesh = build_structured_mesh(n)
    op = assemble_operator(mesh, OperatorSpec(b=(0.7, -0.3), c=(0.2, 0.1)))
    r = np.random.default_rng(seed)
    x, z = r.normal(size=(2, mesh.n_interior))
    K = op.matrix
    assert z @ (K @ x) == pytest.approx(x @ (op.adjoint().matrix @ z), rel=1e-14, abs=1e-14)
    assert (op.adjoint().matrix != K.T).nnz == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_norms_nonnegative_zero_iff_zero(seed):
    mesh = build_structured_mesh(5)
    r = np.random.default_rng(seed)
    v = r.normal(size=mesh.n_interior)
    nm = norms(DualField(mesh, v))
    assert all(val > 0 for val in nm.values())
    assert hminus1_norm(mesh, np.zeros(mesh.n_interior)) == 0.0


def test_coercivity_measured_against_h1():
    mesh = build_structured_mesh(10)
    op = assemble_operator(mesh, OperatorSpec(b=(1.0, 0.0), d=0.5))
    r = np.random.default_rng(0)
    K0 = mesh.laplacian_interior
    Ksym = 0.5 * (op.matrix + op.matrix.T)
    for _ in range(20):
        x = r.normal(size=mesh.n_interior)
        assert x @ (Ksym @ x) >= op.coercivity * (x @ (K0 @ x)) * (1 - 1e-10) - 1e-12
