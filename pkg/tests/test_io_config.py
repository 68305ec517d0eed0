import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obstacle_ocp import io
from obstacle_ocp.config import Expression, build_problem, load_config, parse_config
from obstacle_ocp.errors import InvalidArgument
from obstacle_ocp.fem import DualField, NodalField, build_structured_mesh
from obstacle_ocp.vi import solve_vi
from obstacle_ocp.fem import assemble_operator

MESH = build_structured_mesh(4)


def test_expression_evaluates():
    e = Expression("sin(pi*x) * max(y, 0.5) - -1")
    x = np.array([0.5, 0.25])
    y = np.array([0.0, 1.0])
    assert np.allclose(e(x, y), np.sin(np.pi * x) * np.maximum(y, 0.5) + 1)
    assert not e.is_constant and Expression("2*pi").is_constant


@pytest.mark.parametrize("text", ["__import__('os')", "x**2", "z + 1", "sin(x, y)",
                                  "max(x)", "x if y else 1", "'a'", "True", "x[0]",
                                  "sin(x=1)", "lambda: 1", "(x"])
def test_expression_rejects(text):
    with pytest.raises(InvalidArgument):
        Expression(text)


def test_expression_non_finite():
    with pytest.raises(InvalidArgument):
        Expression("1/x")(np.array([0.0]), np.array([0.0]))


def test_config_defaults_and_values():
    cfg = parse_config("mesh.nsub = 4  # comment\n\nobjective.alpha = 0.5\nschedule.prox = off\n")
    assert cfg["mesh.nsub"] == 4 and cfg["objective.alpha"] == 0.5
    assert cfg["seed"] == 42 and cfg["schedule.factor"] == 10.0
    problem, schedule = build_problem(cfg)
    assert problem.prox_weight == 0.0 and problem.mesh.n_sub == 4
    assert schedule.gammas[0] == 1.0 and schedule.gammas[-1] == 1e8


@pytest.mark.parametrize("text", [
    "mesh.size = 4",                                  # unknown key
    "mesh.nsub = 4\nmesh.nsub = 8",                  # duplicate
    "mesh.nsub",                                      # no '='
    "objective.alpha =",                              # empty
    "schedule.factor = 0.5",
    "schedule.gamma_start = 1e9",
    "tol.residual = -1",
    "tol.kkt = 0",
    "box.u_low = -1",
    "schedule.prox = sometimes",
    "mesh.nsub = four",
    "mesh.nsub = 1",
    "objective.alpha = -1",
])
def test_config_rejects(text):
    with pytest.raises(InvalidArgument):
        parse_config(text)


def test_config_parses_deterministically(tmp_path):
    text = "mesh.nsub = 6\nbounds.y_a = 0.1*sin(pi*x)*sin(pi*y) - 0.2\nseed = 7\n"
    path = tmp_path / "a.cfg"
    path.write_text(text)
    a, b = load_config(path), parse_config(text)
    assert {k: repr(v) for k, v in a.values.items()} == {k: repr(v) for k, v in b.values.items()}


def test_missing_config_file(tmp_path):
    with pytest.raises(InvalidArgument):
        load_config(tmp_path / "nope.cfg")


def test_variable_coefficients_build():
    cfg = parse_config("mesh.nsub = 4\nop.a11 = 1 + x\nop.d = 2\n")
    problem, _ = build_problem(cfg)
    K = problem.operator.matrix
    assert abs(K - K.T).max() < 1e-14


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=25, max_size=25))
def test_nodal_field_round_trip(vals):
    fld = NodalField(MESH, np.array(vals), "control")
    back = io.parse_field(io.format_field(fld, "u"), MESH)
    assert isinstance(back, NodalField) and np.array_equal(back.values, fld.values)


def test_dual_field_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fld = DualField(MESH, rng.normal(size=MESH.n_interior) * 1e-7, "measure")
    path = io.write_field(tmp_path / "nu.txt", fld)
    back = io.read_field(path, MESH)
    assert isinstance(back, DualField) and back.kind == "measure"
    assert np.array_equal(back.values, fld.values)


def test_field_mesh_mismatch():
    fld = NodalField(MESH, np.zeros(MESH.n_nodes))
    with pytest.raises(InvalidArgument):
        io.parse_field(io.format_field(fld), build_structured_mesh(8))


@pytest.mark.parametrize("text", ["", "nsub=4 kind=primal name=u size=2\n0 1.0\n",
                                  "nsub=4 kind=odd name=u size=1\n0 1.0\n",
                                  "nsub=4 kind=primal size\n",
                                  "nsub=4 kind=primal name=u size=2\n0 1.0\n5 2.0\n"])
def test_field_parse_errors(text):
    with pytest.raises(InvalidArgument):
        io.parse_field(text, MESH)


def test_vi_solution_dump_lists_sets():
    op = assemble_operator(MESH)
    sol = solve_vi(op, -10 * np.ones(MESH.n_interior), 0.0)
    text = io.format_vi_solution(sol)
    assert "active_sets" in text
    back = io.parse_field(text, MESH)
    assert np.array_equal(back.values, sol.y.values)
    line = [ln for ln in text.splitlines() if ln.startswith("strict")][0]
    assert [int(t) for t in line.split()[1:]] == list(sol.strict)


def test_csv_round_trip(tmp_path):
    rows = [{"a": 0.1, "b": 1e-300}, {"a": np.inf, "b": -2.0}]
    io.write_csv(tmp_path / "x.csv", rows, ("a", "b"))
    data = io.read_csv(tmp_path / "x.csv")
    assert data["a"][0] == 0.1 and data["b"][0] == 1e-300 and np.isinf(data["a"][1])


def test_vtk_written(tmp_path):
    fld = NodalField(MESH, np.arange(MESH.n_nodes, dtype=float), "control")
    dual = DualField(MESH, np.ones(MESH.n_interior), "measure")
    text = io.write_vtk(tmp_path / "f.vtk", MESH, {"y": fld, "xi": dual}).read_text()
    assert f"POINTS {MESH.n_nodes} double" in text
    assert "SCALARS xi double 1" in text and "SCALARS y double 1" in text
