"""
Flat ``key = value`` scenario files.

Lines are ``key = value``; ``#`` starts a comment.  Keys are fixed (see
``KEYS``) and unknown keys are rejected.  Field-valued entries accept an
expression in ``x`` and ``y`` built from numbers, ``pi``, ``+ - * /``,
unary minus and the functions ``sin cos exp min max``.  Example::

    mesh.nsub = 16
    bounds.y_a = 0.4 * 16*x*(1-x)*y*(1-y) - 0.1
    bounds.y_b = 1
    objective.alpha = 0.01
    schedule.prox = off
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp,
          "min": np.minimum, "max": np.maximum}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}


class Expression:
    """Parsed expression over ``x`` and ``y``; callable on coordinate arrays."""

    def __init__(self, text: str):
        self.text = text.strip()
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise InvalidArgument(f"cannot parse expression {text!r}") from exc
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise InvalidArgument(f"literal {node.value!r} not allowed in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in ("x", "y", "pi"):
                raise InvalidArgument(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise InvalidArgument(f"operator not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise InvalidArgument(f"operator not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS) or node.keywords:
                raise InvalidArgument(f"function call not allowed in {self.text!r}")
            want = 1 if node.func.id in ("sin", "cos", "exp") else 2
            if len(node.args) != want:
                raise InvalidArgument(f"{node.func.id} takes {want} argument(s)")
            for a in node.args:
                self._check(a)
        else:
            raise InvalidArgument(f"construct not allowed in {self.text!r}")

    def _eval(self, node, x, y):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return {"x": x, "y": y, "pi": math.pi}[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, x, y),
                                          self._eval(node.right, x, y))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, x, y)
            return -v if isinstance(node.op, ast.USub) else v
        return _FUNCS[node.func.id](*(self._eval(a, x, y) for a in node.args))

    @property
    def is_constant(self) -> bool:
        return not any(isinstance(n, ast.Name) and n.id in ("x", "y")
                       for n in ast.walk(self._tree))

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(all="raise"):
            try:
                v = self._eval(self._tree, x, y)
            except FloatingPointError as exc:
                raise InvalidArgument(f"expression {self.text!r} is not finite") from exc
        return np.broadcast_to(np.asarray(v, dtype=float), np.broadcast(x, y).shape)

    def __repr__(self):
        return f"Expression({self.text!r})"


def _expr(s):
    return Expression(s)


def _pos_float(s):
    v = float(s)
    if not v > 0:
        raise InvalidArgument(f"expected a positive number, got {s!r}")
    return v


def _bool(s):
    s = s.strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise InvalidArgument(f"expected a boolean, got {s!r}")


def _prox(s):
    s = s.strip()
    if s not in ("initial", "previous", "off"):
        raise InvalidArgument(f"schedule.prox must be initial, previous or off, got {s!r}")
    return s


# key -> (parser, default)
KEYS = {
    "mesh.nsub": (int, 8),
    "op.a11": (_expr, "1"), "op.a12": (_expr, "0"),
    "op.a21": (_expr, "0"), "op.a22": (_expr, "1"),
    "op.b1": (_expr, "0"), "op.b2": (_expr, "0"),
    "op.c1": (_expr, "0"), "op.c2": (_expr, "0"),
    "op.d": (_expr, "0"),
    "bounds.y_a": (_expr, "-1"),
    "bounds.y_b": (_expr, "1"),
    "objective.y_d": (_expr, "0"),
    "objective.alpha": (float, 1.0),
    "objective.g": (_expr, "0"),
    "objective.u_ref": (_expr, "0"),
    "prox.weight": (float, 1.0),
    "box.u_low": (_expr, None),
    "box.u_high": (_expr, None),
    "schedule.gamma_start": (_pos_float, 1.0),
    "schedule.gamma_end": (_pos_float, 1e8),
    "schedule.factor": (float, 10.0),
    "schedule.prox": (_prox, "initial"),
    "tol.kkt": (_pos_float, 1e-8),
    "tol.residual": (_pos_float, 1e-6),
    "tol.sign": (_pos_float, 1e-8),
    "tol.active": (_pos_float, None),
    "tol.b_stationarity": (_pos_float, 1e-6),
    "tol.membership": (_pos_float, 1e-9),
    "output.dir": (str, "out"),
    "seed": (int, 42),
    "slater.u_hat": (_expr, None),
    "oracle.enumerate": (_bool, True),
    "oracle.instances": (int, 10),
    "verify.directions": (int, 100),
}


@dataclass
class ScenarioConfig:
    values: dict = field(default_factory=dict)
    source: str = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)


def parse_config(text: str, source: str = None) -> ScenarioConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise InvalidArgument(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise InvalidArgument(f"line {lineno}: duplicate key {key!r}")
        if not val:
            raise InvalidArgument(f"line {lineno}: empty value for {key!r}")
        raw[key] = val
    values = {}
    for key, (parse, default) in KEYS.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise InvalidArgument(f"bad value for {key}: {raw[key]!r}") from exc
        else:
            values[key] = parse(default) if isinstance(default, str) and parse is not str \
                else default
    if values["mesh.nsub"] < 2:
        raise InvalidArgument("mesh.nsub must be at least 2")
    if not values["schedule.factor"] > 1:
        raise InvalidArgument("schedule.factor must exceed 1")
    if values["schedule.gamma_start"] > values["schedule.gamma_end"]:
        raise InvalidArgument("schedule.gamma_start exceeds schedule.gamma_end")
    if (values["box.u_low"] is None) != (values["box.u_high"] is None):
        raise InvalidArgument("box.u_low and box.u_high must be given together")
    if values["objective.alpha"] < 0:
        raise InvalidArgument("objective.alpha must be nonnegative")
    if values["prox.weight"] < 0:
        raise InvalidArgument("prox.weight must be nonnegative")
    return ScenarioConfig(values, source)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


# ------------------------------------------------------------ building ----

def _field_or_const(expr: Expression):
    return float(expr(0.0, 0.0)) if expr.is_constant else expr


def _coef(mesh, exprs):
    """Constant array when all entries are constant, else per-node values."""
    if all(e.is_constant for e in exprs):
        return np.array([float(e(0.0, 0.0)) for e in exprs])
    return np.stack([mesh.interpolate(e) for e in exprs], axis=-1)


def build_problem(cfg: ScenarioConfig):
    """Mesh, operator, problem and schedule described by a config."""
    from .fem import OperatorSpec, assemble_operator, build_structured_mesh
    from .ocp import OCPProblem, Schedule

    v = cfg.values
    mesh = build_structured_mesh(v["mesh.nsub"])
    a = _coef(mesh, [v["op.a11"], v["op.a12"], v["op.a21"], v["op.a22"]])
    a = a.reshape(a.shape[:-1] + (2, 2))
    b = _coef(mesh, [v["op.b1"], v["op.b2"]])
    c = _coef(mesh, [v["op.c1"], v["op.c2"]])
    d = _coef(mesh, [v["op.d"]])[..., 0]
    spec = OperatorSpec(a, b, c, d)
    op = assemble_operator(mesh, spec)
    box = None
    if v["box.u_low"] is not None:
        box = (_field_or_const(v["box.u_low"]), _field_or_const(v["box.u_high"]))
    weight = 0.0 if v["schedule.prox"] == "off" else v["prox.weight"]
    problem = OCPProblem.create(
        op, _field_or_const(v["bounds.y_a"]), _field_or_const(v["bounds.y_b"]),
        _field_or_const(v["objective.y_d"]), alpha=v["objective.alpha"],
        u_ref=_field_or_const(v["objective.u_ref"]), g=_field_or_const(v["objective.g"]),
        u_box=box, prox_weight=weight)
    schedule = Schedule(gamma_start=v["schedule.gamma_start"], gamma_end=v["schedule.gamma_end"],
                        factor=v["schedule.factor"],
                        prox="initial" if v["schedule.prox"] == "off" else v["schedule.prox"],
                        kkt_tol=v["tol.kkt"])
    return problem, schedule


def tolerances(cfg: ScenarioConfig):
    from .stationarity import Tolerances

    v = cfg.values
    return Tolerances(residual=v["tol.residual"], sign=v["tol.sign"], active=v["tol.active"],
                      b_stationarity=v["tol.b_stationarity"], membership=v["tol.membership"])
