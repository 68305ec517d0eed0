"""
Reference scenarios and random instance generators used by tests and demos.
"""
from __future__ import annotations

import numpy as np

from .fem import assemble_operator, build_structured_mesh
from .ocp import OCPProblem, Schedule, bubble


def s1(n_sub: int = 32):
    """State bound active, obstacle inactive.

    -Laplace, y_a = -0.3, y_b = 0.1, y_d = 1, alpha = 1e-2, no control box.
    The proximal term is dropped: frozen at the zero initial guess it adds a
    unit control cost that keeps the state below y_b.
    """
    op = assemble_operator(build_structured_mesh(n_sub))
    problem = OCPProblem.create(op, -0.3, 0.1, 1.0, alpha=1e-2, prox_weight=0.0)
    return problem, Schedule()


def s2(n_sub: int = 16):
    """Obstacle strictly active on a central patch, state bound never reached.

    y_a = 0.4 b - 0.1 with the unit bubble b, y_d = 0, y_b = 1, alpha = 1e-2.
    Tracking pulls the state down onto the hump; no control box.
    """
    mesh = build_structured_mesh(n_sub)
    op = assemble_operator(mesh)
    y_a = 0.4 * bubble(mesh) - 0.1
    problem = OCPProblem.create(op, y_a, 1.0, 0.0, alpha=1e-2, prox_weight=0.0)
    return problem, Schedule()


def mixed(n_sub: int = 16):
    """Obstacle contact on the left, state bound active on the right.

    y_a = 0.15 h - 0.1 with a compact hump h centred at (0.3, 0.5),
    y_b = 0.1, y_d = -0.5 for x < 1/2 and 1 otherwise, alpha = 1e-2.
    """
    mesh = build_structured_mesh(n_sub)
    op = assemble_operator(mesh)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    hump = np.maximum(0.0, 1.0 - ((x - 0.3) ** 2 + (y - 0.5) ** 2) / 0.04) ** 2
    y_d = np.where(x < 0.5, -0.5, 1.0)
    problem = OCPProblem.create(op, 0.15 * hump - 0.1, 0.1, y_d, alpha=1e-2, prox_weight=0.0)
    return problem, Schedule()


def lq(n_sub: int = 16):
    """Both bounds far away: the tracking problem is linear-quadratic."""
    mesh = build_structured_mesh(n_sub)
    op = assemble_operator(mesh)
    y_d = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    problem = OCPProblem.create(op, -1e9, 1e9, y_d, alpha=1.0)
    return problem, Schedule()


def random_vi_instance(rng, mesh):
    """Control density and obstacle (interior values) with contact likely."""
    n = mesh.n_interior
    u = rng.normal(0.0, 2.0, n)
    y_a = rng.uniform(-0.1, 0.05, n)
    return u, y_a


def biactive_instance(rng, op, n_bi: int = 3, n_strict: int = 3):
    """Control for which the obstacle solution has prescribed biactive nodes.

    Picks a state ``y >= y_a`` touching on ``n_bi + n_strict`` nodes and a
    multiplier that is zero on the first ``n_bi`` of them, then sets
    ``u = (K y - xi) / m``.  Returns ``(u, y_a, biactive, strict)`` with
    interior arrays and index positions.
    """
    mesh = op.mesh
    n = mesh.n_interior
    idx = rng.choice(n, n_bi + n_strict, replace=False)
    bi, strict = np.sort(idx[:n_bi]), np.sort(idx[n_bi:])
    y_a = rng.uniform(-0.2, -0.05, n)
    y = y_a + rng.uniform(0.05, 0.2, n)
    y[idx] = y_a[idx]
    xi = np.zeros(n)
    xi[strict] = mesh.m[strict] * rng.uniform(0.5, 2.0, n_strict)
    u = (op.matrix @ y - xi) / mesh.m
    return u, y_a, bi, strict
