"""
Plain-text field dumps, path CSV files and legacy VTK export.

Field file layout::

    nsub=<n> kind=<tag> name=<name> size=<k>
    <index> <value>
    ...

Nodal fields list every mesh node, dual fields every interior position.
Values are written with ``repr`` so a dump reads back bit for bit.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .fem import DualField, Mesh, NodalField
from .vi import VISolution

NODAL_TAGS = {"primal", "control"}
DUAL_TAGS = {"residual", "measure"}


def format_field(fld, name: str = "field") -> str:
    tag = fld.kind
    vals = fld.values
    lines = [f"nsub={fld.mesh.n_sub} kind={tag} name={name} size={vals.size}"]
    lines.extend(f"{i} {float(v)!r}" for i, v in enumerate(vals))
    return "\n".join(lines) + "\n"


def format_vi_solution(sol: VISolution) -> str:
    text = format_field(sol.y, "y")
    text += "active_sets\n"
    for key in ("active", "strict", "biactive"):
        idx = getattr(sol, key)
        text += key + "".join(f" {int(i)}" for i in idx) + "\n"
    return text


def _parse_header(line: str) -> dict:
    try:
        head = dict(tok.split("=", 1) for tok in line.split())
        head["nsub"] = int(head["nsub"])
        head["size"] = int(head["size"])
    except (ValueError, KeyError) as exc:
        raise InvalidArgument(f"malformed field header {line!r}") from exc
    return head


def parse_field(text: str, mesh: Mesh):
    lines = text.splitlines()
    if not lines:
        raise InvalidArgument("empty field file")
    head = _parse_header(lines[0])
    if head["nsub"] != mesh.n_sub:
        raise InvalidArgument(f"field is on a mesh with nsub={head['nsub']}, expected {mesh.n_sub}")
    body = []
    for ln in lines[1:]:
        if ln.strip() == "active_sets":
            break
        if ln.strip():
            body.append(ln)
    if len(body) != head["size"]:
        raise InvalidArgument(f"field declares {head['size']} values but has {len(body)}")
    vals = np.empty(head["size"])
    for k, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != 2 or int(parts[0]) != k:
            raise InvalidArgument(f"bad field line {ln!r}")
        vals[k] = float(parts[1])
    kind = head.get("kind")
    if kind in NODAL_TAGS:
        return NodalField(mesh, vals, kind)
    if kind in DUAL_TAGS:
        return DualField(mesh, vals, kind)
    raise InvalidArgument(f"unknown field kind {kind!r}")


def write_field(path, fld, name: str = None) -> Path:
    path = Path(path)
    path.write_text(format_field(fld, name or path.stem))
    return path


def read_field(path, mesh: Mesh):
    path = Path(path)
    if not path.exists():
        raise InvalidArgument(f"missing field file {path}")
    return parse_field(path.read_text(), mesh)


def write_csv(path, rows: list, columns) -> Path:
    """Rows of dicts; floats are written with ``repr`` for exact round trips."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in columns])
    return path


def read_csv(path) -> dict:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(cols))
    return {c: data[:, k] for k, c in enumerate(cols)}


def write_vtk(path, mesh: Mesh, fields: dict) -> Path:
    """Legacy ASCII VTK unstructured grid; dual fields are written as densities."""
    path = Path(path)
    out = ["# vtk DataFile Version 3.0", "obstacle_ocp fields", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    out.extend(f"{x!r} {y!r} 0.0" for x, y in mesh.nodes)
    nt = len(mesh.triangles)
    out.append(f"CELLS {nt} {4 * nt}")
    out.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    out.append(f"CELL_TYPES {nt}")
    out.extend(["5"] * nt)
    out.append(f"POINT_DATA {mesh.n_nodes}")
    for name in sorted(fields):
        fld = fields[name]
        vals = fld.values if isinstance(fld, NodalField) else mesh.extend(fld.density)
        out.append(f"SCALARS {name} double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(repr(float(v)) for v in vals)
    path.write_text("\n".join(out) + "\n")
    return path
