"""Structured grids, the replay mesh format and a legacy VTK writer.

Replay format (text)::

    ncamr-mesh v1
    dim 2
    vertices 4
    0.0 0.0
    ...
    roots 1
    quad 0 1 2 3
    vertex_parents 0          (optional)
    refinements 2
    0 - 3                     root, child path ('-' if empty), type
    0 1 1
    ranks 7                   (optional, one rank per leaf in leaf order)
    0 0 1 ...

Refinements are listed in depth-first preorder, so replaying them in file
order reproduces the exact same element, vertex and entity numbering.
"""
from __future__ import annotations

import io

import numpy as np

from . import geometry as geo
from .errors import MeshFormatError
from .ncmesh import NCMesh

HEADER = "ncamr-mesh v1"
VTK_CELL = {geo.TRIANGLE: 5, geo.QUAD: 9, geo.HEX: 12}


# ----------------------------------------------------------------------
# generators
def quad_grid(nx, ny, x0=(0.0, 0.0), x1=(1.0, 1.0)):
    xs = np.linspace(x0[0], x1[0], nx + 1)
    ys = np.linspace(x0[1], x1[1], ny + 1)
    coords = [(x, y) for y in ys for x in xs]
    vid = lambda i, j: i + (nx + 1) * j
    roots = [(geo.QUAD, [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
             for j in range(ny) for i in range(nx)]
    return NCMesh(coords, roots)


def tri_grid(nx, ny, x0=(0.0, 0.0), x1=(1.0, 1.0)):
    """Each grid square cut into two counterclockwise triangles."""
    xs = np.linspace(x0[0], x1[0], nx + 1)
    ys = np.linspace(x0[1], x1[1], ny + 1)
    coords = [(x, y) for y in ys for x in xs]
    vid = lambda i, j: i + (nx + 1) * j
    roots = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            roots.append((geo.TRIANGLE, [a, b, c]))
            roots.append((geo.TRIANGLE, [a, c, d]))
    return NCMesh(coords, roots)


def hex_grid(nx, ny, nz, x0=(0.0, 0.0, 0.0), x1=(1.0, 1.0, 1.0)):
    xs = np.linspace(x0[0], x1[0], nx + 1)
    ys = np.linspace(x0[1], x1[1], ny + 1)
    zs = np.linspace(x0[2], x1[2], nz + 1)
    coords = [(x, y, z) for z in zs for y in ys for x in xs]
    vid = lambda i, j, k: i + (nx + 1) * (j + (ny + 1) * k)
    roots = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                q = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
                roots.append((geo.HEX, [vid(a, b, k) for a, b in q]
                              + [vid(a, b, k + 1) for a, b in q]))
    return NCMesh(coords, roots)


# ----------------------------------------------------------------------
# replay format
def refinement_records(mesh):
    """``(root, path, ref_type)`` for every refined element, DFS preorder."""
    out = []

    def visit(e, r, path):
        el = mesh.elements[e]
        if not el.refined:
            return
        out.append((r, tuple(path), el.ref_type))
        for k, c in enumerate(el.child):
            visit(c, r, path + [k])

    for r, e in enumerate(mesh.roots):
        visit(e, r, [])
    return out


def dumps(mesh, ranks=None):
    """Serialize ``mesh``; ``ranks`` (one per leaf) adds a ranks section."""
    lines = [HEADER, f"dim {mesh.dim}"]
    n0 = mesh.num_coarse_vertices
    lines.append(f"vertices {n0}")
    for c in mesh.coords[:n0]:
        lines.append(" ".join(repr(float(x)) for x in c))
    lines.append(f"roots {len(mesh.roots)}")
    for e in mesh.roots:
        el = mesh.elements[e]
        verts = mesh.root_vertices[e]
        lines.append(geo.GEOM_NAMES[el.geom] + " " + " ".join(str(v) for v in verts))
    if mesh.coarse_vertex_parents:
        vp = mesh.coarse_vertex_parents
        lines.append(f"vertex_parents {len(vp)}")
        for v in sorted(vp):
            lines.append(f"{v} {vp[v][0]} {vp[v][1]}")
    recs = refinement_records(mesh)
    lines.append(f"refinements {len(recs)}")
    for r, path, rt in recs:
        ps = ".".join(str(k) for k in path) if path else "-"
        lines.append(f"{r} {ps} {rt}")
    if ranks is not None:
        ranks = list(ranks)
        lines.append(f"ranks {len(ranks)}")
        lines.append(" ".join(str(int(k)) for k in ranks))
    return "\n".join(lines) + "\n"


def save(mesh, path, ranks=None):
    with open(path, "w") as fh:
        fh.write(dumps(mesh, ranks))


def _expect(tokens, name):
    if not tokens or tokens[0] != name or len(tokens) != 2:
        raise MeshFormatError(f"expected '{name} <count>', got {' '.join(tokens)!r}")
    try:
        n = int(tokens[1])
    except ValueError as exc:
        raise MeshFormatError(f"bad count in {name}") from exc
    if n < 0:
        raise MeshFormatError(f"negative count in {name}")
    return n


def loads(text, with_ranks=False):
    """Parse replay text. Returns the mesh, or ``(mesh, ranks)``."""
    lines = [ln.strip() for ln in io.StringIO(text) if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != HEADER:
        raise MeshFormatError("missing 'ncamr-mesh v1' header")
    pos = 1

    def nxt():
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file")
        pos += 1
        return lines[pos - 1].split()

    dim = _expect(nxt(), "dim")
    if dim not in (2, 3):
        raise MeshFormatError(f"dimension {dim} not supported")
    nv = _expect(nxt(), "vertices")
    try:
        coords = [tuple(float(x) for x in nxt()) for _ in range(nv)]
    except ValueError as exc:
        raise MeshFormatError("bad vertex coordinate") from exc
    if any(len(c) != dim for c in coords):
        raise MeshFormatError("vertex with wrong number of coordinates")
    nr = _expect(nxt(), "roots")
    roots = []
    for _ in range(nr):
        t = nxt()
        if t[0] not in geo.GEOM_BY_NAME:
            raise MeshFormatError(f"unknown element type {t[0]!r}")
        g = geo.GEOM_BY_NAME[t[0]]
        try:
            verts = [int(v) for v in t[1:]]
        except ValueError as exc:
            raise MeshFormatError("bad vertex index") from exc
        if len(verts) != geo.NUM_VERTICES[g] or any(not 0 <= v < nv for v in verts):
            raise MeshFormatError("bad root element vertex list")
        roots.append((g, verts))
    t = nxt()
    parents = {}
    if t[0] == "vertex_parents":
        for _ in range(_expect(t, "vertex_parents")):
            v, a, b = (int(x) for x in nxt())
            parents[v] = (a, b)
        t = nxt()
    nref = _expect(t, "refinements")
    try:
        mesh = NCMesh(coords if nv else np.zeros((0, dim)), roots, vertex_parents=parents)
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from exc
    for _ in range(nref):
        t = nxt()
        if len(t) != 3:
            raise MeshFormatError("refinement record needs root, path and type")
        try:
            r = int(t[0])
            path = [] if t[1] == "-" else [int(k) for k in t[1].split(".")]
            rt = int(t[2])
            e = mesh.element_by_path(r, path)
        except (ValueError, IndexError) as exc:
            raise MeshFormatError(f"bad refinement record {' '.join(t)!r}") from exc
        try:
            mesh.refine(e, rt)
        except ValueError as exc:
            raise MeshFormatError(str(exc)) from exc
    ranks = None
    if pos < len(lines):
        n = _expect(nxt(), "ranks")
        ranks = [int(k) for k in nxt()] if n else []
        if len(ranks) != n:
            raise MeshFormatError("rank count mismatch")
    if with_ranks:
        return mesh, ranks
    return mesh


def load(path, with_ranks=False):
    with open(path) as fh:
        return loads(fh.read(), with_ranks)


# ----------------------------------------------------------------------
# VTK
def vtk_string(mesh, cell_data=None, point_data=None, title="ncamr mesh"):
    """Legacy ASCII VTK unstructured grid of the leaves.

    Hanging vertices are kept as plain points; every leaf is its own cell.
    ``cell_data`` maps names to per-leaf arrays, ``point_data`` to
    per-vertex arrays indexed by mesh vertex id.
    """
    leaves = mesh.leaves
    vmap = {}
    for e in leaves:
        for v in mesh.elements[e].vertex:
            if v not in vmap:
                vmap[v] = len(vmap)
    pts = sorted(vmap, key=vmap.get)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(pts)} double"]
    for v in pts:
        c = list(mesh.coords[v]) + [0.0] * (3 - mesh.dim)
        out.append(" ".join(repr(float(x)) for x in c))
    size = sum(1 + len(mesh.elements[e].vertex) for e in leaves)
    out.append(f"CELLS {len(leaves)} {size}")
    for e in leaves:
        vs = mesh.elements[e].vertex
        out.append(" ".join([str(len(vs))] + [str(vmap[v]) for v in vs]))
    out.append(f"CELL_TYPES {len(leaves)}")
    out.extend(str(VTK_CELL[mesh.elements[e].geom]) for e in leaves)
    if cell_data:
        out.append(f"CELL_DATA {len(leaves)}")
        for name, arr in cell_data.items():
            arr = np.asarray(arr)
            kind = "int" if np.issubdtype(arr.dtype, np.integer) else "double"
            out += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
            out.extend(str(int(x)) if kind == "int" else repr(float(x)) for x in arr)
    if point_data:
        out.append(f"POINT_DATA {len(pts)}")
        for name, arr in point_data.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out.extend(repr(float(arr[v])) for v in pts)
    return "\n".join(out) + "\n"


def write_vtk(mesh, path, cell_data=None, point_data=None):
    with open(path, "w") as fh:
        fh.write(vtk_string(mesh, cell_data, point_data))
