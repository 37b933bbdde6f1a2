"""Master/slave discovery on edges and faces by implicit-tree traversal.

Reference placements are kept as exact dyadic :class:`fractions.Fraction`
points and only converted to floats when interpolation matrices are built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import InconsistentMesh
from .ncmesh import NIL, _sorted_pair

NOT_SPLIT, VERTICAL, HORIZONTAL = 0, 1, 2

_F0, _F1, _H = Fraction(0), Fraction(1), Fraction(1, 2)
QUAD_REF = ((_F0, _F0), (_F1, _F0), (_F1, _F1), (_F0, _F1))
TRI_REF = ((_F0, _F0), (_F1, _F0), (_F0, _F1))


def _mid(p, q):
    return tuple((a + b) / 2 for a, b in zip(p, q))


@dataclass(frozen=True)
class SlaveRecord:
    """A slave entity, its vertices and their placement in the master."""

    entity: int
    vertices: tuple
    placement: tuple

    def placement_float(self):
        return [tuple(float(c) for c in p) if isinstance(p, tuple) else float(p)
                for p in self.placement]


def face_split_type(mesh, v1, v2, v3, v4):
    v12 = mesh.find_vertex(v1, v2)
    v23 = mesh.find_vertex(v2, v3)
    v34 = mesh.find_vertex(v3, v4)
    v41 = mesh.find_vertex(v4, v1)
    # the "mid-face" node of a split is keyed by the opposite mid-edge pair;
    # it is either the splitting edge itself or the vertex at its midpoint
    midf1 = v12 != NIL and v34 != NIL and mesh.node_exists(v12, v34)
    midf2 = v23 != NIL and v41 != NIL and mesh.node_exists(v23, v41)
    if not midf1 and not midf2:
        return NOT_SPLIT
    return VERTICAL if midf1 else HORIZONTAL


def traverse_quad_face(mesh, v1, v2, v3, v4, p1=QUAD_REF[0], p2=QUAD_REF[1],
                       p3=QUAD_REF[2], p4=QUAD_REF[3], depth=0):
    split = face_split_type(mesh, v1, v2, v3, v4)
    out = []
    if split == VERTICAL:
        v12, p12 = mesh.find_vertex(v1, v2), _mid(p1, p2)
        v34, p34 = mesh.find_vertex(v3, v4), _mid(p3, p4)
        out += traverse_quad_face(mesh, v1, v12, v34, v4, p1, p12, p34, p4, depth + 1)
        out += traverse_quad_face(mesh, v12, v2, v3, v34, p12, p2, p3, p34, depth + 1)
    elif split == HORIZONTAL:
        v23, p23 = mesh.find_vertex(v2, v3), _mid(p2, p3)
        v41, p41 = mesh.find_vertex(v4, v1), _mid(p4, p1)
        out += traverse_quad_face(mesh, v1, v2, v23, v41, p1, p2, p23, p41, depth + 1)
        out += traverse_quad_face(mesh, v41, v23, v3, v4, p41, p23, p3, p4, depth + 1)
    elif depth > 0:
        slave = mesh.find_face(v1, v2, v3, v4)
        if slave != NIL:
            out.append(SlaveRecord(slave, (v1, v2, v3, v4), (p1, p2, p3, p4)))
    return out


def traverse_tri_face(mesh, v1, v2, v3, p1=TRI_REF[0], p2=TRI_REF[1], p3=TRI_REF[2],
                      depth=0):
    v12, p12 = mesh.find_vertex(v1, v2), _mid(p1, p2)
    v23, p23 = mesh.find_vertex(v2, v3), _mid(p2, p3)
    v31, p31 = mesh.find_vertex(v3, v1), _mid(p3, p1)
    out = []
    if v12 != NIL and v23 != NIL and v31 != NIL:
        out += traverse_tri_face(mesh, v1, v12, v31, p1, p12, p31, depth + 1)
        out += traverse_tri_face(mesh, v12, v2, v23, p12, p2, p23, depth + 1)
        out += traverse_tri_face(mesh, v31, v23, v3, p31, p23, p3, depth + 1)
        out += traverse_tri_face(mesh, v12, v23, v31, p12, p23, p31, depth + 1)
    elif depth > 0:
        slave = mesh.find_face(v1, v2, v3, NIL)
        if slave != NIL:
            out.append(SlaveRecord(slave, (v1, v2, v3), (p1, p2, p3)))
    return out


def traverse_edge(mesh, v1, v2, t1=_F0, t2=_F1, depth=0):
    """Slave edges below edge ``(v1, v2)`` with 1D placements ``(t1, t2)``.

    A sub-edge that is itself a live edge and also split is an
    intermediate master: it is reported as a slave here and not descended,
    so that every slave edge records its smallest master.
    """
    mid = mesh.find_vertex(v1, v2)
    if depth > 0:
        e = mesh.find_edge(v1, v2)
        if e != NIL:
            return [SlaveRecord(e, (v1, v2), (t1, t2))]
    if mid == NIL:
        return []
    tm = (t1 + t2) / 2
    return (traverse_edge(mesh, v1, mid, t1, tm, depth + 1)
            + traverse_edge(mesh, mid, v2, tm, t2, depth + 1))


@dataclass
class InterfaceList:
    """Classification of interior shared entities.

    ``edge_masters`` / ``face_masters`` map master entity index to a list of
    :class:`SlaveRecord`; ``master_vertices`` holds the vertex tuple each
    master was traversed from (placements refer to that ordering).
    """

    dim: int
    edge_masters: list = field(default_factory=list)
    face_masters: list = field(default_factory=list)
    master_vertices: dict = field(default_factory=dict)
    conforming_edges: list = field(default_factory=list)
    conforming_faces: list = field(default_factory=list)

    @property
    def slave_edges(self):
        return sorted({s.entity for _, ss in self.edge_masters for s in ss})

    @property
    def slave_faces(self):
        return sorted({s.entity for _, ss in self.face_masters for s in ss})

    @property
    def masters(self):
        return ([("edge", m, ss) for m, ss in self.edge_masters]
                + [("face", m, ss) for m, ss in self.face_masters])

    def dump(self, mesh=None):
        """Text listing, one line per master, stable ordering."""
        lines = []
        for kind, m, ss in sorted(self.masters, key=lambda t: (t[0], t[1])):
            parts = []
            for s in sorted(ss, key=lambda s: s.entity):
                if kind == "edge":
                    pl = "[%s,%s]" % s.placement
                else:
                    pl = "{" + ";".join("(%s,%s)" % p for p in s.placement) + "}"
                parts.append(f"{s.entity}@{pl}")
            lines.append(f"master {kind}:{m} slaves [{' '.join(parts)}]")
        return "\n".join(lines) + ("\n" if lines else "")


def build_interface_list(mesh, elements=None, edges=True, check=True):
    """Classify edges (and faces in 3D) of the given leaves (default: all).

    Faces are tested as masters from the leaf side only; an entity seen
    from several elements is traversed once.
    """
    il = InterfaceList(mesh.dim)
    leaves = mesh.leaves if elements is None else elements
    seen_f, seen_e = set(), set()
    shared_f, shared_e = set(), set()
    if mesh.dim == 3:
        for e in leaves:
            for f in mesh.element_faces(e):
                fi = mesh.find_face(*f)
                if fi in seen_f:
                    shared_f.add(fi)
                    continue
                seen_f.add(fi)
                if len(f) == 4 and f[3] != NIL:
                    ss = traverse_quad_face(mesh, *f)
                else:
                    ss = traverse_tri_face(mesh, *f[:3])
                if ss:
                    il.face_masters.append((fi, ss))
                    il.master_vertices[("face", fi)] = f
    if edges:
        for e in leaves:
            for a, b in mesh.element_edges(e):
                ei = mesh.find_edge(a, b)
                if ei in seen_e:
                    shared_e.add(ei)
                    continue
                seen_e.add(ei)
                ss = traverse_edge(mesh, a, b)
                if ss:
                    il.edge_masters.append((ei, ss))
                    il.master_vertices[("edge", ei)] = (a, b)
    if check:
        _check_faces(mesh, il)
    fm = {m for m, _ in il.face_masters}
    fs = set(il.slave_faces)
    il.conforming_faces = sorted(f for f in shared_f if f not in fm and f not in fs)
    em = {m for m, _ in il.edge_masters}
    es = set(il.slave_edges)
    il.conforming_edges = sorted(e for e in shared_e if e not in em and e not in es)
    return il


def _check_faces(mesh, il):
    if mesh.dim != 3:
        return
    from .ncmesh import _inconsistent_faces
    bad = _inconsistent_faces(mesh)
    if bad:
        raise InconsistentMesh(f"{len(bad)} faces overlap without nesting")


def edge_pair(mesh, ei):
    return mesh.edges.keys[ei]


__all__ = [
    "NOT_SPLIT", "VERTICAL", "HORIZONTAL", "SlaveRecord", "InterfaceList",
    "face_split_type", "traverse_quad_face", "traverse_tri_face", "traverse_edge",
    "build_interface_list", "_sorted_pair",
]
