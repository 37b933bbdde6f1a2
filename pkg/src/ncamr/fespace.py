"""Order-p nodal H1 space on the leaves of an :class:`NCMesh`.

DOFs live on vertices (1), edges (p-1), hex faces ((p-1)^2) and element
interiors. Edge and face interior DOFs are numbered in a canonical frame
fixed by vertex coordinates (not indices), so two meshes holding the same
geometry agree on every DOF's position within its entity.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import basis
from . import geometry as geo
from .ncmesh import _sorted_pair, face_key


def _interior_count(geom, p):
    if geom == geo.TRIANGLE:
        return max(0, (p - 1) * (p - 2) // 2)
    return (p - 1) ** geo.GEOM_DIM[geom]


@lru_cache(maxsize=None)
def _tensor_layout(geom, p):
    """Where each lexicographic node of a tensor element takes its DOF.

    Returns ``(edges, faces, gather)``: corner pairs oriented along their
    free axis, face corner quadruples in (i, j) parametrization, and an
    index array into the concatenation ``[corner DOFs, edge DOFs (p+1
    each), face DOFs ((p+1)^2 each), interior DOFs]``.
    """
    dim = geo.GEOM_DIM[geom]
    corners = geo.CORNERS[geom]
    nv = len(corners)
    idx = basis._lex_indices(p, dim)
    edges, faces, gather = [], [], []
    slots = []
    for ijk in idx:
        on = [a for a in range(dim) if ijk[a] in (0, p)]
        if len(on) == dim:
            c = tuple(int(ijk[a] == p) for a in range(dim))
            slots.append(("v", corners.index(c), 0))
        elif len(on) == dim - 1:
            free = [a for a in range(dim) if a not in on][0]
            c0 = [int(ijk[a] == p) for a in range(dim)]
            c0[free] = 0
            c1 = list(c0)
            c1[free] = 1
            key = (corners.index(tuple(c0)), corners.index(tuple(c1)))
            if key not in edges:
                edges.append(key)
            slots.append(("e", edges.index(key), ijk[free]))
        elif len(on) == 1 and dim == 3:
            axis = on[0]
            side = int(ijk[axis] == p)
            f0, f1 = [a for a in range(3) if a != axis]
            w = []
            for s, t in ((0, 0), (1, 0), (1, 1), (0, 1)):
                c = [0, 0, 0]
                c[axis], c[f0], c[f1] = side, s, t
                w.append(corners.index(tuple(c)))
            w = tuple(w)
            if w not in faces:
                faces.append(w)
            slots.append(("f", faces.index(w), ijk[f0] + (p + 1) * ijk[f1]))
        else:
            inner = [ijk[a] - 1 for a in range(dim)]
            m = inner[0] + (p - 1) * inner[1] + ((p - 1) ** 2 * inner[2] if dim == 3 else 0)
            slots.append(("i", 0, m))
    e0 = nv
    f0 = e0 + len(edges) * (p + 1)
    i0 = f0 + len(faces) * (p + 1) ** 2
    for kind, k, m in slots:
        base = {"v": 0, "e": e0 + k * (p + 1), "f": f0 + k * (p + 1) ** 2, "i": i0}[kind]
        gather.append(base + (m if kind != "v" else k))
    return tuple(edges), tuple(faces), np.array(gather, dtype=np.int64)


class FESpace:
    """Partially conforming nodal space (DOFs assigned ignoring hanging nodes).

    Parameters
    ----------
    mesh : NCMesh
    p : int
        Polynomial order, ``p >= 1``.
    elements : list of int, optional
        Leaves carrying local DOFs (default: all leaves).
    ghost_elements : list of int, optional
        Additional leaves whose not-yet-numbered DOFs are appended after the
        local ones (virtual DOFs of a ghost layer).
    """

    def __init__(self, mesh, p, elements=None, ghost_elements=()):
        if p < 1:
            raise ValueError("order p must be >= 1")
        self.mesh = mesh
        self.p = p
        self.elements = list(mesh.leaves if elements is None else elements)
        self.ghost_elements = [e for e in ghost_elements if e not in set(self.elements)]
        self.vertex_dof = {}
        self.edge_base = {}
        self.face_base = {}
        self.interior_base = {}
        self.entity_of_dof = []
        self._number(self.elements)
        self.nlocal = len(self.entity_of_dof)
        self._number(self.ghost_elements)
        self.ndofs = len(self.entity_of_dof)
        self.element_dofs = {e: self._element_dofs(e)
                             for e in self.elements + self.ghost_elements}

    # ------------------------------------------------------------------
    def _number(self, elements):
        mesh, p = self.mesh, self.p
        ents = self.entity_of_dof
        for e in elements:
            for v in mesh.elements[e].vertex:
                if v not in self.vertex_dof:
                    self.vertex_dof[v] = len(ents)
                    ents.append(("v", v, 0))
        if p > 1:
            for e in elements:
                for a, b in mesh.element_edges(e):
                    ei = mesh.find_edge(a, b)
                    if ei not in self.edge_base:
                        self.edge_base[ei] = len(ents)
                        ents.extend(("e", ei, m) for m in range(p - 1))
            for e in elements:
                for f in mesh.element_faces(e):
                    fi = mesh.find_face(*f)
                    if fi not in self.face_base:
                        self.face_base[fi] = len(ents)
                        ents.extend(("f", fi, m) for m in range((p - 1) ** 2))
        for e in elements:
            n = _interior_count(mesh.elements[e].geom, p)
            if n and e not in self.interior_base:
                self.interior_base[e] = len(ents)
                ents.extend(("i", e, m) for m in range(n))

    # ------------------------------------------------------------------
    def edge_dofs(self, a, b):
        """DOFs along edge ``(a, b)`` ordered from ``a`` to ``b`` (p+1 of them)."""
        mesh, p = self.mesh, self.p
        out = [self.vertex_dof[a]]
        if p > 1:
            base = self.edge_base[mesh.find_edge(a, b)]
            inner = [base + m for m in range(p - 1)]
            if mesh.vertex_sort_key(a) > mesh.vertex_sort_key(b):
                inner.reverse()
            out += inner
        out.append(self.vertex_dof[b])
        return out

    def face_frame(self, w):
        """Canonical corner coordinates of each of the face vertices ``w``."""
        key = self.mesh.vertex_sort_key
        k0 = min(range(4), key=lambda k: key(w[k]))
        n1, n3 = w[(k0 + 1) % 4], w[(k0 + 3) % 4]
        if key(n3) < key(n1):
            n1, n3 = n3, n1
        c2 = w[(k0 + 2) % 4]
        frame = {w[k0]: (0, 0), n1: (1, 0), c2: (1, 1), n3: (0, 1)}
        return [frame[v] for v in w]

    def face_dofs(self, w):
        """DOFs of quad face ``w`` on the (p+1)^2 grid in ``w``'s own
        parametrization (``i`` along w0->w1, ``j`` along w0->w3)."""
        p = self.p
        w1, w2, w3, w4 = w
        out = np.empty((p + 1) ** 2, dtype=np.int64)
        bottom = self.edge_dofs(w1, w2)
        right = self.edge_dofs(w2, w3)
        top = self.edge_dofs(w4, w3)
        left = self.edge_dofs(w1, w4)
        if p > 1:
            base = self.face_base[self.mesh.find_face(*w)]
            C = np.array(self.face_frame(w))
            o, du, dv = C[0], C[1] - C[0], C[3] - C[0]
        for j in range(p + 1):
            for i in range(p + 1):
                if j == 0:
                    d = bottom[i]
                elif j == p:
                    d = top[i]
                elif i == 0:
                    d = left[j]
                elif i == p:
                    d = right[j]
                else:
                    I, J = p * o + i * du + j * dv
                    d = base + (I - 1) + (J - 1) * (p - 1)
                out[i + (p + 1) * j] = d
        return out

    def _element_dofs(self, e):
        mesh, p = self.mesh, self.p
        el = mesh.elements[e]
        V = el.vertex
        if el.geom == geo.TRIANGLE:
            out = [self.vertex_dof[v] for v in V]
            for a, b in geo.EDGES[geo.TRIANGLE]:
                out += self.edge_dofs(V[a], V[b])[1:p]
            n = _interior_count(el.geom, p)
            if n:
                out += list(range(self.interior_base[e], self.interior_base[e] + n))
            return np.array(out, dtype=np.int64)
        edges, faces, gather = _tensor_layout(el.geom, p)
        src = [self.vertex_dof[v] for v in V]
        for c0, c1 in edges:
            src += self.edge_dofs(V[c0], V[c1])
        for w in faces:
            src += self.face_dofs([V[k] for k in w]).tolist()
        n = _interior_count(el.geom, p)
        if n:
            ib = self.interior_base[e]
            src += range(ib, ib + n)
        return np.array(src, dtype=np.int64)[gather]

    # ------------------------------------------------------------------
    def entity_nodes(self, geom, k):
        """Local node indices lying on local boundary entity ``k``
        (edge in 2D, face in 3D)."""
        p = self.p
        if geom == geo.TRIANGLE:
            a, b = geo.EDGES[geom][k]
            nodes = [a, b] + [3 + k * (p - 1) + m for m in range(p - 1)]
            return nodes
        dim = geo.GEOM_DIM[geom]
        idx = basis._lex_indices(p, dim)
        if dim == 2:
            a, b = geo.EDGES[geom][k]
            ca, cb = geo.CORNERS[geom][a], geo.CORNERS[geom][b]
            fixed = [ax for ax in range(2) if ca[ax] == cb[ax]][0]
            val = ca[fixed] * p
            return [n for n, ijk in enumerate(idx) if ijk[fixed] == val]
        axis, side, _ = geo.HEX_FACES[k]
        return [n for n, ijk in enumerate(idx) if ijk[axis] == side * p]

    def boundary_dofs(self):
        """Sorted DOFs on the domain boundary."""
        out = set()
        for e in self.elements:
            geom = self.mesh.elements[e].geom
            dofs = self.element_dofs[e]
            for k in self.mesh.boundary_entities(e):
                out.update(int(dofs[n]) for n in self.entity_nodes(geom, k))
        return np.array(sorted(out), dtype=np.int64)

    def dof_coordinates(self):
        """Physical position of every DOF node."""
        X = np.full((self.ndofs, self.mesh.dim), np.nan)
        groups = {}
        for e in self.element_dofs:
            groups.setdefault(self.mesh.elements[e].geom, []).append(e)
        for geom, els in groups.items():
            xi = basis.element_nodes(geom, self.p)
            V = np.array([self.mesh.elements[e].vertex for e in els], dtype=np.int64)
            coords = self.mesh.coord_array()[V]
            x, _ = geo.batch_map(geom, coords, xi)
            dofs = np.array([self.element_dofs[e] for e in els])
            X[dofs.ravel()] = x.reshape(-1, x.shape[-1])
        return X

    def dof_key(self, i, X=None):
        """Mesh-index-independent identity of DOF ``i``."""
        kind, ent, m = self.entity_of_dof[i]
        mesh = self.mesh
        c = mesh.coords
        if kind == "v":
            return ("v", c[ent])
        if kind == "e":
            a, b = mesh.edges.keys[ent]
            return ("e", tuple(sorted((c[a], c[b]))), m)
        if kind == "f":
            return ("f", tuple(sorted(c[v] for v in mesh.faces.keys[ent])), m)
        return ("i", tuple(c[v] for v in mesh.elements[ent].vertex), m)

    def interpolate(self, func):
        """Nodal interpolant of ``func(x) -> values`` (vectorized over rows)."""
        X = self.dof_coordinates()
        return np.asarray(func(X), dtype=float)

    def element_edge_key(self, a, b):
        return _sorted_pair(a, b)

    def element_face_key(self, f):
        return face_key(*f)
