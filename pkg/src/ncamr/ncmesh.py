"""Non-conforming mesh: refinement trees plus hashed vertex/edge/face tables.

Elements form a forest of refinement trees. Leaves carry vertex indices,
refined elements carry child indices. Vertices created by refinement are
keyed by the (unordered) pair of vertices they bisect; edges by their
vertex pair; faces by their sorted vertex 4-tuple (``-1`` in the last slot
for triangles). Every entity is reference counted by the leaf elements
that use it and disappears when the count drops to zero.
"""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import (ConsistencyLimitExceeded, IndexOverflow, NotRefined,
                     StaleMatrix)

NIL = -1
MAX_INDEX = 2**31 - 1


@dataclass(slots=True)
class Element:
    """Refinement-tree node. ``vertex`` is valid for leaves, ``child`` otherwise."""

    geom: int
    vertex: list = field(default_factory=list)
    child: list = field(default_factory=list)
    parent: int = NIL
    rank: int = 0
    refined: bool = False
    ref_type: int = 0
    root: int = NIL
    ref_map: tuple = None   # affine map element-ref -> root-ref (dyadic, exact)


class _Table:
    """Hash table of keyed entities with reference counts and a free list."""

    def __init__(self):
        self.map = {}
        self.keys = []
        self.refs = []
        self.free = []

    def find(self, key):
        return self.map.get(key, NIL)

    def get(self, key):
        idx = self.map.get(key)
        if idx is not None:
            return idx
        if self.free:
            idx = self.free.pop()
            self.keys[idx] = key
            self.refs[idx] = 0
        else:
            idx = len(self.keys)
            if idx >= MAX_INDEX:
                raise IndexOverflow("entity index exceeds 32-bit range")
            self.keys.append(key)
            self.refs.append(0)
        self.map[key] = idx
        return idx

    def incref(self, idx):
        self.refs[idx] += 1

    def decref(self, idx):
        self.refs[idx] -= 1
        if self.refs[idx] == 0:
            del self.map[self.keys[idx]]
            self.keys[idx] = None
            self.free.append(idx)

    def live(self):
        return [i for i, k in enumerate(self.keys) if k is not None]

    def __len__(self):
        return len(self.map)


def _sorted_pair(a, b):
    return (a, b) if a < b else (b, a)


def face_key(a, b, c, d=NIL):
    if d == NIL:
        return tuple(sorted((a, b, c))) + (NIL,)
    return tuple(sorted((a, b, c, d)))


class NCMesh:
    """Forest of refinement trees over a conforming (or given) coarse mesh.

    Parameters
    ----------
    coords : array_like, shape (nv, dim)
        Coordinates of the coarse-mesh vertices.
    roots : list of (geom, vertices)
        Root elements; ``geom`` is one of ``geometry.TRIANGLE/QUAD/HEX``.
    vertex_parents : dict, optional
        ``{v: (a, b)}`` registers coarse vertex ``v`` as the midpoint of
        ``(a, b)`` in the vertex hash. Only needed for hand-made meshes
        whose roots are already non-conforming.
    """

    def __init__(self, coords, roots, vertex_parents=None):
        coords = np.asarray(coords, dtype=float)
        self.dim = coords.shape[1]
        self.coords = [tuple(float(x) for x in c) for c in coords]
        self.vertex_key = [None] * len(self.coords)
        self.vertex_refs = [0] * len(self.coords)
        self.vertex_alive = [True] * len(self.coords)
        self.vertex_free = []
        self.vertex_map = {}
        self.edges = _Table()
        self.faces = _Table()
        self.elements = []
        self.element_free = []
        self.roots = []
        self.version = 0
        self._leaves = None
        self.num_coarse_vertices = len(self.coords)
        self.coarse_vertex_parents = {int(v): (int(a), int(b))
                                      for v, (a, b) in (vertex_parents or {}).items()}
        self.root_vertices = {}
        for v, (a, b) in (vertex_parents or {}).items():
            key = _sorted_pair(a, b)
            self.vertex_key[v] = key
            self.vertex_map[key] = v
        for r, (g, verts) in enumerate(roots):
            if geo.GEOM_DIM[g] != self.dim:
                raise ValueError("root dimension does not match coordinates")
            e = self._new_element(g, list(verts), NIL, 0, r, geo.identity_affine(self.dim))
            self.roots.append(e)
            self.root_vertices[e] = list(verts)
            self._register(e)
        self.root_boundary = self._root_boundary_flags()

    # ------------------------------------------------------------------
    # vertices
    def find_vertex(self, a, b, _depth=2):
        """Mid-vertex of ``(a, b)`` or ``NIL``; argument order is irrelevant.

        A vertex where two split lines cross may have been keyed by the
        other pair of opposite mid-points. If ``a`` and ``b`` are themselves
        mid-vertices of parallel segments ``(a1, a2)``, ``(b1, b2)``, the
        crossing vertex is also ``mid(mid(a1, b1), mid(a2, b2))``.
        """
        v = self.vertex_map.get(_sorted_pair(a, b), NIL)
        if v != NIL or _depth == 0 or self.dim == 2:
            # in 2D a crossing vertex is created by one element only, whose
            # single refinement type fixes the key
            return v
        ka, kb = self.vertex_key[a], self.vertex_key[b]
        if ka is None or kb is None:
            return NIL
        a1, a2 = ka
        for b1, b2 in (kb, kb[::-1]):
            m1 = self.find_vertex(a1, b1, _depth - 1)
            m2 = self.find_vertex(a2, b2, _depth - 1)
            if m1 == NIL or m2 == NIL:
                continue
            v = self.find_vertex(m1, m2, _depth - 1)
            if v != NIL and self._is_midpoint(v, a, b):
                return v
        return NIL

    def _is_midpoint(self, v, a, b):
        ca, cb, cv = self.coords[a], self.coords[b], self.coords[v]
        scale = max(1.0, max(abs(x) for x in ca + cb))
        return all(abs(0.5 * (x + y) - z) <= 1e-12 * scale for x, y, z in zip(ca, cb, cv))

    def get_vertex(self, a, b):
        """Mid-vertex of ``(a, b)``, created at the midpoint if missing."""
        key = _sorted_pair(a, b)
        v = self.find_vertex(a, b)
        if v != NIL:
            return v
        ca, cb = self.coords[a], self.coords[b]
        mid = tuple(0.5 * (x + y) for x, y in zip(ca, cb))
        if self.vertex_free:
            v = self.vertex_free.pop()
            self.coords[v] = mid
            self.vertex_key[v] = key
            self.vertex_refs[v] = 0
            self.vertex_alive[v] = True
        else:
            v = len(self.coords)
            if v >= MAX_INDEX:
                raise IndexOverflow("vertex index exceeds 32-bit range")
            self.coords.append(mid)
            self.vertex_key.append(key)
            self.vertex_refs.append(0)
            self.vertex_alive.append(True)
        self.vertex_map[key] = v
        return v

    def _vertex_decref(self, v):
        self.vertex_refs[v] -= 1
        if self.vertex_refs[v] == 0:
            key = self.vertex_key[v]
            if key is not None and self.vertex_map.get(key) == v:
                del self.vertex_map[key]
            self.vertex_key[v] = None
            self.vertex_alive[v] = False
            self.vertex_free.append(v)

    def live_vertices(self):
        return [v for v, a in enumerate(self.vertex_alive) if a]

    def vertex_sort_key(self, v):
        """Index-independent total order on vertices (by coordinates)."""
        return self.coords[v]

    # ------------------------------------------------------------------
    # edges and faces
    def find_edge(self, a, b):
        return self.edges.find(_sorted_pair(a, b))

    def find_face(self, a, b, c, d=NIL):
        return self.faces.find(face_key(a, b, c, d))

    def node_exists(self, a, b):
        """True if a vertex or an edge is keyed by the pair ``(a, b)``."""
        return self.find_vertex(a, b) != NIL or _sorted_pair(a, b) in self.edges.map

    # ------------------------------------------------------------------
    # elements
    def _new_element(self, geom, verts, parent, rank, root, ref_map):
        el = Element(geom=geom, vertex=verts, parent=parent, rank=rank,
                     root=root, ref_map=ref_map)
        if self.element_free:
            idx = self.element_free.pop()
            self.elements[idx] = el
        else:
            idx = len(self.elements)
            if idx >= MAX_INDEX:
                raise IndexOverflow("element index exceeds 32-bit range")
            self.elements.append(el)
        return idx

    def _register(self, e):
        el = self.elements[e]
        for v in el.vertex:
            self.vertex_refs[v] += 1
        for a, b in self.element_edges(e):
            self.edges.incref(self.edges.get(_sorted_pair(a, b)))
        for f in self.element_faces(e):
            self.faces.incref(self.faces.get(face_key(*f)))

    def _unregister(self, e):
        el = self.elements[e]
        for a, b in self.element_edges(e):
            self.edges.decref(self.edges.find(_sorted_pair(a, b)))
        for f in self.element_faces(e):
            self.faces.decref(self.faces.find(face_key(*f)))
        for v in el.vertex:
            self._vertex_decref(v)

    def element_edges(self, e):
        el = self.elements[e]
        return [(el.vertex[i], el.vertex[j]) for i, j in geo.EDGES[el.geom]]

    def element_faces(self, e):
        el = self.elements[e]
        return [tuple(el.vertex[i] for i in f) for f in geo.FACES[el.geom]]

    def coord_array(self):
        """All vertex coordinates as an ``(nv, dim)`` array (cached)."""
        key = (self.version, len(self.coords))
        if getattr(self, "_coord_cache", (None,))[0] != key:
            self._coord_cache = (key, np.asarray(self.coords, dtype=float))
        return self._coord_cache[1]

    def element_coords(self, e):
        return np.array([self.coords[v] for v in self.elements[e].vertex])

    def _touch(self):
        self.version += 1
        self._leaves = None

    @property
    def leaves(self):
        """Depth-first list of leaf elements over the ordered roots."""
        if self._leaves is None:
            out = []
            stack = list(reversed(self.roots))
            while stack:
                e = stack.pop()
                el = self.elements[e]
                if el.refined:
                    stack.extend(reversed(el.child))
                else:
                    out.append(e)
            self._leaves = out
        return self._leaves

    @property
    def num_leaves(self):
        return len(self.leaves)

    def is_leaf(self, e):
        return not self.elements[e].refined

    # ------------------------------------------------------------------
    # refinement
    def refine(self, e, ref_type=None):
        """Refine leaf ``e``; returns the new child indices."""
        el = self.elements[e]
        if el.refined:
            raise ValueError(f"element {e} is not a leaf")
        if ref_type is None:
            ref_type = geo.ISOTROPIC[el.geom]
        geo.check_reftype(el.geom, ref_type)
        ops, child_ids = geo.child_vertex_recipe(el.geom, ref_type)
        made = []
        for kind, arg in ops:
            if kind == "c":
                made.append(el.vertex[arg])
            else:
                made.append(self._mid_vertex([(made[i], made[j]) for i, j in arg]))
        child_verts = [[made[i] for i in ids] for ids in child_ids]
        children = []
        affs = geo.child_affines(el.geom, ref_type)
        for aff_c, verts in zip(affs, child_verts):
            aff = geo.compose_affine(el.ref_map, aff_c)
            c = self._new_element(el.geom, verts, e, el.rank, el.root, aff)
            self._register(c)
            children.append(c)
        self._unregister(e)
        el = self.elements[e]
        el.refined = True
        el.ref_type = ref_type
        el.child = children
        el.vertex = []
        self._touch()
        return children

    def _mid_vertex(self, opts):
        """Vertex at the common mid-point of the pairs in ``opts``.

        A mid-face or mid-element vertex may already exist under any pair
        of opposite mid-points; it must never be duplicated.
        """
        if len(opts) == 1:
            return self.get_vertex(*opts[0])
        vmap = self.vertex_map
        for a, b in opts:
            v = vmap.get(_sorted_pair(a, b), NIL)
            if v != NIL:
                return v
        for a, b in opts:
            v = self.find_vertex(a, b)
            if v != NIL:
                return v
        for a, b in opts:
            if self.find_edge(a, b) != NIL:
                return self.get_vertex(a, b)
        return self.get_vertex(*opts[0])

    def coarsen(self, e):
        """Undo the refinement of ``e`` (recursively coarsening children)."""
        el = self.elements[e]
        if not el.refined:
            raise NotRefined(f"element {e} is a leaf")
        for c in el.child:
            if self.elements[c].refined:
                self.coarsen(c)
        corners = []
        for k in range(geo.NUM_VERTICES[el.geom]):
            ci, cc = geo.parent_corner_child(el.geom, el.ref_type, k)
            corners.append(self.elements[el.child[ci]].vertex[cc])
        el.vertex = corners
        el.refined = False
        self._register(e)
        for c in el.child:
            self._unregister(c)
            self.elements[c] = None
            self.element_free.append(c)
        el.child = []
        el.ref_type = 0
        self._touch()

    # ------------------------------------------------------------------
    # paths (root index + child indices), used by replay files and messages
    def element_path(self, e):
        path = []
        el = self.elements[e]
        while el.parent != NIL:
            p = self.elements[el.parent]
            path.append(p.child.index(e))
            e = el.parent
            el = p
        return el.root, path[::-1]

    def element_by_path(self, root, path):
        e = self.roots[root]
        for c in path:
            e = self.elements[e].child[c]
        return e

    def copy(self):
        return copy.deepcopy(self)

    # ------------------------------------------------------------------
    # boundary
    def _root_boundary_flags(self):
        counts = {}
        keys = []
        for r in self.roots:
            el = self.elements[r]
            if self.dim == 2:
                ks = [_sorted_pair(a, b) for a, b in self.element_edges(r)]
            else:
                ks = [face_key(*f) for f in self.element_faces(r)]
            keys.append(ks)
            for k in ks:
                counts[k] = counts.get(k, 0) + 1
        return [[counts[k] == 1 for k in ks] for ks in keys]

    def boundary_entities(self, e):
        """Local boundary entities (edges in 2D, faces in 3D) of leaf ``e``
        lying on the domain boundary."""
        el = self.elements[e]
        if self.dim == 2:
            ents = geo.EDGES[el.geom]
            refs = [self.edges.refs[self.find_edge(el.vertex[a], el.vertex[b])]
                    for a, b in ents]
        else:
            ents = geo.FACES[el.geom]
            refs = [self.faces.refs[self.find_face(*(el.vertex[i] for i in f))]
                    for f in ents]
        if all(r > 1 for r in refs):
            return []
        preds = geo.root_entity_constraints(el.geom)
        flags = self.root_boundary[el.root]
        ref_corners = geo.affine_apply(el.ref_map, geo.CORNERS[el.geom])
        out = []
        for k, ent in enumerate(ents):
            if refs[k] > 1:
                continue  # shared by two leaves: interior
            pts = ref_corners[list(ent)]
            for j, pred in enumerate(preds):
                if all(pred(p) for p in pts):
                    if flags[j]:
                        out.append(k)
                    break
        return out

    # ------------------------------------------------------------------
    # diagnostics
    def census(self):
        """Index-independent digest of the current topology."""
        c = self.coords
        verts = sorted(c[v] + (self.vertex_refs[v],) for v in self.live_vertices())
        edges = sorted(tuple(sorted((c[k[0]], c[k[1]]))) + (self.edges.refs[i],)
                       for i, k in enumerate(self.edges.keys) if k is not None)
        faces = sorted(tuple(sorted(c[v] for v in k if v != NIL)) + (self.faces.refs[i],)
                       for i, k in enumerate(self.faces.keys) if k is not None)
        leaves = sorted(tuple(c[v] for v in self.elements[e].vertex) for e in self.leaves)
        h = hashlib.sha256(repr((verts, edges, faces, leaves)).encode()).hexdigest()
        return {"vertices": len(verts), "edges": len(edges), "faces": len(faces),
                "leaves": len(leaves), "hash": h}

    def check_refcounts(self):
        """Recount incidences from the leaves and compare with stored counts."""
        vc, ec, fc = {}, {}, {}
        for e in self.leaves:
            for v in self.elements[e].vertex:
                vc[v] = vc.get(v, 0) + 1
            for a, b in self.element_edges(e):
                k = _sorted_pair(a, b)
                ec[k] = ec.get(k, 0) + 1
            for f in self.element_faces(e):
                k = face_key(*f)
                fc[k] = fc.get(k, 0) + 1
        ok = all(self.vertex_refs[v] == n for v, n in vc.items())
        ok &= len(vc) == len(self.live_vertices())
        ok &= all(self.edges.refs[self.edges.find(k)] == n for k, n in ec.items())
        ok &= len(ec) == len(self.edges)
        ok &= all(self.faces.refs[self.faces.find(k)] == n for k, n in fc.items())
        ok &= len(fc) == len(self.faces)
        return bool(ok)

    def element_volume(self, e):
        from .basis import gauss_rule
        el = self.elements[e]
        xi, w = gauss_rule(el.geom, 2)
        _, J = geo.multilinear_map(el.geom, self.element_coords(e), xi)
        return float(np.sum(w * np.abs(np.linalg.det(J))))

    # ------------------------------------------------------------------
    # hanging vertices on element boundaries
    def _edge_hanging(self, a, b, out):
        m = self.find_vertex(a, b)
        if m != NIL:
            out.add(m)
            self._edge_hanging(a, m, out)
            self._edge_hanging(m, b, out)

    def _face_hanging(self, f, out):
        from .interfaces import NOT_SPLIT, VERTICAL, face_split_type
        v1, v2, v3, v4 = f
        split = face_split_type(self, v1, v2, v3, v4)
        if split == NOT_SPLIT:
            for a, b in ((v1, v2), (v2, v3), (v3, v4), (v4, v1)):
                self._edge_hanging(a, b, out)
        elif split == VERTICAL:
            v12, v34 = self.find_vertex(v1, v2), self.find_vertex(v3, v4)
            out.update((v12, v34))
            self._face_hanging((v1, v12, v34, v4), out)
            self._face_hanging((v12, v2, v3, v34), out)
        else:
            v23, v41 = self.find_vertex(v2, v3), self.find_vertex(v4, v1)
            out.update((v23, v41))
            self._face_hanging((v1, v2, v23, v41), out)
            self._face_hanging((v41, v23, v3, v4), out)

    def hanging_vertices(self, e):
        """Non-corner vertices lying on the boundary of leaf ``e``."""
        out = set()
        for a, b in self.element_edges(e):
            self._edge_hanging(a, b, out)
        for f in self.element_faces(e):
            self._face_hanging(f, out)
        out.difference_update(self.elements[e].vertex)
        return out

    def neighbor_query(self):
        return NeighborQuery(self)


class NeighborQuery:
    """Element-vertex incidence ``B`` with on-demand ``B B^T`` action.

    Only non-corner incidences are stored; corner incidences are taken from
    the leaf vertex lists when the action is evaluated.
    """

    def __init__(self, mesh):
        import scipy.sparse as sp
        self.mesh = mesh
        self.version = mesh.version
        self.leaves = list(mesh.leaves)
        self.nv = len(mesh.coords)
        rows, cols = [], []
        for i, e in enumerate(self.leaves):
            for v in sorted(mesh.hanging_vertices(e)):
                rows.append(i)
                cols.append(v)
        self.B = sp.csr_matrix((np.ones(len(rows), dtype=np.int32), (rows, cols)),
                               shape=(len(self.leaves), self.nv))

    def _corners(self):
        mesh = self.mesh
        n = max(geo.NUM_VERTICES[mesh.elements[e].geom] for e in self.leaves)
        arr = np.full((len(self.leaves), n), -1, dtype=np.int64)
        for i, e in enumerate(self.leaves):
            vs = mesh.elements[e].vertex
            arr[i, :len(vs)] = vs
        return arr

    def expand(self, mask):
        """Return ``mask`` OR'd with all vertex/edge/face neighbors."""
        if self.mesh.version != self.version:
            raise StaleMatrix("mesh changed since the incidence matrix was built")
        mask = np.asarray(mask, dtype=bool)
        corners = self._corners()
        vsel = np.asarray(self.B.T @ mask.astype(np.int32)).ravel() > 0
        cs = corners[mask]
        cs = cs[cs >= 0]
        vsel[cs] = True
        hit = np.asarray(self.B @ vsel.astype(np.int32)).ravel() > 0
        padded = np.concatenate([vsel, [False]])
        hit |= padded[corners].any(axis=1)
        return hit | mask


# ----------------------------------------------------------------------
# consistency and irregularity closures
def _inconsistent_faces(mesh):
    """Leaf faces that are neither conforming, boundary, master nor slave."""
    from .interfaces import build_interface_list
    il = build_interface_list(mesh, edges=False, check=False)
    masters = {m for m, _ in il.face_masters}
    slaves = {s.entity for _, ss in il.face_masters for s in ss}
    bad = []
    for e in mesh.leaves:
        bdr = set(mesh.boundary_entities(e))
        for k, f in enumerate(mesh.element_faces(e)):
            fi = mesh.find_face(*f)
            if mesh.faces.refs[fi] == 2 or k in bdr or fi in masters or fi in slaves:
                continue
            bad.append((e, k, f))
    return bad


def ensure_consistency(mesh, max_passes=10):
    """Apply forced refinements until every face pair nests properly.

    Returns the list of forced refinements as ``(element, ref_type)``.
    Each offending element is split along the face axes on which the
    other side has placed hanging mid-edge vertices.
    """
    if mesh.dim == 2:
        return []
    forced = []
    for _ in range(max_passes):
        bad = _inconsistent_faces(mesh)
        if not bad:
            return forced
        todo = {}
        for e, k, f in bad:
            axis, _, _ = geo.HEX_FACES[k]
            free = [a for a in range(3) if a != axis]
            v1, v2, v3, v4 = f
            rt = 0
            if mesh.find_vertex(v1, v2) != NIL or mesh.find_vertex(v4, v3) != NIL:
                rt |= 1 << free[0]
            if mesh.find_vertex(v2, v3) != NIL or mesh.find_vertex(v1, v4) != NIL:
                rt |= 1 << free[1]
            if rt == 0:
                rt = (1 << free[0]) | (1 << free[1])
            todo[e] = todo.get(e, 0) | rt
        for e, rt in todo.items():
            mesh.refine(e, rt)
            forced.append((e, rt))
    if _inconsistent_faces(mesh):
        raise ConsistencyLimitExceeded(f"mesh not consistent after {max_passes} passes")
    return forced


def limit_irregularity(mesh, n, max_passes=50):
    """Refine coarse elements until no dependency chain is longer than ``n``."""
    from .conforming import dependency_levels
    if n < 1:
        raise ValueError("n must be >= 1")
    forced = []
    for _ in range(max_passes):
        info = dependency_levels(mesh)
        if info.max_level <= n:
            return forced
        targets = set()
        for i, lvl in enumerate(info.levels):
            if lvl <= n:
                continue
            j = i
            while info.levels[j] > 1:
                j = max(info.deps[j], key=lambda d: info.levels[d])
            targets.update(info.master_elements[j])
        for e in sorted(targets):
            if mesh.is_leaf(e):
                mesh.refine(e)
                forced.append((e, geo.ISOTROPIC[mesh.elements[e].geom]))
        forced.extend(ensure_consistency(mesh))
    raise ConsistencyLimitExceeded("irregularity closure did not converge")
