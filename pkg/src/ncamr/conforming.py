"""Slave interpolation, dependency matrix and conforming prolongation P.

Rows of the dependency matrix ``D`` are kept as dictionaries
``{master_dof: weight}``. A row that is absent is an identity row, i.e. a
true DOF. ``P`` is resolved with a worklist; the number of sweeps the
equivalent Jacobi-style iteration would need (the irregularity) is the
longest dependency chain.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import basis
from .errors import ConflictingConstraint, CyclicDependency
from .fespace import FESpace
from .interfaces import build_interface_list

TOL = 1e-12

IDENTITY, DIRECT, INDIRECT = "identity", "directSlave", "indirectSlave"


def _snap(Q):
    """Drop tiny entries and turn near-unit rows into exact unit rows."""
    Q = np.where(np.abs(Q) < TOL, 0.0, Q)
    for r in range(Q.shape[0]):
        nz = np.flatnonzero(Q[r])
        if len(nz) == 1 and abs(Q[r, nz[0]] - 1.0) < TOL:
            Q[r, nz[0]] = 1.0
    return Q


def local_interpolation(p, placement):
    """Master shape functions at the slave nodes.

    ``placement`` is ``(t1, t2)`` for an edge, or four 2D corner points for
    a quad face (slave corners inside the master reference square). Row
    ``r`` belongs to slave node ``r`` and column ``c`` to master node ``c``
    in the lexicographic node order of the entity.
    """
    g = basis.gll_points(p)
    pl = [tuple(float(c) for c in q) if isinstance(q, tuple) else float(q)
          for q in placement]
    if len(pl) == 2:
        t1, t2 = pl
        return _snap(basis.lagrange_1d(g, t1 + (t2 - t1) * g))
    if len(pl) != 4:
        raise ValueError("placement must have 2 (edge) or 4 (quad face) points")
    P = np.array(pl)
    idx = basis._lex_indices(p, 2)
    s, t = g[idx[:, 0]], g[idx[:, 1]]
    # bilinear map of the slave reference square into the master
    pts = (np.outer((1 - s) * (1 - t), P[0]) + np.outer(s * (1 - t), P[1])
           + np.outer(s * t, P[2]) + np.outer((1 - s) * t, P[3]))
    return _snap(basis.tensor_shape(p, 2, pts))


@dataclass
class DependencyMatrix:
    """Sparse dependency rows over ``n`` DOFs plus their provenance.

    ``rows`` holds the chosen constraint per slave DOF; ``alternates``
    keeps the other (equally valid) constraints discovered for the same
    DOF, which must agree once resolved.
    """

    n: int
    rows: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)   # row -> (kind, master entity)
    alternates: dict = field(default_factory=dict)

    def is_identity(self, i):
        return i not in self.rows

    def classify(self):
        cls = []
        for i in range(self.n):
            if i not in self.rows:
                cls.append(IDENTITY)
            elif all(j not in self.rows for j in self.rows[i]):
                cls.append(DIRECT)
            else:
                cls.append(INDIRECT)
        return cls

    def to_sparse(self):
        r, c, v = [], [], []
        for i in range(self.n):
            row = self.rows.get(i)
            if row is None:
                r.append(i)
                c.append(i)
                v.append(1.0)
            else:
                for j in sorted(row):
                    r.append(i)
                    c.append(j)
                    v.append(row[j])
        return sp.csr_matrix((v, (r, c)), shape=(self.n, self.n))


def _same_row(a, b):
    keys = set(a) | set(b)
    return all(abs(a.get(k, 0.0) - b.get(k, 0.0)) <= TOL for k in keys)


def _scatter(cands, kind, master, mdofs, sdofs, Q):
    for r, sd in enumerate(sdofs):
        sd = int(sd)
        nz = np.flatnonzero(Q[r])
        if len(nz) == 1 and Q[r, nz[0]] == 1.0 and int(mdofs[nz[0]]) == sd:
            continue
        row = {}
        for c in nz:
            md = int(mdofs[c])
            row[md] = row.get(md, 0.0) + float(Q[r, c])
        lst = cands.setdefault(sd, [])
        for old, src in lst:
            if src == (kind, master) and not _same_row(old, row):
                raise ConflictingConstraint(
                    f"row {sd} written twice by {kind} {master} with different weights")
        if not any(_same_row(old, row) for old, _ in lst):
            lst.append((row, (kind, master)))


def _choose(n, cands):
    """Pick, per slave DOF, the candidate row with the shortest chain.

    Knuth's generalization of Dijkstra: DOFs are finalized in increasing
    chain length and a DOF takes the first candidate whose dependencies
    are all final.
    """
    level = {}
    heap = [(0, i, -1) for i in range(n) if i not in cands]
    waiting = {}    # dof -> list of (slave, candidate index)
    remaining = {}
    chosen = {}
    for i, lst in cands.items():
        for k, (row, _) in enumerate(lst):
            if i in row:
                continue  # a self-reference never resolves
            remaining[(i, k)] = len(row)
            for j in row:
                waiting.setdefault(j, []).append((i, k))
            if not row:
                heap.append((1, i, k))
    heapq.heapify(heap)
    while heap:
        l, i, k = heapq.heappop(heap)
        if i in level:
            continue
        level[i] = l
        if k >= 0:
            chosen[i] = k
        for s, ck in waiting.get(i, ()):
            remaining[(s, ck)] -= 1
            if remaining[(s, ck)] == 0 and s not in level:
                heapq.heappush(heap, (l + 1, s, ck))
    return level, chosen


def assemble_dependencies(space: FESpace, il=None):
    """Build ``D`` for ``space`` from an :class:`InterfaceList`.

    A DOF on the boundary of several slave entities may receive several
    constraints (for instance from a master face and from a master edge).
    They are all valid; the one giving the shortest dependency chain is
    kept and the others are checked against it when ``P`` is resolved.
    """
    return dependencies_from_candidates(space.ndofs, collect_candidates(space, il))


def collect_candidates(space: FESpace, il=None):
    """All constraint rows per slave DOF, as ``{dof: [(row, source), ...]}``."""
    mesh, p = space.mesh, space.p
    if il is None:
        il = build_interface_list(mesh, space.elements)
    cands = {}
    for ei, slaves in il.edge_masters:
        a, b = il.master_vertices[("edge", ei)]
        mdofs = space.edge_dofs(a, b)
        for s in slaves:
            try:
                sdofs = space.edge_dofs(*s.vertices)
            except KeyError:
                continue
            _scatter(cands, "edge", ei, mdofs, sdofs, local_interpolation(p, s.placement))
    for fi, slaves in il.face_masters:
        w = il.master_vertices[("face", fi)]
        if len(w) == 4 and w[3] < 0:
            continue  # triangular faces only occur on prisms (unsupported)
        mdofs = space.face_dofs(w)
        for s in slaves:
            try:
                sdofs = space.face_dofs(s.vertices)
            except KeyError:
                continue
            _scatter(cands, "face", fi, mdofs, sdofs, local_interpolation(p, s.placement))
    return cands


def dependencies_from_candidates(n, cands):
    _, chosen = _choose(n, cands)
    D = DependencyMatrix(n)
    for i in sorted(cands):
        lst = cands[i]
        k = chosen.get(i, 0)
        D.rows[i], D.source[i] = lst[k]
        others = [row for m, (row, _) in enumerate(lst) if m != k]
        if others:
            D.alternates[i] = others
    return D


@dataclass
class Prolongation:
    """Resolved ``P`` (N_hat x N) with its true DOFs and sweep count."""

    P: sp.csr_matrix
    true_dofs: np.ndarray
    sweeps: int
    levels: np.ndarray

    @property
    def shape(self):
        return self.P.shape


def _levels(D):
    """Longest chain length per row by a worklist over reverse edges.

    Rows that never become resolvable are left at -1.
    """
    n = D.n
    lvl = np.full(n, -1, dtype=np.int64)
    pending = {}
    users = {}
    queue = deque()
    for i in range(n):
        row = D.rows.get(i)
        if row is None:
            lvl[i] = 0
            queue.append(i)
            continue
        deps = [j for j in row if j != i]
        if len(deps) != len(row):
            continue  # self-dependency never resolves
        pending[i] = len(deps)
        for j in deps:
            users.setdefault(j, []).append(i)
        if not deps:
            lvl[i] = 1
            queue.append(i)
    while queue:
        j = queue.popleft()
        for i in users.get(j, ()):
            pending[i] -= 1
            lvl[i] = max(lvl[i], lvl[j] + 1)
            if pending[i] == 0:
                queue.append(i)
    for i, cnt in pending.items():
        if cnt > 0:
            lvl[i] = -1
    return lvl


def resolve_P(D: DependencyMatrix):
    """Resolve ``P_i = sum_j D_ij P_j`` starting from the identity rows."""
    lvl = _levels(D)
    if (lvl < 0).any():
        bad = np.flatnonzero(lvl < 0)
        raise CyclicDependency(f"{len(bad)} DOFs depend on each other cyclically")
    true = np.array([i for i in range(D.n) if i not in D.rows], dtype=np.int64)
    col = {int(t): k for k, t in enumerate(true)}
    rows = [None] * D.n
    for t, k in col.items():
        rows[t] = {k: 1.0}
    for i in np.argsort(lvl, kind="stable"):
        if rows[i] is not None:
            continue
        acc = {}
        for j, w in D.rows[i].items():
            for k, v in rows[j].items():
                acc[k] = acc.get(k, 0.0) + w * v
        rows[i] = {k: v for k, v in acc.items() if abs(v) >= TOL}
    for i, alts in D.alternates.items():
        for alt in alts:
            acc = {}
            for j, w in alt.items():
                for k, v in rows[j].items():
                    acc[k] = acc.get(k, 0.0) + w * v
            if not _same_row(acc, rows[i]):
                raise ConflictingConstraint(f"constraints on DOF {i} disagree")
    r, c, v = [], [], []
    for i, row in enumerate(rows):
        for k in sorted(row):
            r.append(i)
            c.append(k)
            v.append(row[k])
    P = sp.csr_matrix((v, (r, c)), shape=(D.n, len(true)))
    sweeps = int(lvl.max()) if D.n else 0
    return Prolongation(P, true, sweeps, lvl)


def irregularity(D: DependencyMatrix):
    """Number of resolution sweeps (0 for a conforming space)."""
    lvl = _levels(D)
    if (lvl < 0).any():
        raise CyclicDependency("dependency graph has a cycle")
    return int(lvl.max()) if D.n else 0


def build_P(mesh, p, elements=None):
    """Convenience: space, interface list, D and P for ``mesh``."""
    space = FESpace(mesh, p, elements)
    il = build_interface_list(mesh, space.elements)
    D = assemble_dependencies(space, il)
    return space, D, resolve_P(D)


@dataclass
class DependencyLevels:
    levels: np.ndarray
    deps: list
    master_elements: list
    max_level: int


def dependency_levels(mesh):
    """Vertex-level (p=1) dependency chains, for irregularity control.

    ``master_elements[i]`` lists the leaves holding the master entity that
    constrains DOF ``i`` (empty for true DOFs).
    """
    space = FESpace(mesh, 1)
    il = build_interface_list(mesh, space.elements)
    D = assemble_dependencies(space, il)
    lvl = _levels(D)
    if (lvl < 0).any():
        raise CyclicDependency("dependency graph has a cycle")
    holders = {}
    for e in space.elements:
        for a, b in mesh.element_edges(e):
            holders.setdefault(("edge", mesh.find_edge(a, b)), []).append(e)
        for f in mesh.element_faces(e):
            holders.setdefault(("face", mesh.find_face(*f)), []).append(e)
    deps = [list(D.rows.get(i, {})) for i in range(D.n)]
    masters = [holders.get(D.source[i], []) if i in D.source else [] for i in range(D.n)]
    return DependencyLevels(lvl, deps, masters, int(lvl.max()) if D.n else 0)


# ----------------------------------------------------------------------
def write_coo(path_or_file, A, ncols=None):
    """Write ``A`` as ``rows cols nnz`` then ``row col value`` lines."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    lines = [f"{A.shape[0]} {A.shape[1] if ncols is None else ncols} {A.nnz}"]
    for k in order:
        lines.append(f"{A.row[k]} {A.col[k]} {A.data[k]:.17g}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)


def read_coo(path):
    with open(path) as fh:
        nr, nc, nnz = (int(x) for x in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(nr, nc))
