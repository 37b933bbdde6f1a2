"""Space-filling-curve ordering of leaves and equal-size partitioning.

The Z-curve works for every geometry; the 2D Hilbert curve threads an
8-state automaton through quad refinement trees. Children of a quad are
stored counterclockwise, so child ``k`` sits at reference corner ``k``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import UnsupportedCurve

Z = "z"
HILBERT = "hilbert"

# state -> (child visiting order, state handed to each child)
HILBERT_TABLE = (
    ((0, 1, 2, 3), (1, 0, 0, 5)),
    ((0, 3, 2, 1), (0, 1, 1, 4)),
    ((1, 2, 3, 0), (3, 2, 2, 7)),
    ((1, 0, 3, 2), (2, 3, 3, 6)),
    ((2, 3, 0, 1), (5, 4, 4, 1)),
    ((2, 1, 0, 3), (4, 5, 5, 0)),
    ((3, 0, 1, 2), (7, 6, 6, 3)),
    ((3, 2, 1, 0), (6, 7, 7, 2)),
)


def hilbert_entry_exit(state):
    """Reference corners where the curve of ``state`` enters and leaves."""
    order = HILBERT_TABLE[state][0]
    return order[0], order[-1]


# ----------------------------------------------------------------------
# coarse ordering
@dataclass
class CoarseOrder:
    """Root visiting order and the initial curve state of every root."""

    order: list
    states: dict = field(default_factory=dict)


def root_adjacency(mesh):
    """Roots sharing an edge (2D) or face (3D), as sorted neighbor lists."""
    owners = {}
    for r in mesh.roots:
        vs = mesh.root_vertices[r]
        geom = mesh.elements[r].geom
        ents = geo.EDGES[geom] if mesh.dim == 2 else geo.FACES[geom]
        for ent in ents:
            owners.setdefault(frozenset(vs[i] for i in ent), []).append(r)
    nbr = {r: set() for r in mesh.roots}
    for rs in owners.values():
        for a in rs:
            nbr[a].update(b for b in rs if b != a)
    return {r: sorted(n, key=mesh.roots.index) for r, n in nbr.items()}


def order_coarse_mesh(mesh):
    """Greedy face-neighbor walk over the roots.

    From the current root, step to the unvisited neighbor with the fewest
    unvisited neighbors of its own (ties by input order). When the walk is
    stuck it restarts from the first unvisited root and warns. In 2D quad
    meshes every root also gets a Hilbert state whose entry corner is the
    previous root's exit corner, preferring exits shared with the next
    root; state 0 when nothing fits.
    """
    roots = list(mesh.roots)
    nbr = root_adjacency(mesh)
    seen, order = set(), []
    cur = roots[0] if roots else None
    while cur is not None:
        order.append(cur)
        seen.add(cur)
        cand = [n for n in nbr[cur] if n not in seen]
        if cand:
            cur = min(cand, key=lambda n: (sum(m not in seen for m in nbr[n]), roots.index(n)))
            continue
        rest = [r for r in roots if r not in seen]
        cur = rest[0] if rest else None
        if cur is not None:
            warnings.warn("coarse mesh walk broken: no unvisited face neighbor", RuntimeWarning)
    states = {r: 0 for r in order}
    if mesh.dim == 2 and all(mesh.elements[r].geom == geo.QUAD for r in roots):
        states = _thread_states(mesh, order)
    return CoarseOrder(order, states)


def _thread_states(mesh, order):
    states = {}
    prev_exit = None
    for i, r in enumerate(order):
        vs = mesh.root_vertices[r]
        nxt = set(mesh.root_vertices[order[i + 1]]) if i + 1 < len(order) else None
        best, score = 0, -1
        for s in range(8):
            a, b = hilbert_entry_exit(s)
            sc = 0
            if prev_exit is None or vs[a] == prev_exit:
                sc += 2
            if nxt is None or vs[b] in nxt:
                sc += 1
            if sc > score:
                best, score = s, sc
        states[r] = best
        prev_exit = vs[hilbert_entry_exit(best)[1]]
    return states


# ----------------------------------------------------------------------
# leaf enumeration
def _hilbert_children(el, state):
    """``(child, state)`` pairs of a refined quad in Hilbert order."""
    order, cstates = HILBERT_TABLE[state]
    if len(el.child) == 4:
        return [(el.child[k], cstates[i]) for i, k in enumerate(order)]
    # two children: halves covering quadrants {0,3}/{1,2} (split in x) or
    # {0,1}/{3,2} (split in y); visit them as the parent order meets them
    halves = ((0, 3), (1, 2)) if el.ref_type == geo.X else ((0, 1), (3, 2))
    pos = [min(order.index(q) for q in h) for h in halves]
    first = int(np.argmin(pos))
    return [(el.child[first], state), (el.child[1 - first], state)]


def sfc_enumerate(mesh, curve=HILBERT, coarse=None, with_states=False):
    """Depth-first leaf sequence along a space-filling curve.

    Parameters
    ----------
    curve : {"z", "hilbert"}
        ``"hilbert"`` needs a 2D quad mesh.
    coarse : CoarseOrder, optional
        Root order and initial states; default :func:`order_coarse_mesh`.
    with_states : bool
        Also return the Hilbert state of every leaf.
    """
    if curve not in (Z, HILBERT):
        raise UnsupportedCurve(f"unknown curve {curve!r}")
    if curve == HILBERT:
        if mesh.dim != 2 or any(mesh.elements[r].geom != geo.QUAD for r in mesh.roots):
            raise UnsupportedCurve("Hilbert ordering needs a 2D quadrilateral mesh")
    if coarse is None:
        coarse = order_coarse_mesh(mesh)
    out, states = [], []
    stack = [(r, coarse.states.get(r, 0)) for r in reversed(coarse.order)]
    while stack:
        e, s = stack.pop()
        el = mesh.elements[e]
        if not el.refined:
            out.append(e)
            states.append(s)
            continue
        if curve == HILBERT:
            kids = _hilbert_children(el, s)
        else:
            kids = [(el.child[k], 0) for k in geo.Z_ORDER[len(el.child)]]
        stack.extend(reversed(kids))
    return (out, states) if with_states else out


# ----------------------------------------------------------------------
# partitioning
@dataclass
class PartitionAssignment:
    """Leaf-to-rank map along a curve; ``sizes[k]`` leaves on rank ``k``."""

    sequence: list
    ranks: np.ndarray
    sizes: list

    def rank_of(self):
        return dict(zip(self.sequence, self.ranks.tolist()))

    def parts(self):
        out, i = [], 0
        for n in self.sizes:
            out.append(self.sequence[i:i + n])
            i += n
        return out


def partition_sizes(n, k):
    """``k`` contiguous chunk sizes summing to ``n``, larger ones first."""
    if k < 1:
        raise ValueError("number of ranks must be positive")
    q, r = divmod(n, k)
    return [q + 1] * r + [q] * (k - r)


def equipartition(sequence, k):
    """Cut ``sequence`` into ``k`` contiguous chunks of near-equal size."""
    sequence = list(sequence)
    sizes = partition_sizes(len(sequence), k)
    ranks = np.repeat(np.arange(k), sizes)
    return PartitionAssignment(sequence, ranks, sizes)


# ----------------------------------------------------------------------
# statistics
def leaf_adjacency(mesh):
    """Pairs ``(a, b)``, ``a < b``, of leaves sharing part of an edge (2D)
    or face (3D), hanging interfaces included."""
    from .interfaces import build_interface_list

    owner = {}
    for e in mesh.leaves:
        if mesh.dim == 2:
            ids = [mesh.find_edge(a, b) for a, b in mesh.element_edges(e)]
        else:
            ids = [mesh.find_face(*f) for f in mesh.element_faces(e)]
        for i in ids:
            owner.setdefault(i, []).append(e)
    pairs = set()
    for es in owner.values():
        if len(es) == 2:
            pairs.add(tuple(sorted(es)))
    il = build_interface_list(mesh, edges=mesh.dim == 2, check=False)
    masters = il.edge_masters if mesh.dim == 2 else il.face_masters
    for m, slaves in masters:
        for a in owner.get(m, []):
            for s in slaves:
                for b in owner.get(s.entity, []):
                    if a != b:
                        pairs.add((min(a, b), max(a, b)))
    return sorted(pairs)


@dataclass
class PartitionStats:
    counts: list
    cut: int
    boxes: list


def stats(mesh, assignment):
    """Leaf counts, number of cut neighbor pairs, and per-rank bounding boxes."""
    rank = assignment.rank_of()
    cut = sum(rank[a] != rank[b] for a, b in leaf_adjacency(mesh) if a in rank and b in rank)
    boxes = []
    for part in assignment.parts():
        if not part:
            boxes.append(None)
            continue
        pts = np.array([mesh.coords[v] for e in part for v in mesh.elements[e].vertex])
        boxes.append((pts.min(axis=0), pts.max(axis=0)))
    return PartitionStats(list(assignment.sizes), int(cut), boxes)
