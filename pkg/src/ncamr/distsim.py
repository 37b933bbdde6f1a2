"""Deterministic in-process simulation of a distributed non-conforming mesh.

Every rank holds a full copy of the coarse mesh, its own leaves, a ghost
layer (all vertex/edge/face neighbors owned by other ranks) and nothing
else: refinement subtrees that hold neither are pruned. Ranks exchange
byte messages through :class:`Transport`, which delivers them in a fixed
order so runs are bit-reproducible.

Leaves beyond the ghost layer that survive pruning (siblings of needed
elements) carry rank :data:`PRUNED`.
"""
from __future__ import annotations

import csv
import struct
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import geometry as geo
from .conforming import (TOL, build_P, collect_candidates, dependencies_from_candidates)
from .errors import DecodeError, Deadlock, InconsistentMesh
from .fespace import FESpace
from .interfaces import build_interface_list
from .meshio import dumps
from .ncmesh import NIL
from .partition import (HILBERT, Z, equipartition, order_coarse_mesh, partition_sizes,
                        sfc_enumerate)

PRUNED = -1


# ----------------------------------------------------------------------
# transport
@dataclass
class TraceRecord:
    iter: int
    src: int
    dst: int
    bytes: int
    rows: int
    forwarded: int


class Transport:
    """In-memory point-to-point queues with per-pair sequence numbers.

    Messages to one destination are delivered ordered by source rank and
    then by send order. Every message is received exactly once; the
    sequence counters make loss or duplication detectable.
    """

    def __init__(self, size):
        self.size = size
        self.iteration = 0
        self._queues = {}
        self.sent = Counter()
        self.received = Counter()
        self.trace = []

    def send(self, src, dst, payload, rows=0, forwarded=0):
        if src == dst or not (0 <= dst < self.size):
            raise ValueError(f"bad destination {dst} for rank {src}")
        seq = self.sent[(src, dst)]
        self.sent[(src, dst)] += 1
        self._queues.setdefault(dst, deque()).append((src, seq, bytes(payload)))
        self.trace.append(TraceRecord(self.iteration, src, dst, len(payload), rows, forwarded))

    def receive(self, dst):
        msgs = sorted(self._queues.pop(dst, ()), key=lambda m: (m[0], m[1]))
        for src, seq, _ in msgs:
            if seq != self.received[(src, dst)]:
                raise RuntimeError(f"message {src}->{dst} #{seq} out of sequence")
            self.received[(src, dst)] += 1
        return [(src, payload) for src, _, payload in msgs]

    def pending(self):
        return any(self._queues.values())

    def conserved(self):
        """True when every sent message has been received once."""
        return not self.pending() and self.sent == self.received

    @property
    def messages(self):
        return len(self.trace)

    @property
    def forwarded_messages(self):
        return sum(1 for t in self.trace if t.forwarded)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "src", "dst", "bytes", "rows", "forwarded"])
            for t in self.trace:
                wr.writerow([t.iter, t.src, t.dst, t.bytes, t.rows, t.forwarded])


def exclusive_scan(values):
    """Stand-in for a parallel prefix sum: ``out[k] = sum(values[:k])``."""
    out, acc = [], 0
    for v in values:
        out.append(acc)
        acc += v
    return out


# ----------------------------------------------------------------------
# element-set encoding
_HEAD = struct.Struct("<BI")
_U32 = struct.Struct("<I")


def encode_element_set(mesh, elements, ref_types=False):
    """Encode a set of elements as root indices and 8-bit child masks.

    For every tree touched by the set the stream holds a depth-first walk:
    one mask per visited node saying which children lead to set members,
    and a zero mask at each member. With ``ref_types`` the refinement type
    of every inner node follows its mask, so a rank whose tree is pruned
    there can rebuild the path.

    Returns ``(data, order)`` where ``order`` lists the members in stream
    order; payloads refer to members by position in ``order``.
    """
    S = set(int(e) for e in elements)
    on_path = set()
    root_index = {r: i for i, r in enumerate(mesh.roots)}
    roots = set()
    for e in S:
        x = e
        while x != NIL and x not in on_path:
            on_path.add(x)
            parent = mesh.elements[x].parent
            if parent == NIL:
                roots.add(root_index[x])
            x = parent
        if x != NIL:
            # walk stopped at a node already on a path; make sure no member
            # sits strictly above another member
            pass
    for e in S:
        x = mesh.elements[e].parent
        while x != NIL:
            if x in S:
                raise ValueError(f"element {x} is an ancestor of member {e}")
            x = mesh.elements[x].parent
    out = bytearray(_HEAD.pack(1 if ref_types else 0, len(roots)))
    for r in sorted(roots):
        out += _U32.pack(r)
    order = []
    for r in sorted(roots):
        stack = [mesh.roots[r]]
        while stack:
            x = stack.pop()
            el = mesh.elements[x]
            if x in S:
                out.append(0)
                order.append(x)
                continue
            mask = 0
            for k, c in enumerate(el.child):
                if c in on_path:
                    mask |= 1 << k
            out.append(mask)
            if ref_types:
                out.append(el.ref_type)
            stack.extend(c for k, c in reversed(list(enumerate(el.child))) if mask >> k & 1)
    return bytes(out), order


def decode_element_set(mesh, data, create=False, offset=0):
    """Inverse of :func:`encode_element_set` on a rank sharing the roots.

    With ``create`` (requires a stream with refinement types) missing
    subtrees are refined on the fly. Returns ``(elements, end_offset)``.
    Raises :class:`DecodeError` on malformed input.
    """
    try:
        flags, nroots = _HEAD.unpack_from(data, offset)
    except struct.error as exc:
        raise DecodeError("truncated element-set header") from exc
    if flags not in (0, 1):
        raise DecodeError(f"bad element-set flags {flags}")
    with_rt = bool(flags)
    if create and not with_rt:
        raise DecodeError("cannot rebuild subtrees without refinement types")
    pos = offset + _HEAD.size
    roots = []
    for _ in range(nroots):
        try:
            (r,) = _U32.unpack_from(data, pos)
        except struct.error as exc:
            raise DecodeError("truncated root list") from exc
        if r >= len(mesh.roots):
            raise DecodeError(f"root index {r} out of range")
        roots.append(r)
        pos += 4
    if roots != sorted(set(roots)):
        raise DecodeError("root indices not strictly increasing")

    def byte():
        nonlocal pos
        if pos >= len(data):
            raise DecodeError("truncated mask stream")
        pos += 1
        return data[pos - 1]

    out = []
    for r in roots:
        stack = [mesh.roots[r]]
        while stack:
            x = stack.pop()
            mask = byte()
            if mask == 0:
                out.append(x)
                continue
            el = mesh.elements[x]
            if with_rt:
                rt = byte()
                if el.refined and el.ref_type != rt:
                    raise DecodeError(f"element {x} refined differently ({el.ref_type} != {rt})")
                if not el.refined:
                    if not create:
                        raise DecodeError(f"element {x} is not refined on this rank")
                    try:
                        mesh.refine(x, rt)
                    except ValueError as exc:
                        raise DecodeError(str(exc)) from exc
                    el = mesh.elements[x]
            elif not el.refined:
                raise DecodeError(f"element {x} is not refined on this rank")
            if mask >> len(el.child):
                raise DecodeError(f"mask {mask:#04x} names missing children")
            stack.extend(c for k, c in reversed(list(enumerate(el.child))) if mask >> k & 1)
    return out, pos


# ----------------------------------------------------------------------
# distributed mesh
@dataclass
class RankMesh:
    """One rank's view: the local mesh plus leaf classification."""

    rank: int
    size: int
    mesh: object
    curve: str
    owned: list = field(default_factory=list)
    ghosts: list = field(default_factory=list)
    boundary: list = field(default_factory=list)

    def state(self):
        """Replay-format text with per-leaf ranks (pruned leaves are -1)."""
        return dumps(self.mesh, ranks=[self.mesh.elements[e].rank for e in self.mesh.leaves])

    def sfc(self):
        return sfc_enumerate(self.mesh, self.curve, self.coarse)

    @property
    def coarse(self):
        if getattr(self, "_coarse", None) is None:
            self._coarse = order_coarse_mesh(self.mesh)
        return self._coarse


def default_curve(mesh):
    """Hilbert on 2D all-quad meshes, Z otherwise."""
    if mesh.dim == 2 and all(mesh.elements[r].geom == geo.QUAD for r in mesh.roots):
        return HILBERT
    return Z


def _neighbors_mask(mesh, leaves, mask):
    if not mask.any():
        return mask.copy()
    return mesh.neighbor_query().expand(mask)


def _prune(mesh, keep):
    """Coarsen every subtree without a leaf in ``keep``; their roots get
    rank :data:`PRUNED`."""
    needed = {}

    def visit(e):
        el = mesh.elements[e]
        if not el.refined:
            needed[e] = e in keep
        else:
            needed[e] = any([visit(c) for c in el.child])
        return needed[e]

    for r in mesh.roots:
        visit(r)
    stack = list(mesh.roots)
    while stack:
        e = stack.pop()
        el = mesh.elements[e]
        if not needed[e]:
            if el.refined:
                mesh.coarsen(e)
            mesh.elements[e].rank = PRUNED
        elif el.refined:
            stack.extend(el.child)


def _classify(rm, prune=True):
    """Recompute ghosts from the owned leaves, drop everything else."""
    mesh, k = rm.mesh, rm.rank
    leaves = mesh.leaves
    ranks = np.array([mesh.elements[e].rank for e in leaves])
    own = ranks == k
    near = _neighbors_mask(mesh, leaves, own)
    ghost = near & ~own
    if (ranks[ghost] < 0).any():
        raise InconsistentMesh(f"rank {k}: ghost layer has leaves of unknown owner")
    keep = set(np.asarray(leaves)[own | ghost].tolist())
    for e, g in zip(leaves, own | ghost):
        if not g:
            mesh.elements[e].rank = PRUNED
    if prune:
        _prune(mesh, keep)
    leaves = mesh.leaves
    ranks = np.array([mesh.elements[e].rank for e in leaves])
    own = ranks == k
    ghost = (ranks >= 0) & ~own
    rm.owned = [e for e, o in zip(leaves, own) if o]
    rm.ghosts = [e for e, g in zip(leaves, ghost) if g]
    bnd = _neighbors_mask(mesh, leaves, ghost) & own
    rm.boundary = [e for e, b in zip(leaves, bnd) if b]
    return rm


def distribute(mesh, k, curve=None, ranks=None):
    """Split ``mesh`` over ``k`` ranks.

    Leaves are assigned by equal chunks of the space-filling curve, or by
    ``ranks`` (a dict leaf -> rank, or a sequence aligned with
    ``mesh.leaves``). Returns one :class:`RankMesh` per rank.
    """
    if k < 1:
        raise ValueError("number of ranks must be positive")
    curve = curve or default_curve(mesh)
    leaves = mesh.leaves
    if ranks is None:
        rank_of = equipartition(sfc_enumerate(mesh, curve), k).rank_of()
    elif isinstance(ranks, dict):
        rank_of = dict(ranks)
    else:
        rank_of = dict(zip(leaves, ranks))
    if set(rank_of) != set(leaves) or any(not 0 <= r < k for r in rank_of.values()):
        raise ValueError("rank assignment must cover every leaf with ranks 0..k-1")
    out = []
    for r in range(k):
        m = mesh.copy()
        for e in leaves:
            m.elements[e].rank = rank_of[e]
        rm = RankMesh(r, k, m, curve)
        out.append(_classify(rm, prune=k > 1))
    return out


def serial_ranks(mesh, rank_meshes):
    """Owner of every serial leaf according to the rank meshes (via paths)."""
    out = {}
    for rm in rank_meshes:
        for e in rm.owned:
            r, path = rm.mesh.element_path(e)
            out[mesh.element_by_path(r, path)] = rm.rank
    return out


# ----------------------------------------------------------------------
# distributed refinement and balancing
def _ghost_ranks(rm, elements):
    """For each element, ranks (other than ours) holding it as a ghost."""
    mesh = rm.mesh
    leaves = mesh.leaves
    index = {e: i for i, e in enumerate(leaves)}
    nq = mesh.neighbor_query()
    out = {}
    for e in elements:
        mask = np.zeros(len(leaves), dtype=bool)
        mask[index[e]] = True
        near = nq.expand(mask)
        rs = {mesh.elements[x].rank for x, n in zip(leaves, near) if n}
        out[e] = sorted(r for r in rs if r >= 0 and r != rm.rank)
    return out


def refine_distributed(rank_meshes, marked, transport=None):
    """Refine owned leaves on each rank and mirror boundary refinements.

    ``marked[k]`` lists leaves of rank ``k`` (local indices), optionally
    as ``(element, ref_type)`` pairs. Refinements of boundary elements are
    sent, one message per neighbor, to every rank holding them as ghosts.
    Returns the transport used.
    """
    size = len(rank_meshes)
    tr = transport or Transport(size)
    for rm in rank_meshes:
        todo = []
        for item in marked.get(rm.rank, ()) if isinstance(marked, dict) else marked[rm.rank]:
            e, rt = item if isinstance(item, tuple) else (item, None)
            el = rm.mesh.elements[e]
            if el.refined or el.rank != rm.rank:
                raise ValueError(f"rank {rm.rank}: element {e} is not an owned leaf")
            todo.append((e, geo.ISOTROPIC[el.geom] if rt is None else rt))
        bset = set(rm.boundary)
        targets = _ghost_ranks(rm, [e for e, _ in todo if e in bset])
        for e, rt in todo:
            rm.mesh.refine(e, rt)
        per_dst = {}
        for e, rt in todo:
            for r in targets.get(e, ()):
                per_dst.setdefault(r, []).append((e, rt))
        for r, items in sorted(per_dst.items()):
            rts = dict(items)
            data, order = encode_element_set(rm.mesh, list(rts))
            payload = data + bytes(rts[e] for e in order)
            tr.send(rm.rank, r, payload, rows=len(order))
    for rm in rank_meshes:
        for src, payload in tr.receive(rm.rank):
            elems, pos = decode_element_set(rm.mesh, payload)
            rts = payload[pos:]
            if len(rts) != len(elems):
                raise DecodeError("refinement message has wrong payload length")
            for e, rt in zip(elems, rts):
                el = rm.mesh.elements[e]
                if el.refined or el.rank < 0:
                    raise DecodeError(f"rank {rm.rank}: element {e} is not a ghost leaf")
                rm.mesh.refine(e, rt)
        _classify(rm)
    return tr


@dataclass
class MigrationReport:
    moved: dict
    sizes: list
    messages: int

    @property
    def empty(self):
        return not self.moved


def load_balance(rank_meshes, transport=None):
    """Rebalance to equal SFC chunks (sizes differ by at most one).

    New owners follow from a prefix sum of the owned counts. New ranks of
    boundary elements go to the ranks holding them as ghosts, then every
    leaf moving away is sent to its new owner together with its
    neighbors, and all ranks prune.
    """
    size = len(rank_meshes)
    tr = transport or Transport(size)
    before = tr.messages
    seqs = []
    for rm in rank_meshes:
        seqs.append([e for e in rm.sfc() if rm.mesh.elements[e].rank == rm.rank])
    counts = [len(s) for s in seqs]
    offsets = exclusive_scan(counts)
    sizes = partition_sizes(sum(counts), size)
    bounds = np.cumsum(sizes)
    new_rank = []
    moved = Counter()
    for rm, seq, off in zip(rank_meshes, seqs, offsets):
        nr = {e: int(np.searchsorted(bounds, off + i, side="right")) for i, e in enumerate(seq)}
        new_rank.append(nr)
        for e, r in nr.items():
            if r != rm.rank:
                moved[(rm.rank, r)] += 1
    if not moved:
        return MigrationReport({}, sizes, 0)
    # 1) new owners of boundary elements to the ranks that see them as ghosts
    for rm, nr in zip(rank_meshes, new_rank):
        targets = _ghost_ranks(rm, rm.boundary)
        per_dst = {}
        for e in rm.boundary:
            for r in targets[e]:
                per_dst.setdefault(r, []).append(e)
        for r, els in sorted(per_dst.items()):
            data, order = encode_element_set(rm.mesh, els)
            tr.send(rm.rank, r, data + b"".join(_U32.pack(nr[e]) for e in order),
                    rows=len(order))
    for rm in rank_meshes:
        for src, payload in tr.receive(rm.rank):
            elems, pos = decode_element_set(rm.mesh, payload)
            for i, e in enumerate(elems):
                (r,) = _U32.unpack_from(payload, pos + 4 * i)
                rm.mesh.elements[e].rank = r
    # 2) migrate leaves with a layer of neighbors
    outgoing = []
    for rm, nr in zip(rank_meshes, new_rank):
        mesh = rm.mesh
        leaves = mesh.leaves
        index = {e: i for i, e in enumerate(leaves)}
        for e, r in nr.items():
            mesh.elements[e].rank = r
        by_dst = {}
        for e, r in nr.items():
            if r != rm.rank:
                by_dst.setdefault(r, []).append(e)
        nq = mesh.neighbor_query() if by_dst else None
        for r, els in sorted(by_dst.items()):
            mask = np.zeros(len(leaves), dtype=bool)
            mask[[index[e] for e in els]] = True
            near = nq.expand(mask)
            send = [e for e, n in zip(leaves, near) if n]
            data, order = encode_element_set(mesh, send, ref_types=True)
            ranks = [mesh.elements[e].rank for e in order]
            if min(ranks) < 0:
                raise InconsistentMesh(f"rank {rm.rank}: migrating a leaf with unknown owner")
            outgoing.append((rm.rank, r, data + b"".join(_U32.pack(x) for x in ranks),
                             len(order)))
    for src, dst, payload, n in outgoing:
        tr.send(src, dst, payload, rows=n)
    for rm in rank_meshes:
        for src, payload in tr.receive(rm.rank):
            elems, pos = decode_element_set(rm.mesh, payload, create=True)
            for i, e in enumerate(elems):
                (r,) = _U32.unpack_from(payload, pos + 4 * i)
                rm.mesh.elements[e].rank = r
    for rm in rank_meshes:
        _classify(rm)
    return MigrationReport(dict(moved), sizes, tr.messages - before)


# ----------------------------------------------------------------------
# parallel P
@dataclass
class DofMeta:
    """Ownership data of one rank's local and ghost DOFs."""

    owner: np.ndarray         # o_i
    group: np.ndarray         # g_i, index into ``groups``
    resolved: np.ndarray      # r_i
    groups: list              # sorted rank tuples
    nlocal: int               # N_hat_k
    nghost: int               # G_hat_k
    ntrue: int = 0            # N_k
    first: int = 0            # N_0k


_KIND = {"v": 0, "e": 1, "f": 2}


class _RankP:
    """Per-rank state of the parallel P construction."""

    def __init__(self, rm, p):
        self.rm = rm
        self.k = rm.rank
        mesh = rm.mesh
        self.mesh = mesh
        self.space = FESpace(mesh, p, elements=rm.owned, ghost_elements=rm.ghosts)
        sp_ = self.space
        view = rm.owned + rm.ghosts
        il = build_interface_list(mesh, view, check=False)
        cands = collect_candidates(sp_, il)
        cands = {i: c for i, c in cands.items() if i < sp_.nlocal}
        self.D = dependencies_from_candidates(sp_.ndofs, cands)
        # entities -> holding elements
        self.holders = {}
        for e in view:
            el = mesh.elements[e]
            for v in el.vertex:
                self.holders.setdefault(("v", v), []).append(e)
            for a, b in mesh.element_edges(e):
                self.holders.setdefault(("e", mesh.find_edge(a, b)), []).append(e)
            for f in mesh.element_faces(e):
                self.holders.setdefault(("f", mesh.find_face(*f)), []).append(e)
        base = {key: {mesh.elements[e].rank for e in es} for key, es in self.holders.items()}
        merged = {key: set(g) for key, g in base.items()}
        relations = [("e", m, ss) for m, ss in il.edge_masters]
        relations += [("f", m, ss) for m, ss in il.face_masters]
        for kind, m, slaves in relations:
            # master rows flow to every rank holding a slave
            union = set()
            for sl in slaves:
                for key in self._closure(kind, sl.entity):
                    union |= base.get(key, set())
            union.discard(PRUNED)
            for key in self._closure(kind, m):
                if key in merged:
                    merged[key] |= union
        n = sp_.ndofs
        owner = np.full(n, self.k, dtype=np.int64)
        gidx = np.zeros(n, dtype=np.int64)
        groups, gmap = [], {}
        self.group_sets = []
        for i, (kind, ent, _) in enumerate(sp_.entity_of_dof):
            if kind == "i":
                g = {self.k}
            else:
                key = (kind, ent)
                owner[i] = min(base[key])
                g = merged[key]
            t = tuple(sorted(g))
            if t not in gmap:
                gmap[t] = len(groups)
                groups.append(t)
            gidx[i] = gmap[t]
        self.meta = DofMeta(owner, gidx, np.zeros(n, dtype=bool), groups,
                            sp_.nlocal, n - sp_.nlocal)
        self.rows = [None] * n
        self.sent_to = [set() for _ in range(n)]
        self.outgoing = {}
        self.forwarded_rows = 0
        self._near_cache = {}
        self.true_local = [i for i in range(sp_.nlocal)
                           if i not in self.D.rows and owner[i] == self.k]
        self.meta.ntrue = len(self.true_local)
        self._users = {}
        for i, row in self.D.rows.items():
            for j in row:
                self._users.setdefault(j, []).append(i)
        self._missing = {i: sum(1 for j in row) for i, row in self.D.rows.items()}

    # -- entity helpers -------------------------------------------------
    def _closure(self, kind, idx):
        mesh = self.mesh
        keys = {(kind, idx)}
        if kind == "e":
            keys |= {("v", v) for v in mesh.edges.keys[idx]}
        else:
            verts = [v for v in mesh.faces.keys[idx] if v != NIL]
            keys |= {("v", v) for v in verts}
            holder = self.holders.get(("f", idx))
            if holder:
                for f in mesh.element_faces(holder[0]):
                    if mesh.find_face(*f) == idx:
                        cyc = [v for v in f if v != NIL]
                        for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                            ei = mesh.find_edge(a, b)
                            if ei != NIL:
                                keys.add(("e", ei))
        return keys

    def group_of(self, i):
        return self.meta.groups[self.meta.group[i]]

    def _local_entity(self, e, kind, ent):
        mesh = self.mesh
        if kind == "v":
            return mesh.elements[e].vertex.index(ent)
        if kind == "e":
            for n, (a, b) in enumerate(mesh.element_edges(e)):
                if mesh.find_edge(a, b) == ent:
                    return n
        else:
            for n, f in enumerate(mesh.element_faces(e)):
                if mesh.find_face(*f) == ent:
                    return n
        raise KeyError((e, kind, ent))

    def dof_from_entity(self, e, kind, n, m):
        mesh, sp_ = self.mesh, self.space
        el = mesh.elements[e]
        try:
            if kind == 0:
                return sp_.vertex_dof[el.vertex[n]]
            if kind == 1:
                a, b = mesh.element_edges(e)[n]
                return sp_.edge_base[mesh.find_edge(a, b)] + m
            f = mesh.element_faces(e)[n]
            return sp_.face_base[mesh.find_face(*f)] + m
        except (KeyError, IndexError) as exc:
            raise DecodeError(f"rank {self.k}: no DOF for entity {kind}:{n}:{m} of {e}") from exc

    def _near(self, dst):
        """Leaves of our view adjacent to leaves owned by ``dst``; these are
        in ``dst``'s ghost layer."""
        if dst not in self._near_cache:
            mesh = self.mesh
            leaves = mesh.leaves
            mask = np.array([mesh.elements[e].rank == dst for e in leaves])
            near = _neighbors_mask(mesh, leaves, mask)
            self._near_cache[dst] = {e for e, n in zip(leaves, near) if n}
        return self._near_cache[dst]

    def _carrier(self, i, dst):
        """Element holding DOF ``i``'s entity that ``dst`` surely has if
        possible: one it owns, then one next to its leaves."""
        kind, ent, _ = self.space.entity_of_dof[i]
        es = self.holders[(kind, ent)]
        for e in es:
            if self.mesh.elements[e].rank == dst:
                return e
        near = self._near(dst)
        for e in es:
            if e in near:
                return e
        return es[0]

    # -- algorithm steps ------------------------------------------------
    def queue(self, i, dsts, forwarded=False, group=None):
        g = self.group_of(i) if group is None else group
        for r in sorted(dsts):
            self.outgoing.setdefault(r, []).append((i, forwarded, tuple(sorted(g))))
            self.sent_to[i].add(r)

    def resolve(self, i, row):
        self.rows[i] = row
        self.meta.resolved[i] = True
        for s in self._users.get(i, ()):
            self._missing[s] -= 1

    def seed(self):
        for j, i in enumerate(self.true_local):
            self.resolve(i, {self.meta.first + j: 1.0})
            self.queue(i, set(self.group_of(i)) - {self.k})

    def inner(self):
        """Resolve every row whose dependencies are available."""
        count = 0
        work = [i for i, c in self._missing.items() if c == 0 and not self.meta.resolved[i]]
        while work:
            i = work.pop()
            if self.meta.resolved[i]:
                continue
            acc = {}
            for j, w in self.D.rows[i].items():
                for c, v in self.rows[j].items():
                    acc[c] = acc.get(c, 0.0) + w * v
            self.resolve(i, {c: v for c, v in acc.items() if abs(v) >= TOL})
            count += 1
            self.queue(i, set(self.group_of(i)) - {self.k} - self.sent_to[i])
            for s in self._users.get(i, ()):
                if self._missing[s] == 0 and not self.meta.resolved[s]:
                    work.append(s)
        return count

    def flush(self, tr):
        for dst in sorted(self.outgoing):
            items = self.outgoing[dst]
            carriers = [self._carrier(i, dst) for i, _, _ in items]
            data, order = encode_element_set(self.mesh, carriers)
            pos = {e: n for n, e in enumerate(order)}
            body = bytearray(_U32.pack(len(data)) + data + _U32.pack(len(items)))
            nfwd = 0
            for (i, fwd, grp), e in zip(items, carriers):
                kind, ent, m = self.space.entity_of_dof[i]
                row = self.rows[i]
                cols = sorted(row)
                body += struct.pack("<IBBHBB", pos[e], _KIND[kind],
                                    self._local_entity(e, kind, ent), m, int(fwd), len(grp))
                body += struct.pack(f"<{len(grp)}H", *grp)
                body += _U32.pack(len(cols))
                body += np.asarray(cols, dtype="<i8").tobytes()
                body += np.asarray([row[c] for c in cols], dtype="<f8").tobytes()
                nfwd += int(fwd)
            tr.send(self.k, dst, bytes(body), rows=len(items), forwarded=nfwd)
        self.outgoing = {}

    def absorb(self, src, payload):
        (n,) = _U32.unpack_from(payload, 0)
        elems, end = decode_element_set(self.mesh, payload[4:4 + n])
        if end != n:
            raise DecodeError("trailing bytes after element set")
        pos = 4 + n
        (nrows,) = _U32.unpack_from(payload, pos)
        pos += 4
        hdr = struct.Struct("<IBBHBB")
        count = 0
        for _ in range(nrows):
            ei, kind, ln, m, fwd, ng = hdr.unpack_from(payload, pos)
            pos += hdr.size
            grp = struct.unpack_from(f"<{ng}H", payload, pos)
            pos += 2 * ng
            (nnz,) = _U32.unpack_from(payload, pos)
            pos += 4
            cols = np.frombuffer(payload, dtype="<i8", count=nnz, offset=pos)
            pos += 8 * nnz
            vals = np.frombuffer(payload, dtype="<f8", count=nnz, offset=pos)
            pos += 8 * nnz
            if ei >= len(elems):
                raise DecodeError("row refers to a missing element")
            i = self.dof_from_entity(elems[ei], kind, ln, m)
            if not self.meta.resolved[i]:
                self.resolve(i, dict(zip(cols.tolist(), vals.tolist())))
                count += 1
            if not fwd:
                missing = set(self.group_of(i)) - set(grp) - {self.k} - self.sent_to[i] - {src}
                if missing:
                    self.forwarded_rows += 1
                    self.queue(i, missing, forwarded=True, group=set(grp) | set(self.group_of(i)))
        if pos != len(payload):
            raise DecodeError("trailing bytes in row message")
        return count

    def done(self):
        r = self.meta.resolved
        return bool(r[:self.meta.nlocal].all())

    def block(self, ncols):
        """Rows of P for the local DOFs, ``nlocal x ncols`` CSR."""
        r, c, v = [], [], []
        for i in range(self.meta.nlocal):
            for col, val in sorted(self.rows[i].items()):
                r.append(i)
                c.append(col)
                v.append(val)
        return sp.csr_matrix((v, (r, c)), shape=(self.meta.nlocal, ncols))


@dataclass
class ParallelP:
    """Per-rank P blocks, the column partition and run statistics."""

    blocks: list
    first: list
    ntrue: list
    spaces: list
    meta: list
    iterations: int
    transport: Transport
    forwarded_rows: int
    seeds: list = None        # per rank, local DOF seeded at column first + j

    @property
    def ncols(self):
        return int(sum(self.ntrue))

    def column_owner(self, c):
        k = int(np.searchsorted(np.cumsum(self.ntrue), c, side="right"))
        return k, c - self.first[k]


def construct_parallel_P(rank_meshes, p, transport=None, max_iter=1000):
    """Build the parallel conforming prolongation by message passing.

    Owned true DOFs are seeded with identity rows at global columns offset
    by a prefix sum of the per-rank counts. Each outer iteration sends one
    message per destination, absorbs the incoming rows (forwarding them
    once to ranks missing from the sender's group), and resolves every
    local row whose dependencies are known.
    """
    size = len(rank_meshes)
    tr = transport or Transport(size)
    states = [_RankP(rm, p) for rm in rank_meshes]
    firsts = exclusive_scan([s.meta.ntrue for s in states])
    for s, f in zip(states, firsts):
        s.meta.first = f
        s.seed()
    for s in states:
        s.inner()
    it = 0
    while not (all(s.done() for s in states) and not any(s.outgoing for s in states)):
        it += 1
        if it > max_iter:
            raise Deadlock(f"no convergence after {max_iter} outer iterations")
        tr.iteration = it
        sent = tr.messages
        for s in states:
            s.flush(tr)
        progress = tr.messages - sent
        for s in states:
            for src, payload in tr.receive(s.k):
                progress += s.absorb(src, payload)
            progress += s.inner()
        if progress == 0:
            raise Deadlock("outer iteration made no progress; unresolved rows remain")
    ncols = int(sum(s.meta.ntrue for s in states))
    return ParallelP([s.block(ncols) for s in states], firsts, [s.meta.ntrue for s in states],
                     [s.space for s in states], [s.meta for s in states], it, tr,
                     sum(s.forwarded_rows for s in states),
                     [s.true_local for s in states])


# ----------------------------------------------------------------------
# serial/parallel comparison
def parallel_rap(par):
    """``sum_k P_k^T A_k P_k`` with ``A_k`` the owned-element stiffness."""
    n = par.ncols
    out = sp.csr_matrix((n, n))
    for space, Pk in zip(par.spaces, par.blocks):
        if space.nlocal == 0:
            continue
        A = asm.assemble_poisson(space).A[:space.nlocal, :space.nlocal]
        out = out + (Pk.T @ A @ Pk)
    return out.tocsr()


def _column_keys(par):
    """Geometric identity of every global column (its seeded DOF)."""
    return [space.dof_key(i) for space, seeds in zip(par.spaces, par.seeds) for i in seeds]


def compare_with_serial(mesh, rank_meshes, p, par=None):
    """Max entrywise difference of serial and parallel ``P^T A P`` after
    matching true-DOF columns by geometric identity."""
    if par is None:
        par = construct_parallel_P(rank_meshes, p)
    space, _, P = build_P(mesh, p)
    A = asm.assemble_poisson(space).A
    R_s = (P.P.T @ A @ P.P).tocsr()
    skeys = {space.dof_key(int(t)): c for c, t in enumerate(P.true_dofs)}
    pkeys = _column_keys(par)
    if len(pkeys) != len(skeys):
        return float("inf"), par
    perm = np.array([skeys[k] for k in pkeys])
    R_p = parallel_rap(par)
    Q = sp.csr_matrix((np.ones(len(perm)), (perm, np.arange(len(perm)))),
                      shape=(len(perm), len(perm)))
    diff = R_s - Q @ R_p @ Q.T
    return (float(abs(diff).max()) if diff.nnz else 0.0), par
