"""Reference-element conventions shared by every module.

This is the single table of truth for vertex numbering, local edges and
faces, refinement types and child placement.

Conventions
-----------
==========  =====================================================
Triangle    vertices (0,0) (1,0) (0,1); edges (0,1) (1,2) (2,0)
Quad        vertices (0,0) (1,0) (1,1) (0,1) (counterclockwise)
Hex         bottom quad z=0 as above, then top quad z=1
==========  =====================================================

Refinement types are bitmasks over the reference axes ``X=1, Y=2, Z=4``.
A triangle only admits ``ISO_TRI`` (all three edges bisected, 4 children).

Children of tensor elements split along the axis set ``S`` (sorted):

* one axis:  ``(lo, hi)``
* two axes ``(a, b)``: counterclockwise in the ``(a, b)`` plane,
  ``(0,0) (1,0) (1,1) (0,1)``
* three axes: the two-axis pattern in ``(x, y)`` for ``z = 0`` then ``z = 1``

The counterclockwise pattern is what the 2D Hilbert state table expects.
Z-order visits children lexicographically (first split axis fastest), see
:data:`Z_ORDER`.

Triangle children: ``(v0, m01, m20)``, ``(m01, v1, m12)``, ``(m20, m12, v2)``,
``(m12, m20, m01)``.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import InvalidRefType

TRIANGLE, QUAD, HEX = 0, 1, 2
GEOM_NAMES = {TRIANGLE: "tri", QUAD: "quad", HEX: "hex"}
GEOM_BY_NAME = {v: k for k, v in GEOM_NAMES.items()}

X, Y, Z = 1, 2, 4
XY, XZ, YZ, XYZ = 3, 5, 6, 7
ISO_TRI = 3

GEOM_DIM = {TRIANGLE: 2, QUAD: 2, HEX: 3}
NUM_VERTICES = {TRIANGLE: 3, QUAD: 4, HEX: 8}

_QUAD_CORNERS = [(0, 0), (1, 0), (1, 1), (0, 1)]
CORNERS = {
    TRIANGLE: [(0, 0), (1, 0), (0, 1)],
    QUAD: _QUAD_CORNERS,
    HEX: [c + (0,) for c in _QUAD_CORNERS] + [c + (1,) for c in _QUAD_CORNERS],
}

EDGES = {
    TRIANGLE: [(0, 1), (1, 2), (2, 0)],
    QUAD: [(0, 1), (1, 2), (3, 2), (0, 3)],
    HEX: [(0, 1), (1, 2), (3, 2), (0, 3),
          (4, 5), (5, 6), (7, 6), (4, 7),
          (0, 4), (1, 5), (2, 6), (3, 7)],
}

NUM_EDGES = {g: len(e) for g, e in EDGES.items()}


def _corner_index(geom, coords):
    return CORNERS[geom].index(tuple(int(c) for c in coords))


def _hex_faces():
    faces = []
    for axis in range(3):
        free = [a for a in range(3) if a != axis]
        for side in (0, 1):
            verts = []
            for (s, t) in _QUAD_CORNERS:
                c = [0, 0, 0]
                c[axis] = side
                c[free[0]], c[free[1]] = s, t
                verts.append(_corner_index(HEX, c))
            faces.append((axis, side, tuple(verts)))
    return faces


# (fixed axis, side, vertices) -- vertices ordered counterclockwise in the
# two free axes, so vertex k sits at reference corner _QUAD_CORNERS[k]
HEX_FACES = _hex_faces()
FACES = {TRIANGLE: [], QUAD: [], HEX: [f[2] for f in HEX_FACES]}
NUM_FACES = {g: len(f) for g, f in FACES.items()}

VALID_REFTYPES = {
    TRIANGLE: (ISO_TRI,),
    QUAD: (X, Y, XY),
    HEX: (X, Y, Z, XY, XZ, YZ, XYZ),
}
ISOTROPIC = {TRIANGLE: ISO_TRI, QUAD: XY, HEX: XYZ}

_PATTERN2 = [(0, 0), (1, 0), (1, 1), (0, 1)]

Z_ORDER = {1: [0], 2: [0, 1], 4: [0, 1, 3, 2], 8: [0, 1, 3, 2, 4, 5, 7, 6]}


def check_reftype(geom, ref_type):
    if ref_type not in VALID_REFTYPES[geom]:
        raise InvalidRefType(
            f"refinement type {ref_type} not valid for {GEOM_NAMES[geom]}")


def split_axes(ref_type):
    return [a for a in range(3) if ref_type & (1 << a)]


def child_selections(ref_type):
    """Half (0 or 1) chosen along each split axis, for every child in order."""
    axes = split_axes(ref_type)
    if len(axes) == 1:
        pattern = [(0,), (1,)]
    elif len(axes) == 2:
        pattern = _PATTERN2
    else:
        pattern = [p + (0,) for p in _PATTERN2] + [p + (1,) for p in _PATTERN2]
    return axes, pattern


def num_children(geom, ref_type):
    if geom == TRIANGLE:
        return 4
    return 1 << len(split_axes(ref_type))


HALF = Fraction(1, 2)
_TRI_CHILD_CORNERS = [
    [(0, 0), (HALF, 0), (0, HALF)],
    [(HALF, 0), (1, 0), (HALF, HALF)],
    [(0, HALF), (HALF, HALF), (0, 1)],
    [(HALF, HALF), (0, HALF), (HALF, 0)],
]


@lru_cache(maxsize=None)
def child_corner_points(geom, ref_type):
    """Reference coordinates (in the parent) of every child's corners.

    Returns a list (one entry per child) of tuples of Fractions.
    """
    if geom == TRIANGLE:
        return [[tuple(Fraction(c) for c in p) for p in ch] for ch in _TRI_CHILD_CORNERS]
    dim = GEOM_DIM[geom]
    axes, pattern = child_selections(ref_type)
    out = []
    for sel in pattern:
        lo = [Fraction(0)] * dim
        size = [Fraction(1)] * dim
        for a, s in zip(axes, sel):
            lo[a] = HALF * s
            size[a] = HALF
        out.append([tuple(lo[i] + size[i] * c[i] for i in range(dim))
                     for c in CORNERS[geom]])
    return out


@lru_cache(maxsize=None)
def child_vertex_recipe(geom, ref_type):
    """How to obtain the vertices of all children during refinement.

    Returns ``(ops, child_verts)``. ``ops`` lists distinct points in
    creation order; each op is ``("c", k)`` for parent corner ``k`` or
    ``("m", pairs)`` for a mid-point that may be keyed by any of the
    ``pairs`` of earlier op indices (one pair per halved coordinate).
    ``child_verts[i]`` lists op indices of child ``i``'s corners.
    """
    ops, index = [], {}
    corners = [tuple(Fraction(c) for c in cc) for cc in CORNERS[geom]]

    def visit(p):
        if p in index:
            return index[p]
        if p in corners:
            op = ("c", corners.index(p))
        elif geom == TRIANGLE:
            for i, j in EDGES[TRIANGLE]:
                if tuple((a + b) / 2 for a, b in zip(corners[i], corners[j])) == p:
                    op = ("m", ((visit(corners[i]), visit(corners[j])),))
                    break
            else:
                raise AssertionError("bad triangle child point")
        else:
            pairs = []
            for j, c in enumerate(p):
                if c == HALF:
                    p0 = p[:j] + (Fraction(0),) + p[j + 1:]
                    p1 = p[:j] + (Fraction(1),) + p[j + 1:]
                    pairs.append((visit(p0), visit(p1)))
            op = ("m", tuple(pairs))
        index[p] = len(ops)
        ops.append(op)
        return index[p]

    child_verts = tuple(tuple(visit(p) for p in pts)
                        for pts in child_corner_points(geom, ref_type))
    return tuple(ops), child_verts


@lru_cache(maxsize=None)
def child_affines(geom, ref_type):
    """Affine maps child-ref -> parent-ref, one ``(origin, axes)`` per child.

    ``axes[k]`` is the image of reference axis ``k``. Values are dyadic
    rationals and therefore exact in floating point.
    """
    dim = GEOM_DIM[geom]
    out = []
    for pts in child_corner_points(geom, ref_type):
        o = np.array([float(c) for c in pts[0]])
        idx = [1, 2] if geom == TRIANGLE else [1, 3, 4][:dim]
        A = np.array([[float(c) for c in pts[k]] for k in idx]) - o
        out.append((o, A))
    return tuple(out)


def compose_affine(outer, inner):
    """``outer o inner`` for maps stored as ``(origin, axes)``."""
    (o1, A1), (o2, A2) = outer, inner
    return o1 + o2 @ A1, A2 @ A1


def affine_apply(aff, points):
    o, A = aff
    return o + np.asarray(points, dtype=float) @ A


def identity_affine(dim):
    return np.zeros(dim), np.eye(dim)


def parent_corner_child(geom, ref_type, corner):
    """(child index, child-local corner) holding parent corner ``corner``."""
    if geom == TRIANGLE:
        return corner, corner
    axes, pattern = child_selections(ref_type)
    c = CORNERS[geom][corner]
    sel = tuple(c[a] for a in axes)
    return pattern.index(sel), corner


def root_entity_constraints(geom):
    """Per local boundary entity of a root: predicate on reference points.

    For 2D elements the entities are edges, for hexes the faces.
    """
    if geom == TRIANGLE:
        return [lambda p: p[1] == 0, lambda p: p[0] + p[1] == 1, lambda p: p[0] == 0]
    if geom == QUAD:
        return [lambda p: p[1] == 0, lambda p: p[0] == 1,
                lambda p: p[1] == 1, lambda p: p[0] == 0]
    return [(lambda p, a=a, s=s: p[a] == s) for (a, s, _) in HEX_FACES]


def corner_shape(geom, xi):
    """Corner (multilinear) shape functions ``N`` (nq, nv) and their
    reference gradients ``dN`` (nq, nv, dim) at points ``xi``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n = xi.shape[0]
    if geom == TRIANGLE:
        N = np.stack([1 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]], axis=1)
        dN = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]),
                             (n, 3, 2)).copy()
        return N, dN
    dim = GEOM_DIM[geom]
    corners = np.array(CORNERS[geom], dtype=float)
    # prod_i (c_i xi_i + (1 - c_i)(1 - xi_i))
    fac = corners[None, :, :] * xi[:, None, :] + (1 - corners[None, :, :]) * (1 - xi[:, None, :])
    N = np.prod(fac, axis=2)
    dN = np.empty((n, len(corners), dim))
    for j in range(dim):
        d = np.where(corners[:, j] > 0, 1.0, -1.0)[None, :]
        dN[:, :, j] = d * np.prod(np.delete(fac, j, axis=2), axis=2)
    return N, dN


def multilinear_map(geom, coords, xi):
    """Map reference points ``xi`` (n, dim) through the element map.

    ``coords`` holds the corner coordinates (nv, sdim). Returns
    ``(x, J)`` with ``J[q, i, j] = dx_i / dxi_j``.
    """
    coords = np.asarray(coords, dtype=float)
    N, dN = corner_shape(geom, xi)
    return N @ coords, np.einsum("qkj,ki->qij", dN, coords)


def batch_map(geom, coords, xi):
    """:func:`multilinear_map` for many elements: ``coords`` (ne, nv, sdim)
    gives ``x`` (ne, nq, sdim) and ``J`` (ne, nq, sdim, dim)."""
    N, dN = corner_shape(geom, xi)
    coords = np.asarray(coords, dtype=float)
    ne, nv, sdim = coords.shape
    nq, _, dim = dN.shape
    x = np.matmul(N, coords)                                  # (ne, nq, sdim)
    # tensordot goes through BLAS; einsum here is an order slower
    J = np.tensordot(coords, dN, axes=([1], [1]))             # (ne, sdim, nq, dim)
    return x, J.transpose(0, 2, 1, 3)
