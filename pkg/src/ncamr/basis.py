"""Nodal bases and quadrature on reference elements.

Tensor elements use Lagrange polynomials on Gauss-Lobatto points of
``[0, 1]``; node ``(i, j[, k])`` has lexicographic index
``i + (p+1) j [+ (p+1)^2 k]``. Triangles use the Blyth-Pozrikidis node
set built from the same 1D points, so edge nodes match quads exactly.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

from . import geometry as geo


@lru_cache(maxsize=None)
def gll_points(p):
    """Gauss-Lobatto points on [0, 1] (p + 1 of them), increasing."""
    if p < 1:
        raise ValueError("order must be >= 1")
    if p == 1:
        return np.array([0.0, 1.0])
    inner = legendre.Legendre.basis(p).deriv().roots()
    x = np.concatenate([[-1.0], np.sort(inner.real), [1.0]])
    pts = 0.5 * (x + 1.0)
    # symmetric by construction; enforce it bitwise
    pts = 0.5 * (pts + (1.0 - pts[::-1]))
    pts[0], pts[-1] = 0.0, 1.0
    return pts


def lagrange_1d(nodes, x, deriv=False):
    """Lagrange basis on ``nodes`` evaluated at ``x``: shape (len(x), n)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    L = np.ones((len(x), n))
    for j in range(n):
        for m in range(n):
            if m != j:
                L[:, j] *= (x - nodes[m]) / (nodes[j] - nodes[m])
    if not deriv:
        return L
    dL = np.zeros((len(x), n))
    for j in range(n):
        for k in range(n):
            if k == j:
                continue
            term = np.full(len(x), 1.0 / (nodes[j] - nodes[k]))
            for m in range(n):
                if m != j and m != k:
                    term = term * (x - nodes[m]) / (nodes[j] - nodes[m])
            dL[:, j] += term
    return L, dL


@lru_cache(maxsize=None)
def gauss_1d(n):
    x, w = legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_rule(geom, order):
    """Quadrature exact for polynomials of the given degree (per axis)."""
    n = max(1, (order + 2) // 2)
    x, w = gauss_1d(n)
    if geom == geo.TRIANGLE:
        # collapsed square; one extra point absorbs the (1 - v) Jacobian
        xu, wu = gauss_1d(n + 1)
        U, V = np.meshgrid(xu, xu, indexing="ij")
        WU, WV = np.meshgrid(wu, wu, indexing="ij")
        pts = np.stack([U * (1 - V), V], axis=-1).reshape(-1, 2)
        wts = (WU * WV * (1 - V)).ravel()
        return pts, wts
    dim = geo.GEOM_DIM[geom]
    idx = _lex_indices(n - 1, dim)
    return x[idx], np.prod(w[idx], axis=1)


@lru_cache(maxsize=None)
def _lex_indices_cached(p, dim):
    n = p + 1
    out = []
    if dim == 2:
        for j in range(n):
            for i in range(n):
                out.append((i, j))
    else:
        for k in range(n):
            for j in range(n):
                for i in range(n):
                    out.append((i, j, k))
    return np.array(out)


def _lex_indices(p, dim):
    return _lex_indices_cached(p, dim)


def tensor_shape(p, dim, xi, deriv=False):
    """Tensor Lagrange shape functions at points ``xi`` (nq, dim).

    Returns ``N`` of shape (nq, nd) and optionally ``dN`` (nq, nd, dim).
    """
    g = gll_points(p)
    xi = np.atleast_2d(xi)
    idx = _lex_indices(p, dim)
    per_axis = [lagrange_1d(g, xi[:, a], deriv=True) for a in range(dim)]
    N = np.ones((xi.shape[0], len(idx)))
    for a in range(dim):
        N *= per_axis[a][0][:, idx[:, a]]
    if not deriv:
        return N
    dN = np.ones((xi.shape[0], len(idx), dim))
    for d in range(dim):
        for a in range(dim):
            tab = per_axis[a][1] if a == d else per_axis[a][0]
            dN[:, :, d] *= tab[:, idx[:, a]]
    return N, dN


# ----------------------------------------------------------------------
# triangles
@lru_cache(maxsize=None)
def tri_node_lattice(p):
    """Barycentric lattice (l0, l1, l2) of triangle nodes in DOF order.

    Order: vertices 0,1,2; edge (0,1), edge (1,2), edge (2,0) interiors
    walking from the first to the second vertex; then interior nodes.
    """
    lat = [(p, 0, 0), (0, p, 0), (0, 0, p)]
    for i in range(1, p):
        lat.append((p - i, i, 0))
    for i in range(1, p):
        lat.append((0, p - i, i))
    for i in range(1, p):
        lat.append((i, 0, p - i))
    for j in range(1, p):
        for i in range(1, p - j):
            lat.append((p - i - j, i, j))
    return tuple(lat)


@lru_cache(maxsize=None)
def tri_nodes(p):
    g = gll_points(p)
    pts = []
    for l0, l1, l2 in tri_node_lattice(p):
        l = (l0, l1, l2)
        lam = [(1 + 2 * g[l[m]] - g[l[(m + 1) % 3]] - g[l[(m + 2) % 3]]) / 3 for m in range(3)]
        pts.append((lam[1], lam[2]))
    return np.array(pts)


def _tri_monomials(p, xi, deriv=False):
    xi = np.atleast_2d(xi)
    x, y = xi[:, 0], xi[:, 1]
    pw = [(a, b) for a in range(p + 1) for b in range(p + 1 - a)]
    V = np.stack([x**a * y**b for a, b in pw], axis=1)
    if not deriv:
        return V
    dx = np.stack([a * x**max(a - 1, 0) * y**b for a, b in pw], axis=1)
    dy = np.stack([b * x**a * y**max(b - 1, 0) for a, b in pw], axis=1)
    return V, np.stack([dx, dy], axis=-1)


@lru_cache(maxsize=None)
def _tri_coeffs(p):
    V = _tri_monomials(p, tri_nodes(p))
    return np.linalg.inv(V)


def tri_shape(p, xi, deriv=False):
    C = _tri_coeffs(p)
    if not deriv:
        return _tri_monomials(p, xi) @ C
    V, dV = _tri_monomials(p, xi, deriv=True)
    return V @ C, np.einsum("qmd,mn->qnd", dV, C)


def shape(geom, p, xi, deriv=False):
    if geom == geo.TRIANGLE:
        return tri_shape(p, xi, deriv)
    return tensor_shape(p, geo.GEOM_DIM[geom], xi, deriv)


def element_nodes(geom, p):
    """Reference coordinates of the element nodes in local DOF order."""
    if geom == geo.TRIANGLE:
        return tri_nodes(p)
    dim = geo.GEOM_DIM[geom]
    return gll_points(p)[_lex_indices(p, dim)]
