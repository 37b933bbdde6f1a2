"""Poisson assembly in the partially conforming space and the restricted solve.

Sparse storage is :mod:`scipy.sparse` CSR; the triple product ``P^T A P``
is formed explicitly so it can be exported and compared entrywise.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import basis
from . import geometry as geo
from .conforming import write_coo
from .errors import BCOnSlave, DegenerateElement, DimensionMismatch, NoConvergence


@dataclass
class LinearSystem:
    """``A x = b`` with ``A`` sparse CSR."""

    A: sp.csr_matrix
    b: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    def is_symmetric(self, rtol=1e-12):
        A = self.A
        if A.nnz == 0:
            return True
        scale = abs(A).max()
        return abs(A - A.T).max() <= rtol * scale


@lru_cache(maxsize=None)
def _tabulate(geom, p, order):
    xi, w = basis.gauss_rule(geom, order)
    N, dN = basis.shape(geom, p, xi, deriv=True)
    return xi, w, N, dN


def element_geometry(mesh, e, xi):
    """Physical points, Jacobians, determinants and inverses at ``xi``."""
    el = mesh.elements[e]
    x, J = geo.multilinear_map(el.geom, mesh.element_coords(e), xi)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise DegenerateElement(f"element {e} has non-positive Jacobian")
    return x, J, det, np.linalg.inv(J)


def element_matrices(mesh, e, p, rhs=None, order=None):
    """Stiffness matrix and load vector of leaf ``e``."""
    geom = mesh.elements[e].geom
    if order is None:
        order = 2 * p + 1
    xi, w, N, dN = _tabulate(geom, p, order)
    x, J, det, Jinv = element_geometry(mesh, e, xi)
    G = np.einsum("qnd,qde->qne", dN, Jinv)
    wd = w * det
    K = np.einsum("q,qne,qme->nm", wd, G, G)
    if rhs is None:
        f = np.zeros(N.shape[1])
    else:
        f = N.T @ (wd * np.asarray(rhs(x), dtype=float))
    return K, f


def element_groups(space, elements=None):
    """Elements of ``space`` grouped by geometry, in their original order."""
    groups = {}
    for e in space.elements if elements is None else elements:
        groups.setdefault(space.mesh.elements[e].geom, []).append(e)
    return groups


def element_corner_coords(mesh, elements):
    """Corner coordinates ``(ne, nv, sdim)`` of same-geometry leaves."""
    V = np.array([mesh.elements[e].vertex for e in elements], dtype=np.int64)
    return mesh.coord_array()[V]


def batch_geometry(mesh, geom, elements, xi):
    """Points, Jacobians, determinants and inverses for a batch of leaves."""
    coords = element_corner_coords(mesh, elements)
    x, J = geo.batch_map(geom, coords, xi)
    det, Jinv = _det_inv(J)
    if np.any(det <= 0):
        bad = elements[int(np.argwhere(det <= 0)[0, 0])]
        raise DegenerateElement(f"element {bad} has non-positive Jacobian")
    return x, J, det, Jinv


def _det_inv(J):
    """Closed-form determinant and inverse of stacked 2x2 or 3x3 matrices
    (the generic LAPACK loop is slow for many tiny matrices)."""
    if J.shape[-1] == 2:
        a, b, c, d = J[..., 0, 0], J[..., 0, 1], J[..., 1, 0], J[..., 1, 1]
        det = a * d - b * c
        inv = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2)
    else:
        cof = np.cross(J[..., [1, 2, 0], :], J[..., [2, 0, 1], :])  # rows: cofactors
        det = np.einsum("...j,...j->...", J[..., 0, :], cof[..., 0, :])
        inv = np.swapaxes(cof, -1, -2)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = inv / det[..., None, None]
    return det, inv


def assemble_poisson(space, rhs=None, order=None, rhs_order=None):
    """Assemble ``a(u,v) = int grad u . grad v`` and ``l(v) = int f v``.

    ``order`` is the stiffness quadrature order (exact for affine
    elements by default); ``rhs_order`` defaults to something higher since
    the load is usually not polynomial.

    Constraints are ignored entirely: the result lives in the partially
    conforming space of ``space``. Elements are processed in a fixed order
    so the result is bit-reproducible.
    """
    n = space.ndofs
    rows, cols, vals = [], [], []
    b = np.zeros(n)
    if order is None:
        order = 2 * space.p + 1
    if rhs_order is None:
        rhs_order = max(order, 2 * space.p + 7)
    for geom, els in element_groups(space).items():
        xi, w, N, dN = _tabulate(geom, space.p, order)
        x, J, det, Jinv = batch_geometry(space.mesh, geom, els, xi)
        G = np.matmul(dN[None], Jinv)                       # (ne, nq, nd, sdim)
        wd = w[None, :] * det
        ne, nq, nd, sdim = G.shape
        Gt = G.transpose(0, 2, 1, 3).reshape(ne, nd, nq * sdim)
        K = np.matmul(Gt * np.repeat(wd, sdim, axis=1)[:, None, :], Gt.transpose(0, 2, 1))
        dofs = np.array([space.element_dofs[e] for e in els])
        nd = dofs.shape[1]
        rows.append(np.repeat(dofs, nd, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nd)).ravel())
        vals.append(K.ravel())
        if rhs is not None:
            xi, w, N, _ = _tabulate(geom, space.p, rhs_order)
            x, _, det, _ = batch_geometry(space.mesh, geom, els, xi)
            fx = np.asarray(rhs(x.reshape(-1, x.shape[-1])), dtype=float).reshape(x.shape[:2])
            F = np.einsum("eq,qn->en", w[None, :] * det * fx, N)
            np.add.at(b, dofs.ravel(), F.ravel())
    if rows:
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    else:
        A = sp.csr_matrix((n, n))
    A.sum_duplicates()
    return LinearSystem(A, b)


def restrict_system(system, P):
    """Variational restriction ``(P^T A P, P^T b)``."""
    P = sp.csr_matrix(getattr(P, "P", P))
    if P.shape[0] != system.A.shape[0] or P.shape[0] != len(system.b):
        raise DimensionMismatch(
            f"P has {P.shape[0]} rows but the system has size {system.A.shape[0]}")
    Ac = (P.T @ system.A @ P).tocsr()
    Ac.sum_duplicates()
    return LinearSystem(Ac, P.T @ system.b)


def eliminate_essential_bc(system, dofs, values):
    """Symmetric elimination of prescribed values.

    ``dofs`` index the rows of ``system``. Known columns move to the right
    hand side and the rows become unit rows.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    n = system.n
    if len(dofs) and (dofs.min() < 0 or dofs.max() >= n):
        raise DimensionMismatch("boundary DOF out of range")
    A = system.A.tocsr()
    x = np.zeros(n)
    x[dofs] = values
    b = system.b - A @ x
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    b[dofs] = values
    return LinearSystem(A, b)


def true_dof_columns(prolongation, dofs):
    """Map partially conforming DOF ids to columns of ``P``.

    Raises :class:`BCOnSlave` for DOFs that are constrained.
    """
    col = {int(t): k for k, t in enumerate(prolongation.true_dofs)}
    out = []
    for d in np.asarray(dofs, dtype=np.int64):
        if int(d) not in col:
            raise BCOnSlave(f"DOF {d} is a slave; prescribe values on true DOFs only")
        out.append(col[int(d)])
    return np.array(out, dtype=np.int64)


def boundary_true_dofs(space, prolongation):
    """Boundary DOFs of ``space`` that are true DOFs.

    Slave DOFs on the boundary are interpolated from boundary masters and
    need no condition of their own.
    """
    tset = set(int(t) for t in prolongation.true_dofs)
    return np.array([d for d in space.boundary_dofs() if int(d) in tset], dtype=np.int64)


def _preconditioner(A, precond):
    if precond is None:
        return None
    if callable(precond):
        return precond
    if precond == "jacobi":
        d = A.diagonal()
        dinv = np.where(d != 0, 1.0 / np.where(d != 0, d, 1.0), 1.0)
        return lambda r: r * dinv
    if precond == "amg":
        import pyamg

        ml = pyamg.ruge_stuben_solver(sp.csr_matrix(A))
        M = ml.aspreconditioner(cycle="V")
        return M.matvec
    raise ValueError(f"unknown preconditioner {precond!r}")


def solve_cg(system, tol=1e-12, max_iter=None, precond=None, x0=None, info=None):
    """Preconditioned conjugate gradients on an SPD system.

    Stops at relative residual ``<= tol``. ``precond`` is ``None``,
    ``"jacobi"``, ``"amg"`` (classical AMG V-cycle from pyamg) or a
    callable ``r -> z``.
    """
    A, b = system.A, system.b
    n = len(b)
    if max_iter is None:
        max_iter = max(10 * n, 100)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        if info is not None:
            info.update(iterations=0, residual=0.0)
        return np.zeros(n)
    M = _preconditioner(A, precond)
    r = b - A @ x
    z = M(r) if M else r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise NoConvergence("matrix is not positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            if info is not None:
                info.update(iterations=it, residual=res)
            return x
        z = M(r) if M else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(f"CG did not reach {tol} in {max_iter} iterations (res {res:.3e})")


def solve_poisson(space, prolongation, rhs, dirichlet, tol=1e-12, precond="amg"):
    """Full path: assemble, restrict, eliminate boundary values, solve.

    Returns the prolonged solution on all DOFs of ``space``.
    """
    system = assemble_poisson(space, rhs)
    reduced = restrict_system(system, prolongation.P)
    bdr = boundary_true_dofs(space, prolongation)
    X = space.dof_coordinates()
    vals = np.asarray(dirichlet(X[bdr]), dtype=float) if len(bdr) else np.zeros(0)
    reduced = eliminate_essential_bc(reduced, true_dof_columns(prolongation, bdr), vals)
    u = solve_cg(reduced, tol=tol, precond=precond)
    return prolongation.P @ u


def solve_eliminate_first(space, prolongation, rhs, dirichlet, tol=1e-12):
    """Eliminate boundary values in the partially conforming system and
    restrict afterwards. Kept to show that this ordering is wrong."""
    system = assemble_poisson(space, rhs)
    bdr = space.boundary_dofs()
    X = space.dof_coordinates()
    system = eliminate_essential_bc(system, bdr, dirichlet(X[bdr]))
    reduced = restrict_system(system, prolongation.P)
    A = reduced.A.toarray()
    u = np.linalg.lstsq(A, reduced.b, rcond=None)[0]
    return prolongation.P @ u


def write_vector(path, v):
    with open(path, "w") as fh:
        for x in v:
            fh.write(f"{x:.17g}\n")


def write_matrix(path, A):
    write_coo(path, A)
