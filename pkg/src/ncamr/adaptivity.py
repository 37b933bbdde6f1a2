"""Exact-error AMR for the circular wave-front Poisson benchmark."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import assembly as asm
from . import basis
from . import geometry as geo
from .conforming import build_P
from .meshio import hex_grid, quad_grid
from .ncmesh import ensure_consistency

ISO_FRACTION = 0.7
ANISO_FRACTION = 0.6


@dataclass
class BenchmarkProblem:
    """``u = atan(alpha (|x - x_c| - r))`` on the unit square or cube."""

    dim: int = 2
    alpha: float = 200.0
    center: tuple = None
    radius: float = 0.7

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.center is None:
            self.center = (-0.05,) * self.dim
        self.center = np.asarray(self.center, dtype=float)

    def _rho(self, X):
        d = np.atleast_2d(X) - self.center
        return d, np.sqrt(np.sum(d * d, axis=1))

    def u(self, X):
        _, rho = self._rho(X)
        return np.arctan(self.alpha * (rho - self.radius))

    def grad(self, X):
        d, rho = self._rho(X)
        s = self.alpha * (rho - self.radius)
        g1 = self.alpha / (1 + s * s)
        return (g1 / rho)[:, None] * d

    def f(self, X):
        """``-Laplace(u)`` for the radial profile."""
        _, rho = self._rho(X)
        s = self.alpha * (rho - self.radius)
        g1 = self.alpha / (1 + s * s)
        g2 = -2 * self.alpha**2 * s / (1 + s * s) ** 2
        return -(g2 + (self.dim - 1) * g1 / rho)


def initial_mesh(dim, n=4):
    return quad_grid(n, n) if dim == 2 else hex_grid(n, n, n)


def error_orders(space, problem, elements=None):
    """Per-element quadrature order for the exact error.

    The solution varies on the length scale ``1/alpha``; elements much
    larger than that need many points, small ones few. Capped at 30 in 2D
    and 12 in 3D.
    """
    mesh = space.mesh
    els = space.elements if elements is None else elements
    cap = 30 if mesh.dim == 2 else 12
    base = 2 * space.p + 6
    alpha = float(getattr(problem, "alpha", 1.0e6))
    out = np.empty(len(els), dtype=int)
    groups = {}
    for k, e in enumerate(els):
        groups.setdefault(mesh.elements[e].geom, []).append(k)
    for ks in groups.values():
        c = asm.element_corner_coords(mesh, [els[k] for k in ks])
        h = np.max(c.max(axis=1) - c.min(axis=1), axis=1)
        out[ks] = np.minimum(cap, base + 2 * np.ceil(alpha * h).astype(int))
    return out


def _error_integrals(space, u_hat, problem, order, aniso=False):
    """Per-element squared H1-seminorm errors and optional axis indicators.

    ``order`` is one quadrature order for all elements, or ``None`` for
    :func:`error_orders`.
    """
    mesh = space.mesh
    if order is None:
        orders = error_orders(space, problem)
    else:
        orders = np.full(len(space.elements), int(order))
    groups = {}
    for e, q in zip(space.elements, orders):
        groups.setdefault((mesh.elements[e].geom, int(q)), []).append(e)
    out = {}
    for (geom, q), els in groups.items():
        xi, w = basis.gauss_rule(geom, q)
        _, dN = basis.shape(geom, space.p, xi, deriv=True)
        x, J, det, Jinv = asm.batch_geometry(mesh, geom, els, xi)
        dofs = np.array([space.element_dofs[e] for e in els])
        U = u_hat[dofs]                                     # (ne, nd)
        nq, nd, d = dN.shape
        gref = (U @ dN.transpose(1, 0, 2).reshape(nd, nq * d)).reshape(-1, nq, 1, d)
        gh = np.matmul(gref, Jinv)[:, :, 0, :]             # physical gradient
        ge = problem.grad(x.reshape(-1, x.shape[-1])).reshape(gh.shape)
        diff = gh - ge
        wd = w[None, :] * det
        err2 = np.sum(wd * np.sum(diff * diff, axis=2), axis=1)
        if aniso:
            proj = np.einsum("eqcj,eqc->eqj", J, diff)      # J^(j) . grad(e)
            a = np.einsum("eq,eqj->ej", wd, proj * proj)
        for k, e in enumerate(els):
            out[e] = (err2[k], a[k] if aniso else None)
    return out


def element_errors(space, u_hat, problem, order=None):
    """Energy-norm error ``(int_K |grad(u_h - u)|^2)^(1/2)`` per element of
    ``space.elements`` (same order)."""
    res = _error_integrals(space, u_hat, problem, order)
    return np.sqrt(np.maximum([res[e][0] for e in space.elements], 0.0))


def mark_isotropic(errors, fraction=ISO_FRACTION):
    """Indices with ``e_j > fraction * max(e)``; never empty."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no errors to mark")
    mask = e > fraction * e.max()
    mask[int(np.argmax(e))] = True
    return np.flatnonzero(mask)


def anisotropic_types(indicators, fraction=ANISO_FRACTION):
    """Refinement type from axis indicators ``a_j``: axis ``j`` is split iff
    ``a_j > fraction / dim * sum(a)``; isotropic if no axis qualifies."""
    a = np.asarray(indicators, dtype=float)
    dim = len(a)
    tau = fraction / dim * a.sum()
    rt = 0
    for j in range(dim):
        if a[j] > tau:
            rt |= 1 << j
    return rt if rt else (1 << dim) - 1


def mark_anisotropic(space, u_hat, problem, marked, order=None):
    """Map each marked element (index into ``space.elements``) to a
    refinement type chosen by the axis indicators."""
    els = [space.elements[i] for i in marked]
    sub = _SubSpace(space, els)
    res = _error_integrals(sub, u_hat, problem, order, aniso=True)
    out = {}
    for e in els:
        g = space.mesh.elements[e].geom
        out[e] = geo.ISO_TRI if g == geo.TRIANGLE else anisotropic_types(res[e][1])
    return out


class _SubSpace:
    """View of ``space`` restricted to a subset of its elements."""

    def __init__(self, space, elements):
        self.mesh, self.p = space.mesh, space.p
        self.element_dofs = space.element_dofs
        self.elements = elements


@dataclass
class IterationRecord:
    iter: int
    dofs: int
    error: float
    elements: int
    irregularity: int
    seconds: float


@dataclass
class ConvergenceLog:
    mode: str
    p: int
    records: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "dofs", "error", "elements", "irregularity", "seconds"])
            for r in self.records:
                wr.writerow([r.iter, r.dofs, f"{r.error:.17g}", r.elements,
                             r.irregularity, f"{r.seconds:.6f}"])


def solve_benchmark(mesh, p, problem, tol=1e-10):
    """Solve on ``mesh``; returns ``(space, prolongation, u_hat)``."""
    space, _, P = build_P(mesh, p)
    u_hat = asm.solve_poisson(space, P, problem.f, problem.u, tol=tol)
    return space, P, u_hat


def amr_loop(problem, p, max_dofs, mode="iso", mesh=None, max_iter=100,
             callback=None, error_order=None):
    """Adaptation loop: solve, estimate, record, mark, refine.

    Stops after the first iteration whose true-DOF count exceeds
    ``max_dofs`` (or after ``max_iter`` iterations).
    """
    if mode not in ("uniform", "iso", "aniso"):
        raise ValueError(f"unknown mode {mode!r}")
    if mesh is None:
        mesh = initial_mesh(problem.dim)
    log = ConvergenceLog(mode, p)
    for it in range(max_iter):
        t0 = time.perf_counter()
        space, P, u_hat = solve_benchmark(mesh, p, problem)
        err = element_errors(space, u_hat, problem, error_order)
        rec = IterationRecord(it, int(P.P.shape[1]), float(np.sqrt(np.sum(err**2))),
                              len(space.elements), int(P.sweeps), 0.0)
        if mode == "uniform":
            plan = {e: geo.ISOTROPIC[mesh.elements[e].geom] for e in space.elements}
        else:
            marked = mark_isotropic(err)
            if mode == "iso":
                plan = {space.elements[i]: geo.ISOTROPIC[mesh.elements[space.elements[i]].geom]
                        for i in marked}
            else:
                plan = mark_anisotropic(space, u_hat, problem, marked, error_order)
        done = rec.dofs > max_dofs or it == max_iter - 1
        if not done:
            for e, rt in plan.items():
                mesh.refine(e, rt)
            ensure_consistency(mesh)
        rec.seconds = time.perf_counter() - t0
        log.records.append(rec)
        if callback is not None:
            callback(rec, mesh, space, u_hat)
        if done:
            break
    return log


def loglog_slope(dofs, errors, dim, last=4):
    """Least-squares slope of ``log(error)`` against ``log(dofs^(1/dim))``."""
    x = np.log(np.asarray(dofs, dtype=float)[-last:]) / dim
    y = np.log(np.asarray(errors, dtype=float)[-last:])
    return float(np.polyfit(x, y, 1)[0])


def error_at(log, dofs):
    """Error of a convergence log at ``dofs``, interpolated in log-log."""
    d, e = log.column("dofs"), log.column("error")
    return float(np.exp(np.interp(np.log(dofs), np.log(d), np.log(e))))


def dofs_to_reach(log, error):
    """DOF count at which the log first reaches ``error`` (log-log
    interpolation between the bracketing iterations); ``inf`` if never."""
    d, e = log.column("dofs"), log.column("error")
    for k in range(len(e)):
        if e[k] <= error:
            if k == 0:
                return float(d[0])
            t = (np.log(error) - np.log(e[k - 1])) / (np.log(e[k]) - np.log(e[k - 1]))
            return float(np.exp(np.log(d[k - 1]) + t * (np.log(d[k]) - np.log(d[k - 1]))))
    return float("inf")
