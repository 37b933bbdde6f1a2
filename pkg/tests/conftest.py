"""Shared fixtures and independent oracles for the test suite."""
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ncamr import basis
from ncamr import geometry as geo
from ncamr.corpus import corpus

settings.register_profile("ci", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


# ----------------------------------------------------------------------
# one pass/fail line per acceptance criterion in the terminal summary
_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when == "teardown":
        return
    number, title = mark.args
    ok, seconds = _criteria.get(number, (title, True, 0.0))[1:]
    _criteria[number] = (title, ok and rep.passed, seconds + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, seconds = _criteria[number]
        terminalreporter.write_line(
            f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {title}  ({seconds:.1f} s)")


@pytest.fixture(autouse=True)
def _quiet_coarse_walk():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="coarse mesh walk")
        yield


@pytest.fixture(scope="session")
def corpus_meshes():
    """The full regression corpus. Do not mutate; copy first."""
    return corpus()


@pytest.fixture(scope="session")
def small_corpus():
    return corpus(small=True)


# ----------------------------------------------------------------------
# oracles that avoid the library's own machinery
def affine_frame(mesh, e):
    """Origin and columns of the affine map of an affine leaf, computed
    straight from its corner coordinates."""
    el = mesh.elements[e]
    c = np.array([mesh.coords[v] for v in el.vertex])
    if el.geom == geo.TRIANGLE:
        cols = [c[1] - c[0], c[2] - c[0]]
    elif el.geom == geo.QUAD:
        cols = [c[1] - c[0], c[3] - c[0]]
    else:
        cols = [c[1] - c[0], c[3] - c[0], c[4] - c[0]]
    return c[0], np.column_stack(cols)


def reference_coords(mesh, e, X):
    x0, A = affine_frame(mesh, e)
    return np.linalg.solve(A, (np.atleast_2d(X) - x0).T).T


def inside(mesh, e, xi, tol=1e-12):
    geom = mesh.elements[e].geom
    ok = np.all((xi >= -tol) & (xi <= 1 + tol), axis=1)
    if geom == geo.TRIANGLE:
        ok &= xi.sum(axis=1) <= 1 + tol
    return ok


def evaluate(space, u, e, X):
    """Value of the FE function ``u`` on leaf ``e`` at physical points."""
    mesh = space.mesh
    xi = reference_coords(mesh, e, X)
    N = basis.shape(mesh.elements[e].geom, space.p, xi)
    return N @ u[space.element_dofs[e]]


def boundary_samples(mesh, e, rng, per_entity=4):
    """Random physical points on every edge (2D) or face (3D) of a leaf."""
    el = mesh.elements[e]
    c = np.array([mesh.coords[v] for v in el.vertex])
    pts = []
    if mesh.dim == 2:
        for a, b in geo.EDGES[el.geom]:
            t = rng.random((per_entity, 1))
            pts.append(c[a] + t * (c[b] - c[a]))
    else:
        for f in geo.FACES[el.geom]:
            s, t = rng.random((2, per_entity, 1))
            pts.append(c[f[0]] + s * (c[f[1]] - c[f[0]]) + t * (c[f[3]] - c[f[0]]))
    return np.vstack(pts)


def leaf_boxes(mesh):
    leaves = mesh.leaves
    lo = np.array([np.min([mesh.coords[v] for v in mesh.elements[e].vertex], axis=0)
                   for e in leaves])
    hi = np.array([np.max([mesh.coords[v] for v in mesh.elements[e].vertex], axis=0)
                   for e in leaves])
    return leaves, lo, hi


def box_neighbors(mesh, mask):
    """Neighbor expansion for axis-aligned tensor meshes: closed boxes
    that touch (in a point or more) a selected box."""
    leaves, lo, hi = leaf_boxes(mesh)
    mask = np.asarray(mask, dtype=bool)
    out = mask.copy()
    tol = 1e-12
    for i in np.flatnonzero(mask):
        touch = np.all((lo <= hi[i] + tol) & (hi >= lo[i] - tol), axis=1)
        out |= touch
    return out


def hilbert_d2xy(n, d):
    """Textbook Hilbert index-to-cell map on an ``n x n`` grid (n a power
    of two); the curve starts at (0, 0), first steps along x and ends at
    (n-1, 0)."""
    x = y = 0
    s, t = 1, d
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x, y = s - 1 - x, s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def centroid(mesh, e):
    return np.mean([mesh.coords[v] for v in mesh.elements[e].vertex], axis=0)


def continuity_defect(space, u, rng, per_entity=3):
    """Largest jump of ``u`` across leaf boundaries, found by evaluating
    every leaf containing random points on every leaf's boundary."""
    mesh = space.mesh
    leaves, lo, hi = leaf_boxes(mesh)
    worst = 0.0
    for e in leaves:
        X = boundary_samples(mesh, e, rng, per_entity)
        ref = evaluate(space, u, e, X)
        for x, v in zip(X, ref):
            cand = np.flatnonzero(np.all((lo <= x + 1e-12) & (hi >= x - 1e-12), axis=1))
            for i in cand:
                f = leaves[i]
                if f == e:
                    continue
                xi = reference_coords(mesh, f, x)
                if inside(mesh, f, xi)[0]:
                    worst = max(worst, abs(evaluate(space, u, f, x)[0] - v))
    return worst


def polynomial(p, dim):
    """A fixed full polynomial of total degree ``p``."""
    def f(X):
        X = np.atleast_2d(X)
        s = 0.3 + 0.7 * X[:, 0] - 0.4 * X[:, 1] + (0.2 * X[:, 2] if dim == 3 else 0)
        return s ** p + 0.1 * X[:, 0] * X[:, 1] ** max(p - 1, 0)
    return f
