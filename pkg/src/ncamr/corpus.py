"""Small hand-built meshes with known constraint structure, and a corpus
of deterministic random refinements used by the regression suites."""
from __future__ import annotations

import numpy as np

from . import geometry as geo
from .meshio import hex_grid, loads, quad_grid, tri_grid
from .ncmesh import NCMesh, ensure_consistency, limit_irregularity


def hanging_pair():
    """Unit squares side by side; the right one refined once.

    One hanging vertex ``c = (1, 0.5)`` on the shared edge ``a=(1,0)``,
    ``b=(1,1)``; irregularity 1.
    """
    m = NCMesh([(0, 0), (1, 0), (1, 1), (0, 1), (2, 0), (2, 1)],
               [(geo.QUAD, [0, 1, 2, 3]), (geo.QUAD, [1, 4, 5, 2])])
    m.refine(1)
    return m


def refined_in_grid():
    """2x2 grid of squares with the first one refined (7 leaves)."""
    m = quad_grid(2, 2)
    m.refine(m.roots[0])
    return m


def nested_hanging():
    """Two-level chain of constraints.

    ``L=[0,1]^2``, ``R=[1,2]x[0,1]``; ``R`` refined, then its bottom-left
    child refined again. ``e=(1.25,.5)`` hangs on an edge whose end point
    ``c=(1,.5)`` itself hangs on ``L``'s right edge, so irregularity is 2.
    """
    m = NCMesh([(0, 0), (1, 0), (1, 1), (0, 1), (2, 0), (2, 1)],
               [(geo.QUAD, [0, 1, 2, 3]), (geo.QUAD, [1, 4, 5, 2])])
    ch = m.refine(1)
    m.refine(ch[0])
    return m


PINWHEEL = """\
ncamr-mesh v1
dim 2
vertices 12
0.0 0.0
2.0 0.0
3.0 0.0
3.0 2.0
3.0 3.0
1.0 3.0
0.0 3.0
0.0 1.0
1.0 1.0
2.0 1.0
2.0 2.0
1.0 2.0
roots 5
quad 0 1 9 7
quad 1 2 3 10
quad 11 3 4 5
quad 7 8 5 6
quad 8 9 10 11
vertex_parents 4
8 7 9
9 1 10
10 11 3
11 8 5
refinements 0
"""


def pinwheel():
    """Four rectangles around a unit square, each one's long edge hanging on
    the next: the vertex constraints form a cycle.

    Refining the first rectangle once breaks the cycle.
    """
    return loads(PINWHEEL)


def stacked_hex_split():
    """Two unit hexes stacked in z; the upper one split along x and its
    left half split along y, so the shared face has three slaves."""
    coords = [(i, j, k) for k in (0, 1, 2) for j in (0, 1) for i in (0, 1)]
    m = NCMesh(np.array(coords, float),
               [(geo.HEX, [0, 1, 3, 2, 4, 5, 7, 6]), (geo.HEX, [4, 5, 7, 6, 8, 9, 11, 10])])
    ch = m.refine(m.roots[1], geo.X)
    m.refine(ch[0], geo.Y)
    return m


def crossed_hex_split():
    """Two hexes sharing the face ``x=1``; the left split along y, the right
    along z. Neither face half contains the other (inconsistent)."""
    m = hex_grid(2, 1, 1, x1=(2.0, 1.0, 1.0))
    m.refine(m.roots[0], geo.Y)
    m.refine(m.roots[1], geo.Z)
    return m


# ----------------------------------------------------------------------
def _random_refine(mesh, rng, steps, aniso, frac=0.3):
    for _ in range(steps):
        leaves = list(mesh.leaves)
        k = max(1, int(frac * len(leaves)))
        pick = rng.choice(len(leaves), size=k, replace=False)
        for i in sorted(pick):
            e = leaves[i]
            g = mesh.elements[e].geom
            rt = geo.ISOTROPIC[g]
            if aniso and g != geo.TRIANGLE:
                rt = int(rng.choice(geo.VALID_REFTYPES[g]))
            mesh.refine(e, rt)
        ensure_consistency(mesh)
    return mesh


def corpus(seed=0, small=False):
    """Deterministic list of ``(name, mesh)`` regression meshes.

    Covers triangles, quads and hexes, isotropic and anisotropic
    refinement, and irregularity 1 to 3.
    """
    rng = np.random.default_rng(seed)
    out = [("hanging_pair", hanging_pair()), ("refined_in_grid", refined_in_grid()),
           ("nested_hanging", nested_hanging()), ("stacked_hex_split", stacked_hex_split())]
    m = crossed_hex_split()
    ensure_consistency(m)
    out.append(("crossed_hex_split_closed", m))
    steps2, steps3 = (2, 1) if small else (3, 2)
    for i in range(4):
        m = _random_refine(quad_grid(2, 2), rng, steps2, aniso=False)
        out.append((f"quad_iso_{i}", m))
    for i in range(4):
        m = _random_refine(quad_grid(2, 2), rng, steps2, aniso=True)
        out.append((f"quad_aniso_{i}", m))
    for i in range(3):
        m = _random_refine(tri_grid(2, 2), rng, steps2, aniso=False)
        out.append((f"tri_iso_{i}", m))
    for i in range(2):
        m = _random_refine(hex_grid(2, 1, 1, x1=(2.0, 1.0, 1.0)), rng, steps3, aniso=False)
        out.append((f"hex_iso_{i}", m))
    for i in range(3):
        m = _random_refine(hex_grid(2, 2, 1, x1=(1.0, 1.0, 0.5)), rng, steps3, aniso=True)
        out.append((f"hex_aniso_{i}", m))
    # deep chains: each refinement puts a new hanging vertex on a slave
    # edge, irregularity 3 and 4 before limiting
    for seq, n in (((0, 3, 3, 3), 3), ((0, 3, 2, 1), 3), ((0, 3, 2, 1), 2)):
        m = quad_grid(2, 1, x1=(2.0, 1.0))
        e = m.roots[1]
        for k in seq:
            e = m.refine(e)[k]
        limit_irregularity(m, n)
        out.append((f"quad_chain_{''.join(map(str, seq))}_max{n}", m))
    return out
