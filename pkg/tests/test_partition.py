import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncamr import geometry as geo
from ncamr import partition as part
from ncamr.errors import UnsupportedCurve
from ncamr.meshio import hex_grid, quad_grid, tri_grid

from conftest import box_neighbors, centroid, hilbert_d2xy

# leaves of a twice-refined unit square under state 0, threaded by hand
# through the state table (cell (i, j) = column i, row j)
HAND_SEQUENCE = [(0, 0), (0, 1), (1, 1), (1, 0), (2, 0), (3, 0), (3, 1), (2, 1),
                 (2, 2), (3, 2), (3, 3), (2, 3), (1, 3), (1, 2), (0, 2), (0, 3)]


def uniform(mesh, levels):
    for _ in range(levels):
        for e in list(mesh.leaves):
            mesh.refine(e)
    return mesh


def cells(mesh, seq, n):
    return [tuple(int(c * n) for c in centroid(mesh, e)) for e in seq]


def test_state_table_shape():
    for order, states in part.HILBERT_TABLE:
        assert sorted(order) == [0, 1, 2, 3]
        assert all(0 <= s < 8 for s in states)


def test_child_curves_are_continuous_for_every_state():
    # within each state, consecutive children share an edge
    corner = np.array(geo.CORNERS[geo.QUAD])
    for order, states in part.HILBERT_TABLE:
        for a, b in zip(order, order[1:]):
            assert np.abs(corner[a] - corner[b]).sum() == 1


def test_hand_threaded_sixteen_leaf_sequence():
    m = uniform(quad_grid(1, 1), 2)
    seq = part.sfc_enumerate(m, part.HILBERT)
    assert cells(m, seq, 4) == HAND_SEQUENCE


def test_matches_textbook_curve_up_to_transpose():
    for levels in (1, 2, 3):
        n = 2 ** levels
        m = uniform(quad_grid(1, 1), levels)
        got = cells(m, part.sfc_enumerate(m, part.HILBERT), n)
        ref = [hilbert_d2xy(n, d)[::-1] for d in range(n * n)]
        assert got == ref


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_hilbert_is_edge_connected_across_roots(n):
    m = uniform(quad_grid(n, n), 2)
    seq = part.sfc_enumerate(m, part.HILBERT)
    assert sorted(seq) == sorted(m.leaves)
    for a, b in zip(seq, seq[1:]):
        d = np.abs(centroid(m, a) - centroid(m, b))
        assert np.isclose(d.sum(), 1 / (4 * n)), (a, b)


def test_z_order_of_refined_square():
    m = uniform(quad_grid(1, 1), 1)
    assert cells(m, part.sfc_enumerate(m, part.Z), 2) == [(0, 0), (1, 0), (0, 1), (1, 1)]


def test_z_order_of_refined_hex():
    m = uniform(hex_grid(1, 1, 1), 1)
    got = [tuple(int(c * 2) for c in centroid(m, e)) for e in part.sfc_enumerate(m, part.Z)]
    assert got == [(i, j, k) for k in (0, 1) for j in (0, 1) for i in (0, 1)]


def test_unsupported_curves():
    with pytest.raises(UnsupportedCurve):
        part.sfc_enumerate(hex_grid(1, 1, 1), part.HILBERT)
    with pytest.raises(UnsupportedCurve):
        part.sfc_enumerate(tri_grid(1, 1), part.HILBERT)
    with pytest.raises(UnsupportedCurve):
        part.sfc_enumerate(quad_grid(1, 1), "peano")


@given(st.integers(0, 1000), st.integers(0, 8))
def test_anisotropic_enumeration_is_a_permutation(seed, steps):
    m = quad_grid(2, 2)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        e = m.leaves[int(rng.integers(m.num_leaves))]
        m.refine(e, int(rng.choice([geo.X, geo.Y, geo.XY])))
    for curve in (part.Z, part.HILBERT):
        assert sorted(part.sfc_enumerate(m, curve)) == sorted(m.leaves)


def test_coarse_walk_covers_strip_in_order():
    m = quad_grid(4, 1)
    assert part.order_coarse_mesh(m).order == m.roots


def test_coarse_walk_warns_when_broken():
    from ncamr.ncmesh import NCMesh
    # two squares touching only at a corner: no face neighbor to walk to
    m = NCMesh([(0, 0), (1, 0), (1, 1), (0, 1), (2, 1), (2, 2), (1, 2)],
               [(geo.QUAD, [0, 1, 2, 3]), (geo.QUAD, [2, 4, 5, 6])])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        co = part.order_coarse_mesh(m)
    assert co.order == m.roots
    assert any("walk broken" in str(x.message) for x in w)


@given(st.integers(0, 500), st.integers(1, 12))
def test_partition_sizes(n, k):
    sizes = part.partition_sizes(n, k)
    assert sum(sizes) == n and len(sizes) == k
    assert max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)


def test_partition_examples():
    assert part.partition_sizes(10, 3) == [4, 3, 3]
    with pytest.raises(ValueError):
        part.partition_sizes(4, 0)
    a = part.equipartition(list(range(10)), 3)
    assert [len(x) for x in a.parts()] == [4, 3, 3]
    assert a.rank_of()[3] == 0 and a.rank_of()[4] == 1


def test_single_rank_has_no_cut():
    m = uniform(quad_grid(2, 2), 1)
    st_ = part.stats(m, part.equipartition(part.sfc_enumerate(m), 1))
    assert st_.cut == 0 and st_.counts == [16]


def test_leaf_adjacency_matches_box_contact_on_edges():
    m = quad_grid(2, 2)
    m.refine(m.roots[0])
    pairs = set(part.leaf_adjacency(m))
    leaves = m.leaves
    # oracle: boxes that share a segment of positive length
    lo = {e: np.min([m.coords[v] for v in m.elements[e].vertex], axis=0) for e in leaves}
    hi = {e: np.max([m.coords[v] for v in m.elements[e].vertex], axis=0) for e in leaves}
    expect = set()
    for i, a in enumerate(leaves):
        for b in leaves[i + 1:]:
            ov = np.minimum(hi[a], hi[b]) - np.maximum(lo[a], lo[b])
            if (ov >= -1e-12).all() and (ov > 1e-12).sum() == 1:
                expect.add((min(a, b), max(a, b)))
    assert pairs == expect
    # every edge pair is also a neighbor pair
    mask = np.zeros(len(leaves), bool)
    mask[0] = True
    near = set(np.asarray(leaves)[box_neighbors(m, mask)])
    assert all(b in near for a, b in pairs if a == leaves[0])


def test_hilbert_cuts_no_worse_than_z_on_most_meshes(small_corpus):
    wins = total = 0
    for name, mesh in small_corpus:
        if mesh.dim != 2 or any(mesh.elements[r].geom != geo.QUAD for r in mesh.roots):
            continue
        for k in (2, 3):
            cz = part.stats(mesh, part.equipartition(part.sfc_enumerate(mesh, part.Z), k)).cut
            ch = part.stats(mesh, part.equipartition(
                part.sfc_enumerate(mesh, part.HILBERT), k)).cut
            wins += ch <= cz
            total += 1
    assert wins >= 0.8 * total
