import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncamr import geometry as geo
from ncamr.conforming import dependency_levels
from ncamr.corpus import crossed_hex_split, hanging_pair
from ncamr.errors import InvalidRefType, NotRefined, StaleMatrix
from ncamr.meshio import hex_grid, quad_grid, tri_grid
from ncamr.ncmesh import NIL, _inconsistent_faces, ensure_consistency, limit_irregularity

from conftest import box_neighbors


def random_refine(mesh, seed, steps, aniso=True):
    rng = np.random.default_rng(seed)
    done = []
    for _ in range(steps):
        leaves = mesh.leaves
        e = leaves[int(rng.integers(len(leaves)))]
        g = mesh.elements[e].geom
        rt = int(rng.choice(geo.VALID_REFTYPES[g])) if aniso else geo.ISOTROPIC[g]
        mesh.refine(e, rt)
        done.append(e)
    return done


def test_quad_refinement_creates_shared_midpoints():
    m = quad_grid(2, 1)
    assert len(m.live_vertices()) == 6
    m.refine(m.roots[0])
    assert len(m.live_vertices()) == 11      # 4 edge mids and a center
    m.refine(m.roots[1])
    assert len(m.live_vertices()) == 15      # shared edge mid reused
    assert m.num_leaves == 8
    assert m.check_refcounts()


@pytest.mark.parametrize("geom_mesh, rt, n", [
    (lambda: quad_grid(1, 1), geo.X, 2),
    (lambda: quad_grid(1, 1), geo.Y, 2),
    (lambda: quad_grid(1, 1), geo.XY, 4),
    (lambda: hex_grid(1, 1, 1), geo.XZ, 4),
    (lambda: hex_grid(1, 1, 1), geo.XYZ, 8),
    (lambda: tri_grid(1, 1), geo.ISO_TRI, 4),
])
def test_children_count_and_volume(geom_mesh, rt, n):
    m = geom_mesh()
    vol = sum(m.element_volume(e) for e in m.leaves)
    kids = m.refine(m.roots[0], rt)
    assert len(kids) == n
    assert sum(m.element_volume(e) for e in m.leaves) == pytest.approx(vol)
    assert all(m.element_volume(k) > 0 for k in kids)


def test_refine_errors():
    m = quad_grid(1, 1)
    with pytest.raises(InvalidRefType):
        m.refine(m.roots[0], geo.Z)
    m.refine(m.roots[0])
    with pytest.raises(ValueError):
        m.refine(m.roots[0])
    with pytest.raises(NotRefined):
        m.coarsen(m.leaves[0])


@given(st.integers(0, 10_000), st.integers(1, 12), st.sampled_from(["quad", "tri", "hex"]))
def test_refine_then_coarsen_restores_census(seed, steps, kind):
    m = {"quad": lambda: quad_grid(2, 2), "tri": lambda: tri_grid(1, 2),
         "hex": lambda: hex_grid(2, 1, 1)}[kind]()
    before = m.census()
    done = random_refine(m, seed, steps, aniso=kind != "tri")
    assert m.check_refcounts()
    for e in reversed(done):
        m.coarsen(e)
    assert m.census() == before
    assert m.check_refcounts()


@given(st.integers(0, 10_000), st.integers(0, 10))
def test_paths_identify_elements(seed, steps):
    m = quad_grid(2, 2)
    random_refine(m, seed, steps)
    other = m.copy()
    for e in m.leaves:
        r, path = m.element_path(e)
        assert other.element_by_path(r, path) == e


@given(st.integers(0, 10_000), st.integers(0, 10), st.sampled_from(["quad", "hex"]))
def test_neighbor_expansion_matches_box_contact(seed, steps, kind):
    m = quad_grid(3, 2) if kind == "quad" else hex_grid(2, 2, 1)
    random_refine(m, seed, steps, aniso=kind == "quad")
    ensure_consistency(m)
    rng = np.random.default_rng(seed)
    mask = rng.random(m.num_leaves) < 0.3
    got = m.neighbor_query().expand(mask)
    assert np.array_equal(got, box_neighbors(m, mask))


def test_neighbor_query_goes_stale():
    m = quad_grid(2, 2)
    nq = m.neighbor_query()
    m.refine(m.roots[0])
    with pytest.raises(StaleMatrix):
        nq.expand(np.zeros(m.num_leaves, dtype=bool))


def test_boundary_entities_of_refined_corner():
    m = quad_grid(2, 2)
    kids = m.refine(m.roots[0])
    # bottom-left child of the bottom-left root touches two boundary edges
    assert sorted(m.boundary_entities(kids[0])) == [0, 3]
    assert m.boundary_entities(kids[2]) == []


def test_hanging_vertex_found_on_coarse_neighbor():
    m = hanging_pair()
    left = m.roots[0]
    hv = m.hanging_vertices(left)
    assert [m.coords[v] for v in hv] == [(1.0, 0.5)]


def test_consistency_closure_fixes_crossed_split():
    m = crossed_hex_split()
    assert _inconsistent_faces(m)
    forced = ensure_consistency(m)
    assert forced
    assert not _inconsistent_faces(m)


def test_two_dimensional_meshes_need_no_closure():
    m = quad_grid(2, 2)
    m.refine(m.roots[0], geo.X)
    assert ensure_consistency(m) == []


def test_irregularity_limit():
    m = quad_grid(2, 1, x1=(2.0, 1.0))
    e = m.roots[1]
    for k in (0, 3, 3, 3):
        e = m.refine(e)[k]
    assert dependency_levels(m).max_level > 2
    limit_irregularity(m, 2)
    assert dependency_levels(m).max_level <= 2
    with pytest.raises(ValueError):
        limit_irregularity(m, 0)


def test_find_vertex_and_edges():
    m = quad_grid(1, 1)
    a, b = m.elements[m.roots[0]].vertex[:2]
    assert m.find_vertex(a, b) == NIL
    m.refine(m.roots[0])
    v = m.find_vertex(a, b)
    assert m.coords[v] == (0.5, 0.0)
    assert m.find_edge(a, b) == NIL        # the split edge is gone
    assert m.find_edge(a, v) != NIL
