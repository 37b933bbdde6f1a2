import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncamr import geometry as geo
from ncamr import meshio
from ncamr.corpus import PINWHEEL, refined_in_grid
from ncamr.errors import MeshFormatError


def test_grid_sizes():
    assert meshio.quad_grid(3, 2).num_leaves == 6
    assert meshio.tri_grid(3, 2).num_leaves == 12
    assert meshio.hex_grid(2, 2, 2).num_leaves == 8


@given(st.integers(0, 10_000), st.integers(0, 12), st.sampled_from(["quad", "tri", "hex"]))
def test_replay_roundtrip_is_idempotent(seed, steps, kind):
    m = {"quad": lambda: meshio.quad_grid(2, 2), "tri": lambda: meshio.tri_grid(1, 2),
         "hex": lambda: meshio.hex_grid(2, 1, 1)}[kind]()
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        e = m.leaves[int(rng.integers(m.num_leaves))]
        g = m.elements[e].geom
        m.refine(e, int(rng.choice(geo.VALID_REFTYPES[g])))
    text = meshio.dumps(m)
    m2 = meshio.loads(text)
    assert meshio.dumps(m2) == text
    assert m2.census() == m.census()


def test_ranks_section(tmp_path):
    m = refined_in_grid()
    ranks = list(range(m.num_leaves))
    path = tmp_path / "m.txt"
    meshio.save(m, path, ranks=ranks)
    m2, r2 = meshio.load(path, with_ranks=True)
    assert r2 == ranks and m2.census() == m.census()
    assert meshio.loads(meshio.dumps(m), with_ranks=True)[1] is None


def test_vertex_parents_survive_roundtrip():
    m = meshio.loads(PINWHEEL)
    assert meshio.dumps(m) == PINWHEEL


@pytest.mark.parametrize("text, msg", [
    ("", "header"),
    ("ncamr-mesh v1\ndim 4\n", "dimension"),
    ("ncamr-mesh v1\ndim 2\nvertices 1\n0 0\nroots 1\nquad 0 0 0 9\n", "root"),
    ("ncamr-mesh v1\ndim 2\nvertices 4\n0 0\n1 0\n1 1\n0 1\nroots 1\nquad 0 1 2 3\n", "end"),
    ("ncamr-mesh v1\ndim 2\nvertices 4\n0 0\n1 0\n1 1\n0 1\nroots 1\nquad 0 1 2 3\n"
     "refinements 1\n0 5 3\n", "refinement"),
    ("ncamr-mesh v1\ndim 2\nvertices 4\n0 0\n1 0\n1 1\n0 1\nroots 1\nquad 0 1 2 3\n"
     "refinements 0\nranks 2\n0\n", "rank"),
])
def test_malformed_replay(text, msg):
    with pytest.raises(MeshFormatError, match=msg):
        meshio.loads(text)


def test_vtk_counts():
    text = meshio.vtk_string(meshio.quad_grid(4, 4))
    assert "POINTS 25 double" in text
    assert "CELLS 16 80" in text
    text = meshio.vtk_string(refined_in_grid())
    assert "CELLS 7 35" in text


def test_vtk_cell_and_point_data():
    m = meshio.quad_grid(1, 2)
    text = meshio.vtk_string(m, cell_data={"rank": np.array([0, 1])},
                             point_data={"u": {v: float(v) for v in range(6)}})
    assert "SCALARS rank int 1" in text and "SCALARS u double 1" in text
    assert "CELL_TYPES 2\n9\n9" in text


def test_export_is_byte_identical(tmp_path):
    m = meshio.loads(meshio.dumps(refined_in_grid()))
    a, b = tmp_path / "a.vtk", tmp_path / "b.vtk"
    meshio.write_vtk(m, a)
    meshio.write_vtk(meshio.loads(meshio.dumps(m)), b)
    assert a.read_bytes() == b.read_bytes()
