import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncamr import basis
from ncamr import geometry as geo
from ncamr.errors import InvalidRefType


@pytest.mark.parametrize("p", [1, 2, 3, 4, 6])
def test_gll_points_are_endpoints_and_derivative_roots(p):
    g = basis.gll_points(p)
    assert g[0] == 0.0 and g[-1] == 1.0
    assert np.all(np.diff(g) > 0)
    if p > 1:
        # interior points are the roots of P_p' mapped to [0, 1]
        ref = np.sort(np.polynomial.legendre.Legendre.basis(p).deriv().roots().real)
        assert np.allclose(2 * g[1:-1] - 1, ref, atol=1e-13)


def test_gll_rejects_order_zero():
    with pytest.raises(ValueError):
        basis.gll_points(0)


@pytest.mark.parametrize("geom", [geo.TRIANGLE, geo.QUAD, geo.HEX])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_shape_functions_are_nodal_and_partition_unity(geom, p):
    X = basis.element_nodes(geom, p)
    N = basis.shape(geom, p, X)
    assert np.allclose(N, np.eye(len(X)), atol=1e-12)
    pts = np.random.default_rng(0).random((7, geo.GEOM_DIM[geom])) * 0.5
    N, dN = basis.shape(geom, p, pts, deriv=True)
    assert np.allclose(N.sum(axis=1), 1.0)
    assert np.allclose(dN.sum(axis=1), 0.0, atol=1e-11)


@pytest.mark.parametrize("geom", [geo.QUAD, geo.TRIANGLE])
def test_derivatives_match_finite_differences(geom):
    p, h = 3, 1e-6
    x = np.array([[0.21, 0.33]])
    _, dN = basis.shape(geom, p, x, deriv=True)
    for d in range(2):
        e = np.zeros((1, 2))
        e[0, d] = h
        fd = (basis.shape(geom, p, x + e) - basis.shape(geom, p, x - e)) / (2 * h)
        assert np.allclose(dN[0, :, d], fd[0], atol=1e-7)


@pytest.mark.parametrize("geom, area", [(geo.TRIANGLE, 0.5), (geo.QUAD, 1.0), (geo.HEX, 1.0)])
@pytest.mark.parametrize("order", [0, 3, 6])
def test_quadrature_integrates_monomials(geom, area, order):
    xi, w = basis.gauss_rule(geom, order)
    assert w.sum() == pytest.approx(area)
    a = order // 2
    b = order - a
    val = np.sum(w * xi[:, 0] ** a * xi[:, 1] ** b)
    if geom == geo.TRIANGLE:
        from math import factorial
        exact = factorial(a) * factorial(b) / factorial(a + b + 2)
    else:
        exact = 1 / ((a + 1) * (b + 1))
    assert val == pytest.approx(exact, rel=1e-12)


def test_triangle_edge_nodes_match_gll_points():
    p = 4
    X = basis.tri_nodes(p)
    edge = X[3:3 + p - 1]            # edge (0, 1) interior, y = 0
    assert np.allclose(edge[:, 1], 0.0)
    assert np.allclose(edge[:, 0], basis.gll_points(p)[1:-1])


@pytest.mark.parametrize("geom", [geo.TRIANGLE, geo.QUAD, geo.HEX])
def test_invalid_ref_type_rejected(geom):
    with pytest.raises(InvalidRefType):
        geo.check_reftype(geom, 0)


@pytest.mark.parametrize("geom", [geo.QUAD, geo.HEX, geo.TRIANGLE])
def test_children_tile_the_parent(geom):
    for rt in geo.VALID_REFTYPES[geom]:
        affs = geo.child_affines(geom, rt)
        assert len(affs) == geo.num_children(geom, rt)
        # child volume fractions add up to one
        assert sum(abs(np.linalg.det(axes)) for _, axes in affs) == pytest.approx(1.0)


def test_quad_children_are_counterclockwise():
    pts = geo.child_corner_points(geo.QUAD, geo.XY)
    lower_left = [tuple(np.min(np.asarray(c, dtype=float), axis=0)) for c in pts]
    assert lower_left == [(0, 0), (0.5, 0), (0.5, 0.5), (0, 0.5)]


@given(st.lists(st.floats(0, 1), min_size=2, max_size=2),
       st.lists(st.floats(0.1, 3), min_size=2, max_size=2))
def test_batch_map_agrees_with_multilinear_map(xi, scale):
    coords = np.array([[0, 0], [scale[0], 0], [scale[0], scale[1]], [0, scale[1]]], float)
    x1, J1 = geo.multilinear_map(geo.QUAD, coords, np.array([xi]))
    x2, J2 = geo.batch_map(geo.QUAD, coords[None], np.array([xi]))
    assert np.allclose(x1, x2[0]) and np.allclose(J1, J2[0])
    assert np.allclose(x1[0], np.array(xi) * scale)
