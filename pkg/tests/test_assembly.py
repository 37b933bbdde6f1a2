import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from ncamr import assembly as asm
from ncamr.conforming import build_P
from ncamr.corpus import hanging_pair, nested_hanging, stacked_hex_split
from ncamr.errors import BCOnSlave, DimensionMismatch, NoConvergence
from ncamr.fespace import FESpace
from ncamr.meshio import quad_grid, tri_grid


def test_bilinear_square_stiffness():
    m = quad_grid(1, 1)
    K, _ = asm.element_matrices(m, m.roots[0], 1)
    # local nodes (0,0) (1,0) (0,1) (1,1): diagonal 2/3, opposite corner
    # -1/3, edge neighbors -1/6
    expect = np.array([[4, -1, -1, -2], [-1, 4, -2, -1], [-1, -2, 4, -1], [-2, -1, -1, 4]]) / 6
    assert np.allclose(K, expect, atol=1e-14)


def test_linear_triangle_stiffness():
    m = tri_grid(1, 1)
    e = m.roots[0]
    K, _ = asm.element_matrices(m, e, 1)
    c = np.array([m.coords[v] for v in m.elements[e].vertex])
    # classical formula: K_ij = (b_i b_j + c_i c_j) / (4 area)
    b = np.array([c[1, 1] - c[2, 1], c[2, 1] - c[0, 1], c[0, 1] - c[1, 1]])
    g = np.array([c[2, 0] - c[1, 0], c[0, 0] - c[2, 0], c[1, 0] - c[0, 0]])
    area = 0.5 * abs(b[0] * g[1] - b[1] * g[0])
    assert np.allclose(K, (np.outer(b, b) + np.outer(g, g)) / (4 * area), atol=1e-14)


@pytest.mark.parametrize("mesh_fn", [lambda: quad_grid(2, 3), lambda: tri_grid(2, 2),
                                     stacked_hex_split, nested_hanging])
@pytest.mark.parametrize("p", [1, 2])
def test_assembled_system_properties(mesh_fn, p):
    mesh = mesh_fn()
    space = FESpace(mesh, p)
    sys_ = asm.assemble_poisson(space, rhs=lambda X: np.ones(len(X)))
    assert sys_.is_symmetric()
    assert np.abs(sys_.A @ np.ones(space.ndofs)).max() < 1e-12
    vol = sum(mesh.element_volume(e) for e in mesh.leaves)
    assert sys_.b.sum() == pytest.approx(vol)


def test_batched_and_single_element_agree():
    mesh = nested_hanging()
    space = FESpace(mesh, 2)
    A = asm.assemble_poisson(space).A.toarray()
    B = np.zeros_like(A)
    for e in space.elements:
        K, _ = asm.element_matrices(mesh, e, 2)
        d = space.element_dofs[e]
        B[np.ix_(d, d)] += K
    assert np.allclose(A, B, atol=1e-13)


@pytest.mark.parametrize("mesh_fn", [hanging_pair, nested_hanging, stacked_hex_split])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_patch_test_reproduces_linear_solution(mesh_fn, p):
    mesh = mesh_fn()
    g = (lambda X: 1 + X[:, 0] - 2 * X[:, 1]) if mesh.dim == 2 else \
        (lambda X: 1 + X[:, 0] - 2 * X[:, 1] + 0.5 * X[:, 2])
    space, _, P = build_P(mesh, p)
    u = asm.solve_poisson(space, P, None, g)
    assert np.abs(u - g(space.dof_coordinates())).max() < 1e-8


def test_eliminating_before_restriction_breaks_patch_test():
    mesh = nested_hanging()
    g = lambda X: 1 + X[:, 0] - 2 * X[:, 1]
    space, _, P = build_P(mesh, 1)
    u = asm.solve_eliminate_first(space, P, None, g)
    assert np.abs(u - g(space.dof_coordinates())).max() > 1e-3


def test_boundary_values_on_slaves_are_refused():
    space, D, P = build_P(hanging_pair(), 2)
    slave = next(iter(D.rows))
    with pytest.raises(BCOnSlave):
        asm.true_dof_columns(P, [slave])


def test_restriction_dimension_check():
    space, _, P = build_P(hanging_pair(), 1)
    sys_ = asm.assemble_poisson(space)
    with pytest.raises(DimensionMismatch):
        asm.restrict_system(sys_, P.P[:-1])


def spd(n, seed):
    rng = np.random.default_rng(seed)
    M = sp.random(n, n, density=0.2, random_state=seed)
    return (M @ M.T + sp.eye(n) * n).tocsr(), rng.standard_normal(n)


@given(st.integers(2, 40), st.integers(0, 1000), st.sampled_from([None, "jacobi", "amg"]))
def test_cg_matches_direct_solve(n, seed, precond):
    A, b = spd(n, seed)
    x = asm.solve_cg(asm.LinearSystem(A, b), tol=1e-13, precond=precond)
    assert np.allclose(x, spla.spsolve(A.tocsc(), b), rtol=1e-9, atol=1e-11)


def test_cg_reports_non_convergence():
    A, b = spd(50, 3)
    with pytest.raises(NoConvergence):
        asm.solve_cg(asm.LinearSystem(A, b), tol=1e-14, max_iter=2)


def test_cg_zero_rhs():
    info = {}
    x = asm.solve_cg(asm.LinearSystem(sp.eye(3).tocsr(), np.zeros(3)), info=info)
    assert not x.any() and info["iterations"] == 0


def test_unknown_preconditioner():
    A, b = spd(5, 0)
    with pytest.raises(ValueError):
        asm.solve_cg(asm.LinearSystem(A, b), precond="ilu")
