import numpy as np
import pytest
import scipy.sparse as sp
import sympy
from hypothesis import given, settings, strategies as st

from gmsfem.fem import (LocalProblem, SolverError, assemble_load, assemble_mass,
                        assemble_stiffness, backward_error, build_fine_system, contrast,
                        error_pair, interpolation_matrix, local_dirichlet_solve, norms, q1_mass,
                        q1_stiffness, read_kappa, solve_fine, write_kappa)
from gmsfem.grid import build_grids, neighborhood_of


def _symbolic_element(hx, hy):
    """Exact Q1 stiffness and mass on [0,hx]x[0,hy] by symbolic integration."""
    x, y = sympy.symbols("x y")
    a, b = sympy.nsimplify(hx), sympy.nsimplify(hy)
    shapes = [(1 - x / a) * (1 - y / b), (x / a) * (1 - y / b), (x / a) * (y / b),
              (1 - x / a) * (y / b)]
    K = np.zeros((4, 4))
    M = np.zeros((4, 4))
    for p in range(4):
        for q in range(4):
            grad = sympy.diff(shapes[p], x) * sympy.diff(shapes[q], x) + \
                sympy.diff(shapes[p], y) * sympy.diff(shapes[q], y)
            K[p, q] = float(sympy.integrate(grad, (x, 0, a), (y, 0, b)))
            M[p, q] = float(sympy.integrate(shapes[p] * shapes[q], (x, 0, a), (y, 0, b)))
    return K, M


@pytest.mark.parametrize("hx,hy", [(1.0, 1.0), (0.5, 0.25), (0.125, 0.375)])
def test_element_matrices_match_symbolic(hx, hy):
    K, M = _symbolic_element(hx, hy)
    np.testing.assert_allclose(q1_stiffness(hx, hy), K, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(q1_mass(hx, hy), M, rtol=1e-14, atol=1e-15)


def test_square_element_entries():
    K = q1_stiffness()
    assert K[0, 0] == pytest.approx(2 / 3)
    assert K[0, 1] == pytest.approx(-1 / 6)
    assert K[0, 2] == pytest.approx(-1 / 3)
    np.testing.assert_allclose(K.sum(axis=1), 0.0, atol=1e-15)


def test_global_stiffness_is_symmetric_with_constant_kernel():
    g = build_grids(nx=2, ny=3, n_fine=3)
    kappa = np.random.default_rng(0).uniform(1, 10, g.cell_shape)
    A = assemble_stiffness(g, kappa)
    assert abs(A - A.T).max() < 1e-12
    np.testing.assert_allclose(A @ np.ones(g.n_nodes), 0.0, atol=1e-12)


def test_unit_load_gives_cell_area_at_interior_nodes():
    g = build_grids(nx=2, ny=2, n_fine=4)
    b = assemble_load(g, 1.0)
    np.testing.assert_allclose(b[g.free_nodes], g.hx * g.hy, rtol=1e-14)
    assert b.sum() == pytest.approx(1.0)


def test_load_forms_agree():
    g = build_grids(nx=2, ny=2, n_fine=2)
    per_cell = np.full(g.cell_shape, 3.0)
    np.testing.assert_allclose(assemble_load(g, per_cell), assemble_load(g, 3.0))
    np.testing.assert_allclose(assemble_load(g, lambda x, y: 3.0 + 0 * x), assemble_load(g, 3.0))


def test_load_of_linear_source_is_exact():
    # 2x2 Gauss is exact for (linear source) x (bilinear hat)
    g = build_grids(nx=1, ny=1, n_fine=2)
    b = assemble_load(g, lambda x, y: x)
    center = g.node_id(1, 1)
    # integral of x * hat over the four cells around (0.5, 0.5) with h = 0.5
    assert b[center] == pytest.approx(0.5 * 0.25, rel=1e-14)


def test_mass_matrix_integrates_constants():
    g = build_grids(nx=3, ny=2, n_fine=2)
    M = assemble_mass(g)
    one = np.ones(g.n_nodes)
    assert one @ M @ one == pytest.approx(1.0)


def test_local_stiffness_equals_global_interior_block():
    g = build_grids(nx=3, ny=3, n_fine=3)
    kappa = np.random.default_rng(1).uniform(1, 100, g.cell_shape)
    A = assemble_stiffness(g, kappa).tocsr()
    omega = neighborhood_of(g, g.coarse_node_id(1, 2))
    local = LocalProblem(omega, kappa)
    idx = omega.interior_nodes
    diff = A[idx][:, idx] - local.interior_matrix
    assert abs(diff).max() < 1e-12


def test_harmonic_extension_reproduces_linear_data():
    g = build_grids(nx=2, ny=2, n_fine=4)
    omega = neighborhood_of(g, g.coarse_node_id(1, 1))
    local = LocalProblem(omega, np.ones(g.cell_shape))
    xy = g.node_coords[omega.nodes]
    lin = 2.0 * xy[:, 0] - 0.5 * xy[:, 1] + 1.0
    ext = local.harmonic_extension(lin[omega.local_boundary])
    np.testing.assert_allclose(ext, lin, atol=1e-13)
    two = local.harmonic_extension(np.column_stack([lin, 2 * lin])[omega.local_boundary])
    np.testing.assert_allclose(two[:, 1], 2 * lin, atol=1e-13)


def test_local_dirichlet_solve_support_and_empty():
    g = build_grids(nx=2, ny=2, n_fine=2)
    kappa = np.ones(g.cell_shape)
    omega = neighborhood_of(g, g.coarse_node_id(1, 1))
    u, empty = local_dirichlet_solve(omega, kappa, np.ones(omega.local_interior.size))
    assert not empty
    outside = np.setdiff1d(np.arange(g.n_nodes), omega.interior_nodes)
    assert np.all(u[outside] == 0)
    tiny = build_grids(nx=1, ny=1, n_fine=1)
    u, empty = local_dirichlet_solve(neighborhood_of(tiny, 0), np.ones((1, 1)), np.zeros(0))
    assert empty and np.all(u == 0)


def test_solve_fine_symmetric_solution_and_residual():
    g = build_grids(nx=2, ny=2, n_fine=4)
    system = build_fine_system(g, np.ones(g.cell_shape), 1.0)
    u = solve_fine(system)
    U = u.reshape(g.fny + 1, g.fnx + 1)
    np.testing.assert_allclose(U, U.T, atol=1e-14)
    np.testing.assert_allclose(U, U[::-1], atol=1e-14)
    assert np.all(u[g.boundary_nodes] == 0)
    free = g.free_nodes
    assert backward_error(system.reduced_matrix, u[free], system.load[free]) < 1e-14


def test_solve_fine_high_contrast():
    g = build_grids(nx=4, ny=4, n_fine=4)
    kappa = np.ones(g.cell_shape)
    kappa[6:8, 1:15] = 1e6
    u = solve_fine(build_fine_system(g, kappa, 1.0))
    assert np.all(np.isfinite(u)) and u.max() > 0


def test_solve_fine_rejects_nonfinite_load():
    g = build_grids(nx=1, ny=1, n_fine=3)
    system = build_fine_system(g, np.ones(g.cell_shape), 1.0)
    with pytest.raises(SolverError):
        solve_fine(system, load=np.full(g.n_nodes, np.nan))


def test_norms_and_error_pair():
    g = build_grids(nx=2, ny=2, n_fine=2)
    system = build_fine_system(g, np.ones(g.cell_shape))
    u = solve_fine(system)
    n = norms(u, system)
    assert n["energy"] ** 2 == pytest.approx(u @ system.load)
    assert error_pair(u, u, system) == (0.0, 0.0)
    assert error_pair(u, np.zeros_like(u), system) == pytest.approx((1.0, 1.0))
    with pytest.raises(ValueError):
        error_pair(np.zeros_like(u), u, system)


def test_kappa_roundtrip(tmp_path):
    kappa = np.random.default_rng(3).uniform(0.1, 1e6, (3, 5))
    path = tmp_path / "k.kappa"
    write_kappa(path, kappa)
    assert path.read_text().splitlines()[0] == "KAPPA v1 5 3"
    np.testing.assert_array_equal(read_kappa(path), kappa)
    assert contrast(kappa) == kappa.max() / kappa.min()


def test_kappa_reader_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.kappa"
    bad.write_text("KAPPA v2 1 1\n1.0\n")
    with pytest.raises(ValueError):
        read_kappa(bad)
    short = tmp_path / "short.kappa"
    short.write_text("KAPPA v1 2 2\n1.0 1.0\n")
    with pytest.raises(ValueError):
        read_kappa(short)
    negative = tmp_path / "neg.kappa"
    negative.write_text("KAPPA v1 1 1\n-1.0\n")
    with pytest.raises(ValueError):
        read_kappa(negative)


def test_interpolation_matrix_is_exact_for_bilinear():
    g = build_grids(nx=2, ny=3, n_fine=2)
    xy = g.node_coords
    nodal = 1 + xy[:, 0] - 2 * xy[:, 1] + 3 * xy[:, 0] * xy[:, 1]
    pts = np.random.default_rng(4).uniform(0, 1, (50, 2))
    pts = np.vstack([pts, [[1.0, 1.0], [0.0, 0.0], [0.5, 1.0]]])
    P = interpolation_matrix(g, pts)
    exact = 1 + pts[:, 0] - 2 * pts[:, 1] + 3 * pts[:, 0] * pts[:, 1]
    np.testing.assert_allclose(P @ nodal, exact, atol=1e-13)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0)
    with pytest.raises(ValueError):
        interpolation_matrix(g, [[1.5, 0.5]])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 16), n=st.integers(1, 3))
def test_stiffness_energy_is_nonnegative_and_scales(seed, n):
    rng = np.random.default_rng(seed)
    g = build_grids(nx=2, ny=2, n_fine=n)
    kappa = rng.uniform(0.1, 1e4, g.cell_shape)
    v = rng.standard_normal(g.n_nodes)
    A = assemble_stiffness(g, kappa)
    e = v @ A @ v
    assert e >= -1e-9 * abs(v).max() ** 2 * kappa.max()
    assert v @ assemble_stiffness(g, 7.0 * kappa) @ v == pytest.approx(7.0 * e, rel=1e-12)


def test_assembled_matrix_is_sparse_csr():
    g = build_grids(nx=2, ny=2, n_fine=2)
    A = assemble_stiffness(g, np.ones(g.cell_shape))
    assert sp.issparse(A)
    assert A.nnz <= 9 * g.n_nodes
