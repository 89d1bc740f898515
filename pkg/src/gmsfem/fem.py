"""Fine-scale Q1 finite elements for -div(kappa grad u) = f with u = 0 on the boundary.

Coefficients are piecewise constant per fine cell, so every bilinear form is
integrated exactly in closed form. All fine-grid functions are nodal vectors
over the full node set; Dirichlet nodes carry zeros.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .validation import check_kappa


def q1_stiffness(hx=1.0, hy=1.0):
    """Element stiffness of the bilinear square/rectangle, nodes counter-clockwise."""
    kx = np.array([[2, -2, -1, 1],
                   [-2, 2, 1, -1],
                   [-1, 1, 2, -2],
                   [1, -1, -2, 2]], dtype=float) / 6.0
    ky = np.array([[2, 1, -1, -2],
                   [1, 2, -2, -1],
                   [-1, -2, 2, 1],
                   [-2, -1, 1, 2]], dtype=float) / 6.0
    return (hy / hx) * kx + (hx / hy) * ky


def q1_mass(hx=1.0, hy=1.0):
    m = np.array([[4, 2, 1, 2],
                  [2, 4, 2, 1],
                  [1, 2, 4, 2],
                  [2, 1, 2, 4]], dtype=float)
    return m * (hx * hy / 36.0)


def _patch_cell_nodes(ncx, ncy):
    i, j = np.meshgrid(np.arange(ncx), np.arange(ncy))
    i, j = i.ravel(), j.ravel()
    w = ncx + 1
    return np.column_stack([j * w + i, j * w + i + 1, (j + 1) * w + i + 1, (j + 1) * w + i])


def assemble_patch(weights, element_matrix):
    """Assemble ``sum_c weights[c] * element_matrix`` over a rectangular patch.

    ``weights`` has shape ``(rows, cols)`` of cells; the result is a CSR matrix
    over the ``(rows + 1) * (cols + 1)`` patch nodes, row-major with x fastest.
    """
    weights = np.asarray(weights, dtype=float)
    ncy, ncx = weights.shape
    conn = _patch_cell_nodes(ncx, ncy)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = (weights.ravel()[:, None] * element_matrix.ravel()[None, :]).ravel()
    n = (ncx + 1) * (ncy + 1)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_stiffness(grids, kappa):
    """Global stiffness ``a(phi_p, phi_q)`` over all fine nodes (no Dirichlet rows removed)."""
    kappa = check_kappa(kappa, grids.cell_shape)
    return assemble_patch(kappa, q1_stiffness(grids.hx, grids.hy))


def assemble_mass(grids, weight=None):
    """Mass matrix ``(w phi_p, phi_q)``; unweighted when ``weight`` is None."""
    if weight is None:
        weight = np.ones(grids.cell_shape)
    return assemble_patch(np.reshape(weight, grids.cell_shape), q1_mass(grids.hx, grids.hy))


_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def assemble_load(grids, f):
    """Load vector ``(f, phi_p)``.

    ``f`` is a scalar, a per-cell array of shape ``grids.cell_shape`` (or flat)
    or a callable ``f(x, y)`` evaluated at 2x2 Gauss points per cell.
    """
    hx, hy = grids.hx, grids.hy
    conn = grids.cell_nodes
    xc, yc = grids.cell_centers.T
    # bilinear shape functions at the Gauss points, reference square [-1, 1]^2
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    contrib = np.zeros((grids.n_cells, 4))
    for gx in _GAUSS:
        for gy in _GAUSS:
            shape = 0.25 * (1 + corners[:, 0] * gx) * (1 + corners[:, 1] * gy)
            if callable(f):
                fv = np.asarray(f(xc + 0.5 * hx * gx, yc + 0.5 * hy * gy), dtype=float)
                fv = np.broadcast_to(fv, (grids.n_cells,))
            else:
                fv = np.broadcast_to(np.asarray(f, dtype=float).ravel() if np.ndim(f) else f,
                                     (grids.n_cells,))
            contrib += fv[:, None] * shape[None, :]
    contrib *= 0.25 * hx * hy
    return np.bincount(conn.ravel(), weights=contrib.ravel(), minlength=grids.n_nodes)


class SolverError(RuntimeError):
    """A linear system that should be SPD could not be solved."""


@dataclass
class FineSystem:
    """Assembled fine problem with the Dirichlet nodes eliminated for solving."""

    grids: object
    kappa: np.ndarray
    stiffness: sp.csr_matrix
    load: np.ndarray
    mass: sp.csr_matrix = field(default=None, repr=False)
    _lu: object = field(default=None, repr=False)

    @property
    def free(self):
        return self.grids.free_nodes

    @property
    def reduced_matrix(self):
        free = self.free
        return self.stiffness[free][:, free]

    def factor(self):
        if self._lu is None:
            try:
                self._lu = _splu_spd(self.reduced_matrix)
            except RuntimeError as exc:
                raise SolverError(f"fine stiffness is singular: {exc}") from exc
        return self._lu

    def energy(self, u, v=None):
        """``a(u, v)``; ``a(u, u)`` when ``v`` is omitted."""
        v = u if v is None else v
        return float(v @ (self.stiffness @ u))


def build_fine_system(grids, kappa, f=1.0):
    kappa = check_kappa(kappa, grids.cell_shape)
    return FineSystem(
        grids=grids, kappa=kappa,
        stiffness=assemble_stiffness(grids, kappa),
        load=assemble_load(grids, f),
        mass=assemble_mass(grids),
    )


def _splu_spd(mat):
    return spla.splu(mat.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options={"SymmetricMode": True})


def backward_error(mat, x, rhs):
    """Normwise relative residual ``|b - Ax| / (|A| |x| + |b|)`` in the max norm."""
    res = rhs - mat @ x
    anorm = abs(mat).sum(axis=1).max()
    denom = anorm * np.abs(x).max(initial=0.0) + np.abs(rhs).max(initial=0.0)
    return float(np.abs(res).max(initial=0.0) / denom) if denom > 0 else 0.0


def solve_fine(system, load=None, rtol=1e-12):
    """Reference fine solution, zero on the boundary."""
    b = system.load if load is None else np.asarray(load, dtype=float)
    free = system.free
    lu = system.factor()
    rhs = b[free]
    x = lu.solve(rhs)
    mat = system.reduced_matrix
    # one refinement step keeps high-contrast solves at the requested residual
    x += lu.solve(rhs - mat @ x)
    if not np.all(np.isfinite(x)):
        raise SolverError("fine solve produced non-finite values")
    err = backward_error(mat, x, rhs)
    if err > rtol:
        raise SolverError(f"fine solve relative residual {err:.3e} above {rtol:g}")
    u = np.zeros(system.grids.n_nodes)
    u[free] = x
    return u


class LocalProblem:
    """Stiffness of one coarse neighborhood and a cached factorization of its interior block.

    The matrix never changes across enrichment iterations, only right-hand
    sides do, so the factorization is computed once.
    """

    def __init__(self, omega, kappa):
        self.omega = omega
        rs, cs = omega.cell_slice()
        grids = omega.grids
        self.kappa = np.asarray(kappa).reshape(grids.cell_shape)[rs, cs]
        self.stiffness = assemble_patch(self.kappa, q1_stiffness(grids.hx, grids.hy))
        self.interior = omega.local_interior
        self.boundary = omega.local_boundary
        self._lu = None
        self._interior_matrix = None
        self._interior_matrix_ext = None

    @property
    def empty(self):
        return self.interior.size == 0

    @property
    def interior_matrix(self):
        if self._interior_matrix is None:
            self._interior_matrix = self.stiffness[self.interior][:, self.interior].tocsr()
        return self._interior_matrix

    def factor(self):
        if self._lu is None:
            self._lu = _splu_spd(self.interior_matrix)
        return self._lu

    def solve_interior(self, rhs):
        """Solve the interior block for one or several right-hand sides."""
        rhs = np.asarray(rhs, dtype=float)
        return self.factor().solve(rhs)

    def solve_interior_refined(self, rhs):
        """Interior solve with one refinement step whose residual is formed in extended precision.

        At high contrast the double-precision residual ``rhs - A x`` is dominated
        by cancellation, so a plain refinement step cannot improve ``x``.
        """
        x = self.solve_interior(rhs)
        if self._interior_matrix_ext is None:
            self._interior_matrix_ext = self.interior_matrix.astype(np.longdouble)
        r = np.asarray(rhs, dtype=np.longdouble) - self._interior_matrix_ext @ x.astype(np.longdouble)
        return x + self.solve_interior(r.astype(float))

    def harmonic_extension(self, boundary_values):
        """Discrete kappa-harmonic extension of boundary data (columns allowed).

        Returns values over all local nodes.
        """
        bv = np.asarray(boundary_values, dtype=float)
        cols = bv.reshape(bv.shape[0], -1)
        out = np.zeros((self.omega.n_local_nodes, cols.shape[1]))
        out[self.boundary] = cols
        if not self.empty:
            coupling = self.stiffness[self.interior][:, self.boundary]
            out[self.interior] = self.solve_interior(-(coupling @ cols))
        return out.reshape((self.omega.n_local_nodes,) + bv.shape[1:])


def local_dirichlet_solve(omega, kappa, rhs, problem=None):
    """Solve the neighborhood problem with zero trace on its boundary.

    ``rhs`` holds the functional values at the interior fine nodes of
    ``omega`` (local interior order). Returns ``(u, empty)`` with ``u`` a
    full fine nodal vector supported in ``omega``.
    """
    problem = LocalProblem(omega, kappa) if problem is None else problem
    u = np.zeros(omega.grids.n_nodes)
    if problem.empty:
        return u, True
    u[omega.interior_nodes] = problem.solve_interior(rhs)
    return u, False


def energy_norm(u, stiffness):
    return float(np.sqrt(max(u @ (stiffness @ u), 0.0)))


def l2_norm(u, mass):
    return float(np.sqrt(max(u @ (mass @ u), 0.0)))


def norms(u, system):
    """Energy and L2 norms of a fine function."""
    mass = system.mass if system.mass is not None else assemble_mass(system.grids)
    return {"energy": energy_norm(u, system.stiffness), "l2": l2_norm(u, mass)}


def error_pair(u, u_ms, system):
    """Relative energy and L2 errors ``(e_a, e_2)`` of ``u_ms`` against ``u``."""
    ref = norms(u, system)
    if ref["energy"] == 0.0 or ref["l2"] == 0.0:
        raise ValueError("reference solution has zero norm")
    err = norms(np.asarray(u) - np.asarray(u_ms), system)
    return err["energy"] / ref["energy"], err["l2"] / ref["l2"]


def interpolation_matrix(grids, points):
    """Sparse ``(n_points, n_nodes)`` operator evaluating bilinear nodal fields at ``points``.

    Points on a cell edge take the cell to their upper right, except on the
    right and top domain boundaries. Points outside the domain raise.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x0, x1, y0, y1 = grids.domain
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    x, y = points[:, 0], points[:, 1]
    outside = (x < x0 - tol) | (x > x1 + tol) | (y < y0 - tol) | (y > y1 + tol)
    if np.any(outside):
        raise ValueError(f"{int(outside.sum())} point(s) lie outside the domain {grids.domain}")
    sx = np.clip((x - x0) / grids.hx, 0.0, grids.fnx)
    sy = np.clip((y - y0) / grids.hy, 0.0, grids.fny)
    i = np.minimum(np.floor(sx).astype(int), grids.fnx - 1)
    j = np.minimum(np.floor(sy).astype(int), grids.fny - 1)
    tx, ty = sx - i, sy - j
    cols = np.column_stack([grids.node_id(i, j), grids.node_id(i + 1, j),
                            grids.node_id(i + 1, j + 1), grids.node_id(i, j + 1)])
    vals = np.column_stack([(1 - tx) * (1 - ty), tx * (1 - ty), tx * ty, (1 - tx) * ty])
    rows = np.repeat(np.arange(points.shape[0]), 4)
    return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())),
                         shape=(points.shape[0], grids.n_nodes))


# KAPPA v1 text format
def write_kappa(path, kappa):
    """Write a per-cell field as ``KAPPA v1 <ncx> <ncy>`` followed by one row per line."""
    kappa = check_kappa(kappa)
    ncy, ncx = kappa.shape
    lines = [f"KAPPA v1 {ncx} {ncy}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in kappa)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_kappa(path):
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[:2] != ["KAPPA", "v1"]:
            raise ValueError(f"{path}: not a KAPPA v1 file")
        ncx, ncy = int(header[2]), int(header[3])
        data = np.loadtxt(fh, dtype=float, ndmin=2)
    if data.shape != (ncy, ncx):
        raise ValueError(f"{path}: expected {ncy}x{ncx} values, found {data.shape}")
    return check_kappa(data)


def contrast(kappa):
    kappa = np.asarray(kappa)
    return float(kappa.max() / kappa.min())

