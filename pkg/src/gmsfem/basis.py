"""Offline construction: partition of unity, spectral weight, snapshots and local spectra.

For every coarse neighborhood the snapshot space is spanned by the discrete
kappa-harmonic extensions of the boundary node deltas. Because the snapshot
matrix is the identity on the boundary, an eigenvector in snapshot
coordinates is exactly the boundary trace of its mode, and the mode itself
is recovered with one harmonic extension. Only the coordinates are kept.
"""

from dataclasses import dataclass, field
import hashlib
import logging
import os

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import LocalProblem, assemble_patch, q1_mass, q1_stiffness
from .grid import neighborhood_of
from .validation import check_kappa

logger = logging.getLogger(__name__)


class SpectralError(RuntimeError):
    """The snapshot mass matrix is not positive definite."""


def _element_corner_data(n):
    """Bilinear hat values of the four element corners on an ``(n+1)^2`` patch."""
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)
    x, y = X.ravel(), Y.ravel()
    # corner order: lower-left, lower-right, upper-right, upper-left
    return np.column_stack([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y])


def compute_pou(grids, kappa):
    """Multiscale partition of unity, one column per coarse node.

    On each coarse element the four corner functions solve the discrete
    kappa-harmonic cell problem with edge-linear boundary data. Returns a CSC
    matrix of shape ``(n_nodes, n_coarse_nodes)``.
    """
    kappa = check_kappa(kappa, grids.cell_shape)
    n = grids.n_fine
    stiff_el = q1_stiffness(grids.hx, grids.hy)
    hat = _element_corner_data(n)
    t = np.arange(n + 1)
    li, lj = np.meshgrid(t, t)
    li, lj = li.ravel(), lj.ravel()
    inner = np.flatnonzero((li > 0) & (li < n) & (lj > 0) & (lj < n))
    outer = np.setdiff1d(np.arange((n + 1) ** 2), inner)

    rows, cols, vals = [], [], []
    for J in range(grids.ny):
        for I in range(grids.nx):
            block = kappa[J * n:(J + 1) * n, I * n:(I + 1) * n]
            values = hat.copy()
            if inner.size:
                mat = assemble_patch(block, stiff_el)
                a_ii = mat[inner][:, inner].tocsc()
                a_ib = mat[inner][:, outer]
                values[inner] = spla.splu(a_ii, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                                  options={"SymmetricMode": True}).solve(-(a_ib @ hat[outer]))
            gnodes = grids.node_id(li + I * n, lj + J * n)
            corners = grids.coarse_node_id(
                np.array([I, I + 1, I + 1, I]), np.array([J, J, J + 1, J + 1]))
            for c in range(4):
                rows.append(gnodes)
                cols.append(np.full(gnodes.size, corners[c]))
                vals.append(values[:, c])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    # shared coarse-edge nodes appear once per element with identical values
    key = cols.astype(np.int64) * grids.n_nodes + rows
    _, first = np.unique(key, return_index=True)
    chi = sp.csc_matrix((vals[first], (rows[first], cols[first])),
                        shape=(grids.n_nodes, grids.n_coarse_nodes))
    chi.eliminate_zeros()
    return chi


def midpoint_gradient_operators(grids):
    """Sparse maps from nodal values to cell-midpoint x- and y-derivatives."""
    conn = grids.cell_nodes
    ncell = grids.n_cells
    rows = np.repeat(np.arange(ncell), 4)
    # node order: (0,0), (1,0), (1,1), (0,1)
    dx = np.tile(np.array([-1.0, 1.0, 1.0, -1.0]) / (2 * grids.hx), ncell)
    dy = np.tile(np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * grids.hy), ncell)
    shape = (ncell, grids.n_nodes)
    return (sp.csr_matrix((dx, (rows, conn.ravel())), shape=shape),
            sp.csr_matrix((dy, (rows, conn.ravel())), shape=shape))


def compute_weight(grids, kappa, chi):
    """Spectral weight ``kappa * sum_i H^2 |grad chi_i|^2`` per fine cell."""
    kappa = check_kappa(kappa, grids.cell_shape)
    gx, gy = midpoint_gradient_operators(grids)
    px, py = gx @ chi, gy @ chi
    grad2 = np.asarray(px.multiply(px).sum(axis=1) + py.multiply(py).sum(axis=1)).ravel()
    grad2 = grad2.reshape(grids.cell_shape)
    if np.any(grad2 <= 0):
        raise ValueError("partition of unity has a cell with zero gradient sum")
    return kappa * grids.H ** 2 * grad2


@dataclass
class SnapshotSpace:
    """Harmonic snapshots of one neighborhood, one column per boundary fine node."""

    omega: object
    vectors: np.ndarray  # (n_local_nodes, n_boundary)

    @property
    def boundary(self):
        return self.omega.local_boundary

    @property
    def dim(self):
        return self.vectors.shape[1]


def compute_snapshots(omega, kappa, problem=None):
    problem = LocalProblem(omega, kappa) if problem is None else problem
    nb = omega.local_boundary.size
    return SnapshotSpace(omega=omega, vectors=problem.harmonic_extension(np.eye(nb)))


@dataclass
class LocalSpectrum:
    """Ascending eigenpairs of the snapshot-space spectral problem."""

    eigenvalues: np.ndarray
    coords: np.ndarray  # columns are eigenvectors in snapshot coordinates
    shift: float = 0.0

    @property
    def dim(self):
        return self.eigenvalues.size

    def next_eigenvalue(self, count):
        """Eigenvalue of the first mode not among the first ``count``; inf when exhausted."""
        return float(self.eigenvalues[count]) if count < self.dim else np.inf


def snapshot_matrices(omega, snapshots, kappa, weight):
    """Energy and weighted-mass matrices in snapshot coordinates."""
    grids = omega.grids
    rs, cs = omega.cell_slice()
    k_loc = np.asarray(kappa).reshape(grids.cell_shape)[rs, cs]
    w_loc = np.asarray(weight).reshape(grids.cell_shape)[rs, cs]
    a_loc = assemble_patch(k_loc, q1_stiffness(grids.hx, grids.hy))
    m_loc = assemble_patch(w_loc, q1_mass(grids.hx, grids.hy))
    S = snapshots.vectors
    A = S.T @ (a_loc @ S)
    M = S.T @ (m_loc @ S)
    return 0.5 * (A + A.T), 0.5 * (M + M.T)


def solve_spectral(omega, snapshots, kappa, weight, spd_tol=1e-12):
    """Solve ``A x = lambda M x`` densely; eigenvectors are M-orthonormal."""
    A, M = snapshot_matrices(omega, snapshots, kappa, weight)
    shift = 0.0
    try:
        sla.cholesky(M)
    except sla.LinAlgError:
        mmin = float(np.linalg.eigvalsh(M).min())
        if mmin < -spd_tol * np.linalg.norm(M, 2):
            raise SpectralError(
                f"snapshot mass matrix of node {omega.center} is indefinite (min eig {mmin:.3e})")
        shift = 1e-14 * np.trace(M)
        M = M + shift * np.eye(M.shape[0])
        logger.warning("shifted snapshot mass matrix of node %d by %.3e", omega.center, shift)
    evals, evecs = sla.eigh(A, M)
    order = np.argsort(evals, kind="stable")
    return LocalSpectrum(eigenvalues=evals[order], coords=evecs[:, order], shift=shift)


def kappa_digest(kappa):
    return hashlib.sha256(np.ascontiguousarray(kappa, dtype=np.float64).tobytes()).hexdigest()[:16]


@dataclass
class NeighborhoodBasis:
    """Everything the online stage needs from one neighborhood."""

    omega: object
    problem: LocalProblem
    spectrum: LocalSpectrum
    chi: np.ndarray  # center PoU function over the local nodes
    _modes: dict = field(default_factory=dict, repr=False)
    max_cached: int = 16

    @property
    def node(self):
        return self.omega.center

    @property
    def n_snapshots(self):
        return self.spectrum.dim

    def modes(self, ks):
        """Snapshot-space modes ``k`` over the local nodes, one column each."""
        ks = [int(k) for k in ks]
        missing = [k for k in ks if k not in self._modes]
        if missing:
            block = self.problem.harmonic_extension(self.spectrum.coords[:, missing])
            for j, k in enumerate(missing):
                if k < self.max_cached:
                    self._modes[k] = block[:, j]
            fresh = dict(zip(missing, block.T))
        else:
            fresh = {}
        out = np.empty((self.omega.n_local_nodes, len(ks)))
        for j, k in enumerate(ks):
            out[:, j] = self._modes[k] if k in self._modes else fresh[k]
        return out

    def local_basis(self, ks):
        """Local values of ``chi * mode_k``, zero on the domain boundary."""
        vals = self.chi[:, None] * self.modes(ks)
        vals[self.omega.local_on_domain_boundary] = 0.0
        return vals

    def basis_vectors(self, ks):
        """Offline basis functions as a sparse ``(n_nodes, len(ks))`` matrix."""
        if len(ks) == 0:
            return sp.csc_matrix((self.omega.grids.n_nodes, 0))
        bad = [k for k in ks if not 0 <= k < self.n_snapshots]
        if bad:
            raise ValueError(f"mode indices {bad} outside snapshot dimension {self.n_snapshots}")
        return local_to_global(self.omega, self.local_basis(ks))


def local_to_global(omega, local_cols):
    """Sparse zero extension of local column vectors to the fine grid."""
    local_cols = np.asarray(local_cols)
    n_loc, ncol = local_cols.shape
    rows = np.repeat(omega.nodes, ncol)
    cols = np.tile(np.arange(ncol), n_loc)
    mat = sp.csc_matrix((local_cols.ravel(), (rows, cols)), shape=(omega.grids.n_nodes, ncol))
    mat.eliminate_zeros()
    return mat


def offline_basis(nb, count):
    """First ``count`` offline basis functions of one neighborhood."""
    if count > nb.n_snapshots:
        raise ValueError(f"requested {count} basis functions, snapshot dimension is {nb.n_snapshots}")
    return nb.basis_vectors(range(count))


@dataclass
class LocalBasisSet:
    """Offline data for a set of coarse neighborhoods."""

    grids: object
    kappa: np.ndarray
    chi: sp.csc_matrix
    weight: np.ndarray
    neighborhoods: dict

    def __getitem__(self, node):
        return self.neighborhoods[int(node)]

    def __contains__(self, node):
        return int(node) in self.neighborhoods

    @property
    def nodes(self):
        return sorted(self.neighborhoods)


def _cache_path(cache_dir, grids, digest, node):
    return os.path.join(
        cache_dir, f"spectrum_{grids.nx}x{grids.ny}x{grids.n_fine}_{digest}_{node}.npz")


def build_neighborhood(grids, kappa, weight, chi, node, cache_dir=None, digest=None):
    omega = neighborhood_of(grids, node)
    problem = LocalProblem(omega, kappa)
    spectrum = None
    path = None
    if cache_dir is not None:
        path = _cache_path(cache_dir, grids, digest or kappa_digest(kappa), node)
        if os.path.exists(path):
            with np.load(path) as data:
                spectrum = LocalSpectrum(eigenvalues=data["eigenvalues"], coords=data["coords"],
                                         shift=float(data["shift"]))
    if spectrum is None:
        snaps = compute_snapshots(omega, kappa, problem)
        spectrum = solve_spectral(omega, snaps, kappa, weight)
        if path is not None:
            os.makedirs(cache_dir, exist_ok=True)
            np.savez(path, eigenvalues=spectrum.eigenvalues, coords=spectrum.coords,
                     shift=spectrum.shift)
    chi_local = chi[:, [node]].toarray().ravel()[omega.nodes]
    return NeighborhoodBasis(omega=omega, problem=problem, spectrum=spectrum, chi=chi_local)


def build_offline(grids, kappa, nodes=None, cache_dir=None):
    """Partition of unity, weight and per-neighborhood spectra for ``nodes``."""
    kappa = check_kappa(kappa, grids.cell_shape)
    if nodes is None:
        nodes = range(grids.n_coarse_nodes)
    chi = compute_pou(grids, kappa)
    weight = compute_weight(grids, kappa, chi)
    digest = kappa_digest(kappa) if cache_dir is not None else None
    hoods = {int(i): build_neighborhood(grids, kappa, weight, chi, int(i), cache_dir, digest)
             for i in nodes}
    return LocalBasisSet(grids=grids, kappa=kappa, chi=chi, weight=weight, neighborhoods=hoods)
