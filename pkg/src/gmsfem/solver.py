"""Galerkin solves in the multiscale space and local H^-1 residuals.

The coarse matrix ``B^T A B`` is kept together with its Cholesky factor and
grown one column at a time. The new Cholesky pivot measures how much energy
of the new vector is not already representable, which doubles as the
linear-independence guard.
"""

from dataclasses import dataclass, field
import logging
import math
import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

logger = logging.getLogger(__name__)

OFFLINE = "offline"
ONLINE = "online"


@dataclass(frozen=True)
class BasisEntry:
    node: int
    kind: str
    ordinal: int


@dataclass
class Rejection:
    node: int
    kind: str
    reason: str
    ratio: float


class MultiscaleSpace:
    """Ordered multiscale basis over the fine grid, with its coarse Galerkin system.

    Parameters
    ----------
    system
        The assembled fine problem; its stiffness and load define the coarse system.
    pivot_tol
        A vector is rejected when the fraction of its energy not captured by the
        current space drops below this value (reciprocal condition guard).
    ortho_tol
        Same-neighborhood A-orthogonalization guard for online vectors.
    """

    def __init__(self, system, pivot_tol=1e-12, ortho_tol=1e-10):
        self.system = system
        self.pivot_tol = pivot_tol
        self.ortho_tol = ortho_tol
        self.entries = []
        self.offline_counts = {}
        self.online_counts = {}
        self.rejected = []
        self.generation = 0
        self._col_rows = []
        self._col_vals = []
        self._B = None
        n0 = 16
        self._K = np.zeros((n0, n0))
        self._L = np.zeros((n0, n0))
        self._g = np.zeros(n0)

    @property
    def dim(self):
        return len(self.entries)

    @property
    def _interior_mask(self):
        mask = np.ones(self.system.grids.n_nodes)
        mask[self.system.grids.boundary_nodes] = 0.0
        return mask

    @property
    def basis(self):
        """Basis vectors as a CSC matrix with one column per entry."""
        if self._B is None or self._B.shape[1] != self.dim:
            n = self.system.grids.n_nodes
            if not self._col_rows:
                self._B = sp.csc_matrix((n, 0))
            else:
                indptr = np.concatenate([[0], np.cumsum([r.size for r in self._col_rows])])
                self._B = sp.csc_matrix((np.concatenate(self._col_vals),
                                         np.concatenate(self._col_rows), indptr),
                                        shape=(n, self.dim))
        return self._B

    def expand(self, coefficients):
        """Fine nodal vector ``B c``."""
        c = np.asarray(coefficients, dtype=float)
        u = np.zeros(self.system.grids.n_nodes)
        for rows, vals, ck in zip(self._col_rows, self._col_vals, c):
            u[rows] += ck * vals
        return u

    def _cross(self, W):
        """``B^T W`` for dense ``W``, rebuilding the CSC store only occasionally."""
        built = 0 if self._B is None else self._B.shape[1]
        if self.dim - built > 128:
            built = self.basis.shape[1]
        head = self._B.T @ W if built else np.zeros((0, W.shape[1]))
        tail = [self._col_vals[k] @ W[self._col_rows[k]] for k in range(built, self.dim)]
        return np.vstack([head] + [t[None, :] for t in tail]) if tail else head

    @property
    def gram(self):
        """Coarse stiffness ``B^T A B``."""
        return self._K[:self.dim, :self.dim]

    @property
    def coarse_load(self):
        return self._g[:self.dim]

    def indices(self, node=None, kind=None):
        return [k for k, e in enumerate(self.entries)
                if (node is None or e.node == node) and (kind is None or e.kind == kind)]

    def counts(self, node):
        return self.offline_counts.get(node, 0), self.online_counts.get(node, 0)

    def _grow(self, need):
        cap = self._K.shape[0]
        if need <= cap:
            return
        new = max(need, 2 * cap)
        for name in ("_K", "_L"):
            old = getattr(self, name)
            arr = np.zeros((new, new))
            arr[:cap, :cap] = old
            setattr(self, name, arr)
        g = np.zeros(new)
        g[:cap] = self._g
        self._g = g

    def add(self, vectors, node, kind, orthogonalize=None, normalize=False):
        """Append the columns of ``vectors`` as basis functions owned by ``node``.

        Online vectors are A-orthogonalized against the vectors already owned by
        the same neighborhood. Returns the number of accepted vectors.
        """
        V = sp.csc_matrix(vectors)
        if V.shape[1] == 0:
            return 0
        V = V.toarray() * self._interior_mask[:, None]
        if orthogonalize is None:
            orthogonalize = kind == ONLINE
        AV = np.asarray(self.system.stiffness @ V)
        start = self.dim
        cross = self._cross(AV) if start else np.zeros((0, V.shape[1]))
        G = V.T @ AV
        gload = V.T @ self.system.load
        accepted = []
        for j in range(V.shape[1]):
            v = V[:, j]
            k_all = cross[:, j]
            if accepted:
                k_all = np.concatenate([k_all, np.array([a @ AV[:, j] for a in accepted])])
            energy = G[j, j]
            load = float(gload[j])
            if energy <= 0:
                self.rejected.append(Rejection(node, kind, "zero energy", 0.0))
                continue
            if orthogonalize:
                own = self.indices(node=node)
                if own:
                    Kown = self._K[np.ix_(own, own)]
                    coef = sla.solve(Kown, k_all[own], assume_a="pos")
                    residual_energy = energy - float(k_all[own] @ coef)
                    if residual_energy < self.ortho_tol * energy:
                        self.rejected.append(
                            Rejection(node, kind, "dependent on own neighborhood",
                                      residual_energy / energy))
                        continue
                    for k, c in zip(own, coef):
                        v[self._col_rows[k]] -= c * self._col_vals[k]
                    k_all = k_all - self._K[:self.dim, own] @ coef
                    load = load - float(self._g[own] @ coef)
                    energy = residual_energy
            if normalize:
                s = 1.0 / math.sqrt(energy)
                v = v * s
                k_all = k_all * s
                load *= s
                energy = 1.0
            n = self.dim
            lrow = sla.solve_triangular(self._L[:n, :n], k_all, lower=True) if n else k_all
            pivot = energy - float(lrow @ lrow)
            if pivot <= self.pivot_tol * energy:
                self.rejected.append(Rejection(node, kind, "ill-conditioned coarse system",
                                               pivot / energy))
                logger.info("rejected %s vector of node %d (pivot ratio %.2e)",
                            kind, node, pivot / energy)
                continue
            self._grow(n + 1)
            self._K[n, :n] = k_all
            self._K[:n, n] = k_all
            self._K[n, n] = energy
            self._L[n, :n] = lrow
            self._L[n, n] = math.sqrt(pivot)
            self._g[n] = load
            rows = np.flatnonzero(v)
            self._col_rows.append(rows)
            self._col_vals.append(v[rows])
            accepted.append(v)
            counts = self.offline_counts if kind == OFFLINE else self.online_counts
            ordinal = counts.get(node, 0)
            counts[node] = ordinal + 1
            self.entries.append(BasisEntry(int(node), kind, ordinal))
        if accepted:
            self.generation += 1
        return len(accepted)

    def solve(self):
        """Galerkin solution; returns ``(coefficients, u_ms)``."""
        n = self.dim
        if n == 0:
            return np.zeros(0), np.zeros(self.system.grids.n_nodes)
        L = self._L[:n, :n]
        K = self._K[:n, :n]
        g = self._g[:n]
        c = sla.cho_solve((L, True), g)
        c += sla.cho_solve((L, True), g - K @ c)
        return c, self.expand(c)


def solve_coarse(space):
    return space.solve()


@dataclass
class ResidualReport:
    """Local H^-1 residual of one neighborhood and its Riesz representative."""

    node: int
    r: float
    phi_local: np.ndarray = field(repr=False)  # values at the interior nodes of omega
    next_eigenvalue: float
    omega: object = field(repr=False)

    @property
    def eta2(self):
        lam = self.next_eigenvalue
        if math.isinf(lam):
            return 0.0
        if lam <= 0:
            return math.inf
        return self.r ** 2 / lam

    def vector(self):
        """Riesz representative as a full fine nodal vector."""
        out = np.zeros(self.omega.grids.n_nodes)
        out[self.omega.interior_nodes] = self.phi_local
        return out

    def sparse_vector(self):
        n = self.omega.grids.n_nodes
        idx = self.omega.interior_nodes
        return sp.csc_matrix((self.phi_local, (idx, np.zeros(idx.size, dtype=int))), shape=(n, 1))


def global_residual(system, u_ms):
    """Residual vector ``b - A u_ms``; entry p is the residual functional at hat p."""
    return system.load - system.stiffness @ u_ms


def residual_riesz(space, offline, u_ms, node, residual=None):
    """Riesz representative and dual norm of the local residual on ``omega_node``."""
    nb = offline[node]
    omega = nb.omega
    if residual is None:
        residual = global_residual(space.system, u_ms)
    rhs = residual[omega.interior_nodes]
    if nb.problem.empty:
        phi = np.zeros(0)
        r2 = 0.0
    else:
        phi = nb.problem.solve_interior_refined(rhs)
        r2 = float(rhs @ phi)
    n_off = space.offline_counts.get(node, 0)
    return ResidualReport(node=int(node), r=math.sqrt(max(r2, 0.0)), phi_local=phi,
                          next_eigenvalue=nb.spectrum.next_eigenvalue(n_off), omega=omega)


def compute_reports(space, offline, u_ms, nodes):
    residual = global_residual(space.system, u_ms)
    return {int(i): residual_riesz(space, offline, u_ms, i, residual) for i in nodes}


def error_estimate(reports):
    """Un-normalized estimator ``sum_i r_i^2 / lambda_{l_i+1}``."""
    reports = reports.values() if isinstance(reports, dict) else reports
    total = 0.0
    for rep in reports:
        lam = rep.next_eigenvalue
        if math.isinf(lam):
            continue
        if lam <= 0:
            warnings.warn(f"non-positive next eigenvalue on node {rep.node}; term excluded")
            continue
        total += rep.r ** 2 / lam
    return total


def total_residual(reports):
    reports = reports.values() if isinstance(reports, dict) else reports
    return float(sum(rep.r ** 2 for rep in reports))
