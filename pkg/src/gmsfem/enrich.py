"""Enrichment policies: offline adaptive, online sweeps and their variants.

Every policy starts from a fixed offline space and produces one
:class:`ConvergenceRecord` per iteration. An online iteration is a sweep over
the four colors; each color adds at most one online function per
neighborhood and is followed by a fresh Galerkin solve, so the residuals of
the next color always see the latest multiscale solution.
"""

from dataclasses import asdict, dataclass
import logging
import math
import time

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .grid import four_coloring
from .solver import OFFLINE, ONLINE, MultiscaleSpace, compute_reports, global_residual, total_residual

logger = logging.getLogger(__name__)

MODES = ("offline_adaptive", "online_full", "online_threshold", "online_cumulative",
         "online_reduced")


@dataclass
class EnrichmentPolicy:
    mode: str = "online_full"
    theta: float = 0.7
    tol: float = 0.0
    max_iterations: int = 10
    basis_per_marked: int = 1
    n0: int = 40
    # mode-window offset advance per iteration; None means advance by n0
    window_advance: int = None
    neighbors: bool = False
    # reduced mode: use every mode below the window's upper end
    include_prior: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown enrichment mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta!r}")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")
        if self.max_iterations < 0 or self.basis_per_marked < 1 or self.n0 < 0:
            raise ValueError("iteration counts must be non-negative and basis_per_marked >= 1")

    @property
    def advance(self):
        return self.n0 if self.window_advance is None else self.window_advance

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class ConvergenceRecord:
    iteration: int
    dof: int
    e_a: float
    e_2: float
    residual_total: float
    lambda_min: float
    wall_ms: float = 0.0


@dataclass
class ColorStep:
    """Bookkeeping of one color sub-iteration of an online sweep."""

    color: int
    marked: list
    residual_marked: float  # sum of r_i^2 over the marked set
    error2_before: float = math.nan
    error2_after: float = math.nan
    dof: int = 0
    onerp: "OnerpReport" = None


@dataclass
class OnerpReport:
    lambda_min: float
    ratio: float
    decay: float = math.nan


@dataclass
class Problem:
    """Fine system, offline data and the enrichable neighborhoods of one run."""

    system: object
    offline: object
    nodes: np.ndarray
    reference: np.ndarray = None
    coloring: object = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=int)
        if self.coloring is None:
            self.coloring = four_coloring(self.system.grids, self.nodes)
        self._ref_energy2 = None

    @property
    def grids(self):
        return self.system.grids

    @property
    def reference_energy2(self):
        if self._ref_energy2 is None and self.reference is not None:
            self._ref_energy2 = self.system.energy(self.reference)
        return self._ref_energy2

    def error2(self, u_ms):
        """Squared energy error against the reference, NaN without one."""
        if self.reference is None:
            return math.nan
        return self.system.energy(self.reference - u_ms)

    def errors(self, u_ms):
        if self.reference is None:
            return math.nan, math.nan
        from .fem import error_pair
        return error_pair(self.reference, u_ms, self.system)


def dorfler_mark(values, theta):
    """Smallest set of largest entries whose sum reaches ``theta`` of the total.

    Ties are broken by original position; indices are returned in the
    descending-value order used for the selection.
    """
    values = np.asarray(values, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta!r}")
    if values.size == 0:
        return []
    if np.any(values < 0):
        raise ValueError("marking values must be non-negative")
    order = np.argsort(-values, kind="stable")
    total = values.sum()
    if total == 0:
        return []
    csum = np.cumsum(values[order])
    # tiny slack keeps theta = 1 from failing on summation-order rounding
    k = int(np.searchsorted(csum, theta * total * (1 - 1e-14), side="left")) + 1
    return [int(i) for i in order[:min(k, values.size)]]


def initial_space(problem, n_initial):
    """Offline space with ``n_initial`` spectral functions per enrichable node."""
    space = MultiscaleSpace(problem.system)
    for i in problem.nodes:
        nb = problem.offline[i]
        space.add(nb.basis_vectors(range(min(n_initial, nb.n_snapshots))), int(i), OFFLINE)
    return space


def onerp_report(reports, marked):
    """Smallest next eigenvalue over ``marked`` and the estimator ratio without C_err."""
    if not marked:
        return OnerpReport(lambda_min=math.nan, ratio=math.nan)
    lam_min = min(reports[i].next_eigenvalue for i in marked)
    num = sum(reports[i].eta2 for i in marked)
    den = sum(rep.eta2 for rep in reports.values())
    ratio = lam_min * num / den if den > 0 and math.isfinite(lam_min) else math.nan
    return OnerpReport(lambda_min=float(lam_min), ratio=float(ratio))


def likely_non_onerp(decay_low_contrast, decay_high_contrast, factor=2.0):
    """Flag a space whose per-iteration decay degrades with contrast by more than ``factor``."""
    return decay_high_contrast * factor < decay_low_contrast


def offline_adapt_step(space, problem, reports, theta, basis_per_marked=1):
    """Add the next offline modes on the Dorfler-marked neighborhoods.

    Returns the marked node list.
    """
    nodes = list(reports)
    eta2 = [reports[i].eta2 for i in nodes]
    finite = [e if math.isfinite(e) else 0.0 for e in eta2]
    marked = [nodes[k] for k in dorfler_mark(finite, theta)]
    for i in marked:
        nb = problem.offline[i]
        l_i = space.offline_counts.get(i, 0)
        upto = min(l_i + basis_per_marked, nb.n_snapshots)
        if upto <= l_i:
            logger.warning("spectrum of node %d exhausted; not enriched", i)
            continue
        space.add(nb.basis_vectors(range(l_i, upto)), i, OFFLINE)
    return marked


def neighbor_nodes(problem, node):
    """Enrichable nodes whose neighborhoods overlap ``omega_node``, excluding it."""
    grids = problem.grids
    I, J = grids.coarse_node_ij(node)
    available = set(int(i) for i in problem.nodes)
    out = []
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if di == dj == 0:
                continue
            ii, jj = I + di, J + dj
            if 0 <= ii <= grids.nx and 0 <= jj <= grids.ny:
                k = int(grids.coarse_node_id(ii, jj))
                if k in available:
                    out.append(k)
    return out


def reduced_online_basis(problem, space, residual, node, n0, offset=0, neighbors=False,
                         include_prior=False):
    """Residual representative restricted to a window of spectral modes.

    The window holds modes ``[l + offset, l + offset + n0)`` of each region,
    ``l`` being the region's offline count, multiplied by the region's
    partition-of-unity function. With ``neighbors`` the overlapping
    neighborhoods contribute their windows too; ``include_prior`` starts the
    window at mode 0 so that every mode below its upper end is used.
    Returns ``(phi, empty)``.
    """
    regions = [int(node)] + (neighbor_nodes(problem, node) if neighbors else [])
    blocks = []
    for j in regions:
        nb = problem.offline[j]
        l_j = space.offline_counts.get(j, 0)
        lo = 0 if include_prior else min(l_j + offset, nb.n_snapshots)
        hi = min(l_j + offset + n0, nb.n_snapshots)
        if hi > lo:
            blocks.append((nb.omega.nodes, nb.local_basis(range(lo, hi))))
    n = problem.grids.n_nodes
    if not blocks:
        return np.zeros(n), True
    # everything lives on the union of the involved neighborhoods
    support = np.unique(np.concatenate([nodes for nodes, _ in blocks]))
    W = np.zeros((support.size, sum(vals.shape[1] for _, vals in blocks)))
    col = 0
    for nodes, vals in blocks:
        W[np.searchsorted(support, nodes), col:col + vals.shape[1]] = vals
        col += vals.shape[1]
    A = problem.system.stiffness.tocsr()[support][:, support]
    G = W.T @ (A @ W)
    rhs = W.T @ residual[support]
    # modes can be nearly dependent after the PoU product; solve in the stable range
    evals, evecs = sla.eigh(0.5 * (G + G.T))
    keep = evals > 1e-13 * max(evals.max(), 0.0)
    if not np.any(keep):
        return np.zeros(n), True
    coef = evecs[:, keep] @ ((evecs[:, keep].T @ rhs) / evals[keep])
    phi = np.zeros(n)
    phi[support] = W @ coef
    return phi, False


class Enrichment:
    """Drives one policy from an offline space and collects records.

    Parameters
    ----------
    problem
        Fine system, offline data, enrichable nodes and the optional fine reference.
    policy
        What to add and when to stop.
    space
        The initial multiscale space; modified in place.
    """

    def __init__(self, problem, policy, space, clock=time.perf_counter, per_color=False):
        self.problem = problem
        self.per_color = per_color
        self.policy = policy
        self.space = space
        self.records = []
        self.steps = []
        self.onerp = []
        self._clock = clock
        self._t0 = clock()
        self._iteration = 0
        _, self.u_ms = space.solve()
        self.reports = self._reports()

    def _reports(self):
        return compute_reports(self.space, self.problem.offline, self.u_ms, self.problem.nodes)

    def _lambda_min(self, nodes):
        lams = [self.reports[i].next_eigenvalue for i in nodes]
        lams = [v for v in lams if math.isfinite(v)]
        return float(min(lams)) if lams else math.nan

    def record(self, lambda_min=None, iteration=None):
        e_a, e_2 = self.problem.errors(self.u_ms)
        if lambda_min is None:
            lambda_min = self._lambda_min(self.problem.nodes)
        rec = ConvergenceRecord(
            iteration=self._iteration if iteration is None else iteration, dof=self.space.dim, e_a=float(e_a), e_2=float(e_2),
            residual_total=total_residual(self.reports), lambda_min=lambda_min,
            wall_ms=1000.0 * (self._clock() - self._t0))
        self.records.append(rec)
        return rec

    # -- candidates -------------------------------------------------------
    def _select(self, color_nodes):
        pol = self.policy
        reports = self.reports
        nodes = [int(i) for i in color_nodes if reports[int(i)].r > 0]
        if pol.mode == "online_threshold":
            return [i for i in nodes if reports[i].r > pol.tol]
        if pol.mode == "online_cumulative":
            return [nodes[k] for k in dorfler_mark([reports[i].r ** 2 for i in nodes], pol.theta)]
        return nodes

    def _candidate(self, node, residual):
        if self.policy.mode == "online_reduced":
            phi, empty = reduced_online_basis(
                self.problem, self.space, residual, node, self.policy.n0,
                self._window_offset(), self.policy.neighbors, self.policy.include_prior)
            return None if empty else phi
        return self.reports[node].sparse_vector()

    def _window_offset(self):
        return self.policy.advance * self._iteration

    # -- one color ----------------------------------------------------------
    def color_step(self, k, color_nodes):
        marked = self._select(color_nodes)
        step = ColorStep(color=k, marked=marked,
                         residual_marked=float(sum(self.reports[i].r ** 2 for i in marked)))
        step.error2_before = self.problem.error2(self.u_ms)
        step.onerp = onerp_report(self.reports, marked)
        residual = global_residual(self.space.system, self.u_ms)
        added = 0
        for i in marked:
            vec = self._candidate(i, residual)
            if vec is None:
                continue
            added += self.space.add(vec.reshape(-1, 1) if not sp.issparse(vec) else vec, i,
                                    ONLINE, normalize=True)
        if added:
            _, self.u_ms = self.space.solve()
            self.reports = self._reports()
        step.error2_after = self.problem.error2(self.u_ms)
        step.dof = self.space.dim
        self.steps.append(step)
        return added

    def sweep(self):
        """One online iteration over the four colors; returns the number of functions added."""
        added = 0
        marked = []
        before = self.problem.error2(self.u_ms)
        rec = None
        for k, color in enumerate(self.problem.coloring):
            added += self.color_step(k, color)
            step_marked = self.steps[-1].marked
            marked.extend(step_marked)
            if self.per_color:
                # sub-iteration records count color steps from the start of the run
                rec = self.record(lambda_min=self._lambda_min(step_marked) if step_marked
                                  else math.nan, iteration=len(self.steps))
        self._iteration += 1
        if not self.per_color:
            rec = self.record(lambda_min=self._lambda_min(marked) if marked else math.nan)
        after = self.problem.error2(self.u_ms)
        decay = math.sqrt(before / after) if after > 0 else math.inf
        colors = self.steps[-len(self.problem.coloring):]
        for st in colors:
            st.onerp.decay = decay
        self.onerp.append(colors)
        return added, rec

    def offline_iteration(self):
        marked = offline_adapt_step(self.space, self.problem, self.reports, self.policy.theta,
                                    self.policy.basis_per_marked)
        _, self.u_ms = self.space.solve()
        self.reports = self._reports()
        self._iteration += 1
        return self.record(lambda_min=self._lambda_min(marked) if marked else math.nan)

    def any_above(self, tol):
        return any(self.reports[int(i)].r > tol for i in self.problem.nodes)

    def converged(self):
        return math.sqrt(total_residual(self.reports)) < self.policy.tol

    def run(self):
        """Execute the policy; returns the list of records (iteration 0 is the offline space)."""
        pol = self.policy
        self.record()
        for _ in range(pol.max_iterations):
            if pol.mode != "online_threshold" and pol.tol > 0 and self.converged():
                break
            if pol.mode == "online_threshold" and not self.any_above(pol.tol):
                break
            dof = self.space.dim
            if pol.mode == "offline_adaptive":
                self.offline_iteration()
            else:
                self.sweep()
            if self.space.dim == dof:
                # every candidate was rejected; the repeated records carry no news
                per_color = self.per_color and pol.mode != "offline_adaptive"
                del self.records[-(len(self.problem.coloring) if per_color else 1):]
                break
        return self.records


def run_policy(problem, policy, n_initial=1, space=None, per_color=False):
    """Build the initial space (unless given) and run ``policy``; returns the driver."""
    if space is None:
        space = initial_space(problem, n_initial)
    driver = Enrichment(problem, policy, space, per_color=per_color)
    driver.run()
    return driver


def online_sweep(space, problem, policy=None):
    """Single four-color online sweep with the given (default: full) policy."""
    policy = policy or EnrichmentPolicy(mode="online_full")
    driver = Enrichment(problem, policy, space)
    driver.sweep()
    return driver


def online_threshold_sweep(space, problem, tol):
    return online_sweep(space, problem, EnrichmentPolicy(mode="online_threshold", tol=tol))


def online_cumulative_sweep(space, problem, theta, tol=0.0):
    return online_sweep(space, problem,
                        EnrichmentPolicy(mode="online_cumulative", theta=theta, tol=tol))
