"""Scikit-learn style facade over the functional multiscale pipeline.

``fit`` takes a per-cell permeability field and runs the configured
enrichment; ``transform`` evaluates the multiscale basis at points and
``predict`` evaluates the multiscale solution there.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .basis import build_offline
from .enrich import MODES, Enrichment, EnrichmentPolicy, Problem, initial_space
from .fem import build_fine_system, interpolation_matrix, solve_fine
from .grid import build_grids, enrichable_nodes
from .validation import check_fraction, check_kappa, check_points, check_positive_int


class OnlineGMsFEM(RegressorMixin, BaseEstimator):
    """Online adaptive multiscale solver for ``-div(kappa grad u) = f`` on the unit square.

    Parameters
    ----------
    coarse : int
        Coarse cells per direction.
    fine : int
        Fine cells per coarse cell and direction; ``kappa`` passed to ``fit``
        must have ``coarse * fine`` cells per direction.
    n_initial : int
        Offline spectral functions per neighborhood before enrichment.
    mode : str
        Enrichment policy, one of ``offline_adaptive``, ``online_full``,
        ``online_threshold``, ``online_cumulative`` or ``online_reduced``.
    theta, tol, max_iter, n0, window_advance, neighbors
        Policy parameters, see :class:`gmsfem.enrich.EnrichmentPolicy`.
    dof_convention : {"all", "interior"}
        Which coarse nodes own basis functions.
    source : float or callable
        Right-hand side; a constant or ``f(x, y)``.
    reference : bool
        Also solve the fine problem so that ``history_`` carries true errors.

    Attributes
    ----------
    grids_, system_, offline_, space_
        Grid hierarchy, fine system, offline data and final multiscale space.
    history_ : list of ConvergenceRecord
    u_ms_ : ndarray
        Multiscale solution as a fine nodal vector.
    coef_ : ndarray
        Coefficients of ``u_ms_`` in the multiscale basis.
    """

    def __init__(self, coarse=8, fine=8, n_initial=1, mode="online_full", theta=0.7, tol=0.0,
                 max_iter=5, n0=40, window_advance=None, neighbors=False,
                 dof_convention="all", source=1.0, reference=True):
        self.coarse = coarse
        self.fine = fine
        self.n_initial = n_initial
        self.mode = mode
        self.theta = theta
        self.tol = tol
        self.max_iter = max_iter
        self.n0 = n0
        self.window_advance = window_advance
        self.neighbors = neighbors
        self.dof_convention = dof_convention
        self.source = source
        self.reference = reference

    def _validate_params(self):
        check_positive_int(self.coarse, "coarse")
        check_positive_int(self.fine, "fine")
        check_positive_int(self.n_initial, "n_initial")
        check_fraction(self.theta, "theta")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dof_convention not in ("all", "interior"):
            raise ValueError(f"dof_convention must be 'all' or 'interior', got {self.dof_convention!r}")

    def fit(self, X, y=None):
        """Build the offline space for permeability ``X`` and run the enrichment.

        Parameters
        ----------
        X : array-like of shape (coarse * fine, coarse * fine)
            Per-cell permeability, rows running in y.
        y : ignored
        """
        self._validate_params()
        n = self.coarse * self.fine
        kappa = check_kappa(X, shape=(n, n))
        self.grids_ = build_grids(nx=self.coarse, ny=self.coarse, n_fine=self.fine)
        self.system_ = build_fine_system(self.grids_, kappa, self.source)
        self.u_ = solve_fine(self.system_) if self.reference else None
        nodes = enrichable_nodes(self.grids_, self.dof_convention)
        self.offline_ = build_offline(self.grids_, kappa, nodes)
        problem = Problem(self.system_, self.offline_, nodes, reference=self.u_)
        policy = EnrichmentPolicy(mode=self.mode, theta=self.theta, tol=self.tol,
                                  max_iterations=self.max_iter, n0=self.n0,
                                  window_advance=self.window_advance, neighbors=self.neighbors)
        self.space_ = initial_space(problem, self.n_initial)
        driver = Enrichment(problem, policy, self.space_)
        self.history_ = driver.run()
        self.coef_, self.u_ms_ = self.space_.solve()
        self.n_features_in_ = n * n
        return self

    def transform(self, X):
        """Multiscale basis functions evaluated at points ``X`` of shape (n, 2)."""
        check_is_fitted(self, "space_")
        P = interpolation_matrix(self.grids_, check_points(X))
        return np.asarray((P @ self.space_.basis).todense())

    def predict(self, X):
        """Multiscale solution at points ``X`` of shape (n, 2)."""
        check_is_fitted(self, "u_ms_")
        return interpolation_matrix(self.grids_, check_points(X)) @ self.u_ms_

    def predict_reference(self, X):
        """Fine reference solution at points ``X``; needs ``reference=True``."""
        check_is_fitted(self, "u_ms_")
        if self.u_ is None:
            raise ValueError("fitted without a reference solve")
        return interpolation_matrix(self.grids_, check_points(X)) @ self.u_

    @property
    def dof_(self):
        check_is_fitted(self, "space_")
        return self.space_.dim
