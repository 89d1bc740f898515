"""Input checks shared by the library functions and the estimator."""

import numbers

import numpy as np
from sklearn.utils import check_array


def check_kappa(kappa, shape=None):
    """Return ``kappa`` as a 2-D float array of strictly positive, finite values."""
    kappa = check_array(kappa, dtype=np.float64, ensure_2d=False, copy=False)
    if shape is not None:
        if kappa.size != int(np.prod(shape)):
            raise ValueError(f"kappa has {kappa.size} values, grid has {int(np.prod(shape))} cells")
        kappa = kappa.reshape(shape)
    elif kappa.ndim != 2:
        raise ValueError(f"kappa must be 2-D (rows of cells), got ndim={kappa.ndim}")
    if np.any(kappa <= 0):
        raise ValueError("kappa must be strictly positive")
    return kappa


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_fraction(value, name="theta"):
    if not 0.0 < float(value) <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value!r}")
    return float(value)


def check_points(X):
    """Evaluation points as an ``(n, 2)`` float array."""
    return check_array(X, dtype=np.float64, ensure_2d=True)
