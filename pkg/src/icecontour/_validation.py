"""Input checks shared by the estimators."""
import numpy as np
from sklearn.exceptions import NotFittedError


def check_matrix(a, name, lo=None, hi=None, ndim=2):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and ndim == 2:
        a = a[None, :]
    if a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    if lo is not None and np.any(a < lo):
        raise ValueError(f"{name} has values below {lo}")
    if hi is not None and np.any(a > hi):
        raise ValueError(f"{name} has values above {hi}")
    return a


def check_probability(p, name="probability"):
    p = np.asarray(p, dtype=float)
    v = p[~np.isnan(p)]
    if np.any((v < 0) | (v > 1)):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return p


def check_fitted(est, attr):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")
