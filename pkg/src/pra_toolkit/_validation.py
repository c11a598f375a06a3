"""Input validation helpers shared by the estimators and functional core."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import AlignmentError, DimensionalityError, LagRangeError, SymmetryError

SYMMETRY_TOL = 1e-12


def check_returns_matrix(X, *, min_stocks=2, min_days=2, name="returns"):
    """Validate a stocks x days matrix of returns and return it as float64."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    n_stocks, n_days = X.shape
    if n_stocks < min_stocks:
        raise DimensionalityError(f"{name}: need at least {min_stocks} stocks, got {n_stocks}")
    if n_days < min_days:
        raise DimensionalityError(f"{name}: need at least {min_days} days, got {n_days}")
    return X


def check_series(x, *, length=None, name="series"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    if length is not None and x.shape[0] != length:
        raise AlignmentError(f"{name} has length {x.shape[0]}, expected {length}")
    return x


def check_lag(tau, n_days):
    """Lags must satisfy 1 <= tau < T."""
    if int(tau) != tau:
        raise LagRangeError(f"lag must be an integer, got {tau!r}")
    tau = int(tau)
    if tau < 1 or tau >= n_days:
        raise LagRangeError(f"lag {tau} outside [1, {n_days - 1}]")
    return tau


def check_lag_grid(lags, n_days):
    lags = np.asarray(lags)
    if lags.ndim != 1 or lags.size == 0:
        raise LagRangeError("lag grid must be a non-empty 1-d sequence")
    out = np.array([check_lag(t, n_days) for t in lags], dtype=np.int64)
    if np.any(np.diff(out) <= 0):
        raise LagRangeError("lag grid must be strictly increasing")
    return out


def check_symmetric(M, *, tol=SYMMETRY_TOL, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SymmetryError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > tol * scale:
        raise SymmetryError(f"{name} is not symmetric to {tol:g}")
    return M


def check_same_grid(a, b, what="lag grids"):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or not np.array_equal(a, b):
        raise AlignmentError(f"{what} differ")
