"""Index leverage correlation functions and binned conditional curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from ._validation import check_lag, check_same_grid, check_series
from .exceptions import AlignmentError, BinningError, LagRangeError
from .panel import IndexSeries, ReturnsPanel, index_series, instantaneous_stats, normalize


@dataclass(frozen=True)
class LagCurve:
    lags: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if lags.ndim != 1 or lags.shape != values.shape:
            raise AlignmentError(f"lags {lags.shape} and values {values.shape} must be equal-length 1-d")
        if lags.size and (lags[0] < 1 or np.any(np.diff(lags) <= 0)):
            raise LagRangeError("lags must be strictly increasing and >= 1")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"curve {self.label!r} has non-finite values")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.lags.size

    def restrict(self, lo, hi):
        keep = (self.lags >= lo) & (self.lags <= hi)
        return LagCurve(self.lags[keep], self.values[keep], self.label)


@dataclass(frozen=True)
class BinnedCurve:
    bin_centers: np.ndarray
    means: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray


def _index_values(idx):
    return idx.values if isinstance(idx, IndexSeries) else check_series(idx, name="index")


def _lag_grid(tau_max, T):
    if int(tau_max) != tau_max or tau_max < 1:
        raise LagRangeError(f"tau_max must be a positive integer, got {tau_max!r}")
    if tau_max >= T:
        raise LagRangeError(f"tau_max={tau_max} must be below T={T}")
    return np.arange(1, int(tau_max) + 1)


def _lagged_slope(I, y, lags, label):
    # <I(t - tau) y(t)>_{t > tau} / <I^2>_{all t}
    I2 = np.mean(I**2)
    vals = np.array([np.mean(I[:-tau] * y[tau:]) for tau in lags]) / I2
    return LagCurve(lags, vals, label)


def leverage_full(idx, tau_max):
    """Full index leverage ``L_I(tau) = <I(t-tau) I(t)^2> / <I^2>`` for tau = 1..tau_max."""
    I = _index_values(idx)
    lags = _lag_grid(tau_max, I.size)
    return _lagged_slope(I, I**2, lags, "L_I")


def leverage_partials(idx, inst, tau_max):
    """Volatility and correlation partial leverage functions ``(L_sigma, L_rho)``."""
    I = _index_values(idx)
    if inst.sigma2.shape != I.shape or inst.rho.shape != I.shape:
        raise AlignmentError("index and instantaneous series have different lengths")
    lags = _lag_grid(tau_max, I.size)
    return (
        _lagged_slope(I, inst.sigma2, lags, "L_sigma"),
        _lagged_slope(I, inst.rho, lags, "L_rho"),
    )


def additivity_residual(l_I, l_sigma, l_rho, rho0, sigma0_sq):
    """``L_I - rho0 L_sigma - sigma0^2 L_rho`` on a shared lag grid."""
    check_same_grid(l_I.lags, l_sigma.lags)
    check_same_grid(l_I.lags, l_rho.lags)
    resid = l_I.values - rho0 * l_sigma.values - sigma0_sq * l_rho.values
    return LagCurve(l_I.lags, resid, "residual")


def binned_conditional(y, idx, tau, n_bins):
    """Average ``y(t)`` in equal-count bins of ``I(t - tau)``.

    Bin centers are the within-bin means of the conditioning variable.
    """
    I = _index_values(idx)
    y = check_series(y, length=I.size, name="y")
    tau = check_lag(tau, I.size)
    if n_bins < 2:
        raise BinningError("need at least 2 bins")
    x, yy = I[:-tau], y[tau:]
    if x.size < n_bins:
        raise BinningError(f"{x.size} pairs cannot fill {n_bins} bins")
    order = np.argsort(x, kind="stable")
    groups = np.array_split(order, n_bins)
    centers = np.array([x[g].mean() for g in groups])
    means = np.array([yy[g].mean() for g in groups])
    counts = np.array([g.size for g in groups], dtype=np.int64)
    stderr = np.array(
        [yy[g].std(ddof=1) / np.sqrt(g.size) if g.size > 1 else np.nan for g in groups]
    )
    return BinnedCurve(centers, means, stderr, counts)


class LeverageCorrelation(BaseEstimator):
    """Estimator wrapper computing the three leverage functions of a panel.

    Parameters
    ----------
    tau_max : int
        Largest lag, in days.

    Attributes
    ----------
    l_index_, l_sigma_, l_rho_, residual_ : LagCurve
    rho0_, sigma0_sq_ : float
    """

    def __init__(self, tau_max=250):
        self.tau_max = tau_max

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        npanel = normalize(ReturnsPanel.from_array(X.T))
        idx = index_series(npanel)
        inst = instantaneous_stats(npanel)
        self.l_index_ = leverage_full(idx, self.tau_max)
        self.l_sigma_, self.l_rho_ = leverage_partials(idx, inst, self.tau_max)
        self.rho0_, self.sigma0_sq_ = inst.rho0, inst.sigma0_sq
        self.residual_ = additivity_residual(
            self.l_index_, self.l_sigma_, self.l_rho_, inst.rho0, inst.sigma0_sq
        )
        self.n_features_in_ = X.shape[1]
        return self
