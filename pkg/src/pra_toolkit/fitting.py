"""Two-timescale exponential fits of lag curves and significance horizons."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import AlignmentError, UnderdeterminedFitError
from .leverage import LagCurve

THETA1_STARTS = (5.0, 10.0, 20.0)
THETA2_STARTS = (100.0, 250.0, 400.0)
LOG_THETA_BOUNDS = (np.log(0.5), np.log(1e6))  # below one lag step a timescale is not identifiable


@dataclass(frozen=True)
class FitResult:
    c_inf: float
    a1: float
    theta1: float
    a2: float
    theta2: float
    rss: float
    converged: bool
    n_points: int
    pinned: bool = False
    iterations: int = 0
    start_index: int = 0
    history: tuple = field(default=(), repr=False)

    def predict(self, tau):
        tau = np.asarray(tau, dtype=np.float64)
        return two_scale_model(tau, self.c_inf, self.a1, self.theta1, self.a2, self.theta2)

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("c_inf", "a1", "theta1", "a2", "theta2", "rss", "converged", "n_points",
                 "pinned", "iterations", "start_index")}


def two_scale_model(tau, c_inf, a1, theta1, a2, theta2):
    return c_inf + a1 * np.exp(-tau / theta1) + a2 * np.exp(-tau / theta2)


def _linear_amplitudes(tau, y, theta1, theta2, c_inf):
    cols = [np.exp(-tau / theta1), np.exp(-tau / theta2)]
    if c_inf is None:
        cols.insert(0, np.ones_like(tau))
        target = y
    else:
        target = y - c_inf
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, target, rcond=None)
    return coef


class _Problem:
    """Residuals and Jacobian in the parameters ``[c?, a1, log th1, a2, log th2]``."""

    def __init__(self, tau, y, c_inf):
        self.tau, self.y, self.c_fixed = tau, y, c_inf

    def unpack(self, p):
        if self.c_fixed is None:
            c, a1, l1, a2, l2 = p
        else:
            a1, l1, a2, l2 = p
            c = self.c_fixed
        return c, a1, np.exp(l1), a2, np.exp(l2)

    def residual(self, p):
        return two_scale_model(self.tau, *self.unpack(p)) - self.y

    def jacobian(self, p):
        c, a1, t1, a2, t2 = self.unpack(p)
        e1, e2 = np.exp(-self.tau / t1), np.exp(-self.tau / t2)
        cols = [e1, a1 * e1 * self.tau / t1, e2, a2 * e2 * self.tau / t2]
        if self.c_fixed is None:
            cols.insert(0, np.ones_like(self.tau))
        return np.column_stack(cols)

    def log_theta_index(self):
        return (2, 4) if self.c_fixed is None else (1, 3)


def _clip_log_theta(p, idx):
    p = p.copy()
    for i in idx:
        p[i] = np.clip(p[i], *LOG_THETA_BOUNDS)
    return p


def _gauss_newton(problem, p0, max_iter=500, xtol=1e-10):
    """Damped Gauss-Newton (Marquardt-scaled) with step halving.

    A step is accepted only if it does not increase the residual sum of
    squares, so the objective is monotone along accepted iterates.
    """
    idx = problem.log_theta_index()
    p = _clip_log_theta(np.asarray(p0, dtype=np.float64), idx)
    r = problem.residual(p)
    rss = float(r @ r)
    history = [rss]
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = problem.jacobian(p)
        JtJ = J.T @ J
        g = J.T @ r
        diag = np.diag(JtJ).copy()
        diag[diag <= 0.0] = 1.0
        accepted = False
        for _ in range(40):
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            t = 1.0
            for _ in range(30):
                cand = _clip_log_theta(p + t * step, idx)
                rc = problem.residual(cand)
                rss_c = float(rc @ rc)
                if np.isfinite(rss_c) and rss_c <= rss:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at any damping: stationary to rounding
            converged = True
            break
        dp = cand - p
        p, r, rss = cand, rc, rss_c
        history.append(rss)
        lam = max(lam / 3.0, 1e-12)
        scale = np.maximum(np.abs(p), 1e-300)
        if np.max(np.abs(dp) / scale) < xtol or rss == 0.0:
            converged = True
            break
    return p, rss, converged, it, tuple(history)


def fit_two_scale(curve, c_inf=None, fit_range=None, theta1_starts=THETA1_STARTS,
                  theta2_starts=THETA2_STARTS, max_iter=500):
    """Least-squares fit of ``c_inf + a1 exp(-tau/theta1) + a2 exp(-tau/theta2)``.

    Parameters
    ----------
    curve : LagCurve
    c_inf : float, optional
        Pinned asymptote; a fifth free parameter when omitted.
    fit_range : (int, int), optional
        Inclusive lag range; the full curve by default.

    The fit runs from every pair of starting timescales, amplitudes set by
    linear least squares, and keeps the lowest residual (ties resolved by
    start order).  Results are ordered so that ``theta1 <= theta2``.
    """
    if fit_range is not None:
        curve = curve.restrict(*fit_range)
    tau = curve.lags.astype(np.float64)
    y = curve.values
    n_par = 4 if c_inf is not None else 5
    if tau.size < max(6, n_par):
        raise UnderdeterminedFitError(f"{tau.size} points for {n_par} parameters (need >= 6)")
    problem = _Problem(tau, y, None if c_inf is None else float(c_inf))
    best = None
    for k, (t1, t2) in enumerate(product(theta1_starts, theta2_starts)):
        coef = _linear_amplitudes(tau, y, t1, t2, problem.c_fixed)
        if problem.c_fixed is None:
            p0 = [coef[0], coef[1], np.log(t1), coef[2], np.log(t2)]
        else:
            p0 = [coef[0], np.log(t1), coef[1], np.log(t2)]
        p, rss, conv, it, hist = _gauss_newton(problem, p0, max_iter=max_iter)
        if best is None or rss < best[1]:
            best = (p, rss, conv, it, hist, k)
    p, rss, conv, it, hist, k = best
    c, a1, t1, a2, t2 = problem.unpack(p)
    if t1 > t2:
        a1, t1, a2, t2 = a2, t2, a1, t1
    return FitResult(float(c), float(a1), float(t1), float(a2), float(t2), float(rss), bool(conv),
                     int(tau.size), c_inf is not None, int(it), int(k), hist)


def decay_horizon(curve, band, max_reentries=0):
    """Largest lag up to which ``curve`` stays outside ``band``.

    ``band`` is a ``(lower, upper)`` pair of per-lag threshold arrays; either
    side may be ``None``.  Up to ``max_reentries`` isolated single-lag
    re-entries are tolerated.  Returns 0 when the first lag is inside.
    """
    lower, upper = band
    v = curve.values
    outside = np.zeros(v.size, dtype=bool)
    for arr, cmp in ((lower, np.less), (upper, np.greater)):
        if arr is None:
            continue
        arr = np.broadcast_to(np.asarray(arr, dtype=np.float64), v.shape) if np.ndim(arr) == 0 \
            else np.asarray(arr, dtype=np.float64)
        if arr.shape != v.shape:
            raise AlignmentError(f"band has {arr.shape[0]} lags, curve has {v.size}")
        outside |= cmp(v, arr)
    horizon, used = 0, 0
    i = 0
    while i < v.size:
        if outside[i]:
            horizon = int(curve.lags[i])
        else:
            isolated = i + 1 < v.size and outside[i + 1]
            if not isolated or used >= max_reentries:
                break
            used += 1
        i += 1
    return horizon


class TwoScaleExponential(RegressorMixin, BaseEstimator):
    """Estimator form of :func:`fit_two_scale`: ``fit(tau, y)`` then ``predict(tau)``."""

    def __init__(self, c_inf=None, fit_range=None):
        self.c_inf = c_inf
        self.fit_range = fit_range

    def fit(self, X, y):
        tau = np.asarray(X, dtype=np.float64).reshape(-1)
        self.result_ = fit_two_scale(LagCurve(tau.astype(np.int64), y), self.c_inf, self.fit_range)
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return self.result_.predict(np.asarray(X, dtype=np.float64).reshape(-1))
