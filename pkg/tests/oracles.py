"""Independent brute-force reference computations.

Written with explicit loops and textbook formulas, sharing no code with the
package, so agreement with the vectorized implementation is meaningful.
"""

import math

import numpy as np


def pearson(x, y):
    mx, my = sum(x) / len(x), sum(y) / len(y)
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def normalize_rows(X):
    out = []
    for row in X:
        m = sum(row) / len(row)
        s = math.sqrt(sum((v - m) ** 2 for v in row) / len(row))
        out.append([(v - m) / s for v in row])
    return np.array(out)


def ols_slope(x, y, intercept=True):
    """Slope of y on x by solving the normal equations with numpy.linalg.lstsq."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.column_stack([x, np.ones_like(x)]) if intercept else x[:, None]
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef[0]


def raw_moment_D(E, cond, tau):
    """Per-entry loop over the raw-moment regression estimator."""
    N, T = E.shape
    c2 = sum(c * c for c in cond) / T
    D = np.zeros((N, N))
    for a in range(N):
        for b in range(N):
            s = 0.0
            for t in range(tau, T):
                s += E[a, t] * E[b, t] * cond[t - tau]
            D[a, b] = s / ((T - tau) * c2)
    return D


def pairwise_slope_matrix(E, x_lagged, tau, mask=None):
    """Per-pair OLS (with intercept) of eta_a eta_b (t) on x(t - tau)."""
    N, T = E.shape
    x = np.asarray(x_lagged[: T - tau], dtype=float)
    idx = np.arange(T - tau) if mask is None else np.flatnonzero(mask(x))
    D = np.zeros((N, N))
    for a in range(N):
        for b in range(N):
            y = E[a, tau:] * E[b, tau:]
            D[a, b] = ols_slope(x[idx], y[idx])
    return D


def pairwise_two_regressor(E, cond, tau):
    """Per-pair OLS of products on [1, x, x^2 - <cond^2>] over the window."""
    N, T = E.shape
    x = np.asarray(cond[: T - tau], dtype=float)
    m2 = float(np.mean(np.asarray(cond) ** 2))
    A = np.column_stack([np.ones_like(x), x, x**2 - m2])
    D = np.zeros((N, N))
    Eq = np.zeros((N, N))
    for a in range(N):
        for b in range(N):
            y = E[a, tau:] * E[b, tau:]
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            D[a, b], Eq[a, b] = coef[1], coef[2]
    return D, Eq


def ks_distance(samples, cdf):
    s = np.sort(samples)
    n = s.size
    F = cdf(s)
    return max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
