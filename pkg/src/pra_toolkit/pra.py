"""Principal regression analysis of conditional correlation matrices.

The correlation matrix C is the intercept of the pairwise regression of
normalized return products on a lagged conditioning variable, the slope
matrix D(tau) the response.  Both are diagonalized; the top eigenvector of
C (the market mode) is compared with the extreme modes of D and with the
uniform vector.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_lag, check_lag_grid, check_series, check_symmetric
from .exceptions import (
    AlignmentError,
    CollinearityError,
    DegeneracyError,
    DegenerateConditioningError,
    NormalizationError,
)
from .panel import IndexSeries, ReturnsPanel, gaussianize, index_series, normalize

ASCENDING_KINDS = ("D", "D_minus", "D_plus", "E")
GAP_TOL = 1e-6


def resolve_n_jobs(n_jobs=None):
    """Worker count: explicit value, else ``PRA_THREADS``, else 1."""
    if n_jobs is None:
        n_jobs = int(os.environ.get("PRA_THREADS", "1") or 1)
    return max(1, int(n_jobs))


def ordered_map(func, items, n_jobs=None):
    """``map`` with optional threads; output order always follows ``items``."""
    n_jobs = resolve_n_jobs(n_jobs)
    items = list(items)
    if n_jobs == 1 or len(items) < 2:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(func, items))


@dataclass(frozen=True)
class SymmetricMatrixSeries:
    lags: np.ndarray
    matrices: np.ndarray  # (n_lags, N, N)
    kind: str = "D"

    def __post_init__(self):
        for M in self.matrices:
            check_symmetric(M, name=self.kind)

    def at(self, tau):
        (i,) = np.flatnonzero(self.lags == tau)
        return self.matrices[i]


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns aligned with eigenvalues
    kind: str = "C"

    @property
    def top(self):
        return self.eigenvectors[:, 0]


@dataclass(frozen=True)
class PerturbationPrediction:
    eigenvalues: np.ndarray
    top_vector: np.ndarray
    overlap_e: float  # <e|v_1(I)> from the first-order eigenvector sum
    overlap_e_approx: float  # <e|v_1> + I * Delta (dominant top eigenvalue)


def _cond_values(cond):
    if isinstance(cond, IndexSeries):
        return cond.values
    return check_series(cond, name="conditioning series")


def _window(npanel, cond, tau):
    E = npanel.eta_hat
    c = _cond_values(cond)
    if c.size != E.shape[1]:
        raise AlignmentError(f"conditioning series has {c.size} days, panel has {E.shape[1]}")
    tau = check_lag(tau, E.shape[1])
    return E[:, tau:], c[:-tau], c


def _weighted_gram(Ew, weights):
    M = (Ew * weights) @ Ew.T
    return 0.5 * (M + M.T)


def correlation_matrix(npanel):
    """Pearson correlation matrix ``(1/T) sum_t eta_hat(t) eta_hat(t)^T``."""
    E = npanel.eta_hat
    C = E @ E.T / E.shape[1]
    return 0.5 * (C + C.T)


def regression_matrix(npanel, cond, tau, exact_ols=False):
    """Slope matrix of return products on ``cond(t - tau)``.

    The default is the raw-moment estimator
    ``D = sum_{t>tau} eta eta^T cond(t-tau) / ((T - tau) <cond^2>)`` with the
    second moment over the full sample.  ``exact_ols=True`` demeans the
    regressor over the window, giving the per-pair OLS slope with intercept;
    the two differ by O(1/T) when ``cond`` has zero full-sample mean.
    """
    Ew, x, c = _window(npanel, cond, tau)
    if exact_ols:
        xc = x - x.mean()
        denom = float(xc @ xc)
        if denom <= 0.0:
            raise DegenerateConditioningError("conditioning series is constant over the window")
        return _weighted_gram(Ew, xc) / denom
    c2 = float(np.mean(c**2))
    if c2 <= 0.0:
        raise DegenerateConditioningError("conditioning series has zero second moment")
    return _weighted_gram(Ew, x) / (x.size * c2)


def regression_residual_variance(npanel, cond, tau):
    """Residual variance of each pairwise OLS regression (diagnostic only)."""
    Ew, x, _ = _window(npanel, cond, tau)
    n = x.size
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 0.0 or n <= 2:
        raise DegenerateConditioningError("conditioning series is constant over the window")
    sq = Ew**2
    sum_y2 = sq @ sq.T
    mean_y = Ew @ Ew.T / n
    slope = _weighted_gram(Ew, xc) / sxx
    return (sum_y2 - n * mean_y**2 - slope**2 * sxx) / (n - 2)


def _subsample_slope(Ew, x, mask, label):
    if mask.sum() < 2:
        raise DegenerateConditioningError(f"no {label} conditioning values in the window")
    xs = x[mask] - x[mask].mean()
    denom = float(xs @ xs)
    if denom <= 0.0:
        raise DegenerateConditioningError(f"{label} conditioning values are constant")
    return _weighted_gram(Ew[:, mask], xs) / denom


def sign_split_matrices(npanel, cond, tau):
    """Slopes restricted to negative and to positive lagged conditioning days.

    Returns ``(D_minus, D_plus)``.  Each is a per-pair OLS slope on the
    sign-restricted subsample, the regressor demeaned within that subsample.
    """
    Ew, x, _ = _window(npanel, cond, tau)
    return (
        _subsample_slope(Ew, x, x < 0, "negative"),
        _subsample_slope(Ew, x, x > 0, "positive"),
    )


def quadratic_matrix(npanel, cond, tau, rcond=1e-10):
    """Joint slopes on ``cond(t-tau)`` and ``cond(t-tau)^2 - <cond^2>``.

    Per-pair least squares with intercept and two regressors.  Returns
    ``(D, E)``.
    """
    Ew, x, c = _window(npanel, cond, tau)
    z1 = x - x.mean()
    sq = x**2 - np.mean(c**2)
    z2 = sq - sq.mean()
    g11, g12, g22 = float(z1 @ z1), float(z1 @ z2), float(z2 @ z2)
    det = g11 * g22 - g12 * g12
    if g11 <= 0.0 or g22 <= 0.0 or det <= rcond * g11 * g22:
        raise CollinearityError("regressors {cond, cond^2} are collinear over the window")
    A1 = _weighted_gram(Ew, z1)
    A2 = _weighted_gram(Ew, z2)
    D = (g22 * A1 - g12 * A2) / det
    E = (g11 * A2 - g12 * A1) / det
    return 0.5 * (D + D.T), 0.5 * (E + E.T)


def _fix_signs(V, tol=1e-12):
    n = V.shape[0]
    proj = V.sum(axis=0) / np.sqrt(n)
    signs = np.sign(proj)
    for j in np.flatnonzero(np.abs(proj) <= tol):
        nz = np.flatnonzero(np.abs(V[:, j]) > tol)
        signs[j] = np.sign(V[nz[0], j]) if nz.size else 1.0
    signs[signs == 0] = 1.0
    return V * signs


def eig_symmetric(M, kind="C"):
    """Full eigendecomposition with a deterministic order and sign convention.

    ``kind="C"`` sorts eigenvalues descending; the slope kinds
    (``D``, ``D_minus``, ``D_plus``, ``E``) sort ascending so the first mode
    is the most negative one.  Each eigenvector is oriented so that its
    projection on the uniform vector is nonnegative, falling back to a
    positive first nonzero component when that projection vanishes.
    """
    M = check_symmetric(M, name=kind)
    w, V = np.linalg.eigh(M)
    if kind not in ASCENDING_KINDS:
        w, V = w[::-1], V[:, ::-1]
    return EigenDecomposition(np.ascontiguousarray(w), _fix_signs(np.ascontiguousarray(V)), kind)


def uniform_vector(n):
    return np.full(n, 1.0 / np.sqrt(n))


def mode_overlap(w, v, tol=1e-8):
    """Absolute scalar product of two unit vectors."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for name, x in (("w", w), ("v", v)):
        if abs(np.linalg.norm(x) - 1.0) > tol:
            raise NormalizationError(f"{name} is not a unit vector")
    return float(min(1.0, abs(w @ v)))


def _top_mode(C_eig):
    lam1 = float(C_eig.eigenvalues[0])
    if not lam1 > 0.0:
        raise DegeneracyError(f"top eigenvalue {lam1} is not positive")
    return lam1, C_eig.eigenvectors[:, 0]


def rotation_delta(D, C_eig):
    """First-order rotation of the market mode towards the uniform vector.

    ``Delta = (<e|D|v1> - <v1|D|v1><e|v1>) / lambda_1``, evaluated as
    ``<e|r> / lambda_1`` with ``r = D v1 - <v1|D|v1> v1``.  When ``r`` is at
    rounding level (v1 is an eigenvector of D, e.g. D commutes with C) the
    result is exactly 0.
    """
    lam1, v1 = _top_mode(C_eig)
    D = np.asarray(D, dtype=np.float64)
    Dv = D @ v1
    r = Dv - (v1 @ Dv) * v1
    floor = 64 * np.finfo(float).eps * D.shape[0] * max(float(np.max(np.abs(D), initial=0.0)), 1e-300)
    if np.max(np.abs(r), initial=0.0) <= floor:
        return 0.0
    return float(uniform_vector(D.shape[0]) @ r) / lam1


def perturbation_predict(C_eig, D, I, gap_tol=GAP_TOL):
    """First-order prediction of the spectrum of ``C + I D``.

    Eigenvalues shift by ``I <v_k|D|v_k>``; the top eigenvector picks up
    ``I sum_{l != 1} <v_l|D|v_1> / (lambda_1 - lambda_l) |v_l>``.  The
    overlap with the uniform vector is reported both from that vector and
    from the dominant-eigenvalue shortcut ``<e|v_1> + I Delta``.
    """
    lam, V = C_eig.eigenvalues, C_eig.eigenvectors
    scale = max(float(np.max(np.abs(lam))), 1e-300)
    gaps = np.abs(lam[0] - lam[1:]) / scale
    if gaps.size and gaps.min() < gap_tol:
        raise DegeneracyError(f"relative eigenvalue gap {gaps.min():.3g} below {gap_tol:g}")
    D = check_symmetric(D, tol=1e-10, name="D")
    Dk = V.T @ D @ V
    eigenvalues = lam + I * np.diag(Dk)
    coeff = np.zeros(lam.size)
    coeff[1:] = Dk[1:, 0] / (lam[0] - lam[1:])
    top = V[:, 0] + I * (V @ coeff)
    e = uniform_vector(lam.size)
    overlap = float(e @ top)
    approx = float(e @ V[:, 0]) + I * rotation_delta(D, C_eig)
    return PerturbationPrediction(eigenvalues, top, overlap, approx)


def _extremes(eig, n_modes):
    lo = eig.eigenvalues[:n_modes]
    hi = eig.eigenvalues[::-1][:n_modes]
    return lo, hi


def analyze_lag(npanel, cond, tau, C_eig, *, n_modes=3, split_sign=False, quadratic=False,
                exact_ols=False, keep_matrices=False):
    """Per-lag summary record (eigenvalues, overlaps, rotation parameters)."""
    v1 = C_eig.eigenvectors[:, 0]
    D = regression_matrix(npanel, cond, tau, exact_ols=exact_ols)
    eig = eig_symmetric(D, "D")
    lo, hi = _extremes(eig, n_modes)
    rec = {"tau": int(tau)}
    for k in range(n_modes):
        rec[f"mu_{k + 1}"] = float(lo[k])
    for k in range(n_modes):
        rec[f"mu_top_{k + 1}"] = float(hi[k])
    rec["S"] = mode_overlap(eig.eigenvectors[:, 0], v1)
    rec["delta"] = rotation_delta(D, C_eig)
    mats = {"D": D}
    if split_sign:
        Dm, Dp = sign_split_matrices(npanel, cond, tau)
        em, ep = eig_symmetric(Dm, "D_minus"), eig_symmetric(Dp, "D_plus")
        lo_m, _ = _extremes(em, n_modes)
        _, hi_p = _extremes(ep, n_modes)
        for k in range(n_modes):
            rec[f"mu_minus_{k + 1}"] = float(lo_m[k])
        for k in range(n_modes):
            rec[f"mu_plus_{k + 1}"] = float(hi_p[k])
        rec["S_minus"] = mode_overlap(em.eigenvectors[:, 0], v1)
        rec["S_plus"] = mode_overlap(ep.eigenvectors[:, -1], v1)
        rec["delta_minus"] = rotation_delta(Dm, C_eig)
        rec["delta_plus"] = rotation_delta(Dp, C_eig)
        mats["D_minus"], mats["D_plus"] = Dm, Dp
    if quadratic:
        Dj, E = quadratic_matrix(npanel, cond, tau)
        ee = eig_symmetric(E, "E")
        lo_e, hi_e = _extremes(ee, n_modes)
        rec["e_min_1"] = float(lo_e[0])
        rec["e_max_1"] = float(hi_e[0])
        rec["S_E"] = mode_overlap(ee.eigenvectors[:, 0], v1)
        mats["D_joint"], mats["E"] = Dj, E
    return rec, (mats if keep_matrices else None)


def conditioning_series(npanel, conditioning="gaussianized"):
    idx = index_series(npanel)
    if conditioning == "gaussianized":
        return gaussianize(idx.values)
    if conditioning == "raw":
        return idx.values
    raise ValueError(f"conditioning must be 'raw' or 'gaussianized', got {conditioning!r}")


class PrincipalRegressionAnalysis(BaseEstimator):
    """Principal regression analysis of a return panel.

    Parameters
    ----------
    lags : int or sequence of int, default=250
        Lag grid; an integer ``m`` means ``1..m``.
    conditioning : {"gaussianized", "raw"}
        Index series used as the lagged regressor.
    split_sign : bool
        Also estimate the sign-restricted matrices ``D_minus`` and ``D_plus``.
    quadratic : bool
        Also estimate the joint linear/quadratic matrices ``(D, E)``.
    exact_ols : bool
        Demean the regressor within each lag window.
    n_modes : int
        Number of extreme eigenvalues reported per matrix.
    keep_matrices : bool
        Store the full matrices (memory ``n_lags * N^2`` per kind).
    n_jobs : int, optional
        Threads across lags; defaults to ``PRA_THREADS`` or 1.  Results do not
        depend on it.

    Attributes
    ----------
    correlation_ : ndarray (N, N)
    correlation_eig_ : EigenDecomposition
    lags_ : ndarray
    records_ : list of dict
        One summary per lag (``mu_1..``, ``S``, ``delta`` and, when enabled,
        the sign-split and quadratic summaries).
    matrices_ : dict of SymmetricMatrixSeries, only with ``keep_matrices``
    """

    def __init__(self, lags=250, conditioning="gaussianized", split_sign=False, quadratic=False,
                 exact_ols=False, n_modes=3, keep_matrices=False, n_jobs=None):
        self.lags = lags
        self.conditioning = conditioning
        self.split_sign = split_sign
        self.quadratic = quadratic
        self.exact_ols = exact_ols
        self.n_modes = n_modes
        self.keep_matrices = keep_matrices
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        return self.fit_normalized(normalize(ReturnsPanel.from_array(X.T)))

    def fit_normalized(self, npanel):
        """Fit directly on a :class:`NormalizedPanel` (stocks x days)."""
        T = npanel.n_days
        lags = np.arange(1, int(self.lags) + 1) if np.isscalar(self.lags) else self.lags
        self.lags_ = check_lag_grid(lags, T)
        self.cond_ = conditioning_series(npanel, self.conditioning)
        self.correlation_ = correlation_matrix(npanel)
        self.correlation_eig_ = eig_symmetric(self.correlation_, "C")
        n_modes = min(self.n_modes, npanel.n_stocks)

        def one(tau):
            return analyze_lag(
                npanel, self.cond_, tau, self.correlation_eig_, n_modes=n_modes,
                split_sign=self.split_sign, quadratic=self.quadratic,
                exact_ols=self.exact_ols, keep_matrices=self.keep_matrices,
            )

        out = ordered_map(one, self.lags_, self.n_jobs)
        self.records_ = [rec for rec, _ in out]
        if self.keep_matrices:
            kinds = out[0][1].keys()
            self.matrices_ = {
                k: SymmetricMatrixSeries(self.lags_, np.stack([m[k] for _, m in out]),
                                         "D" if k == "D_joint" else k)
                for k in kinds
            }
        self.n_features_in_ = npanel.n_stocks
        self.n_days_ = T
        return self

    def curve(self, key):
        """Per-lag values of one record field, e.g. ``"mu_1"`` or ``"S"``."""
        check_is_fitted(self, "records_")
        return np.array([r[key] for r in self.records_])

    def predict_correlation(self, index_value, tau):
        """Conditional correlation matrix ``C + I D(tau)`` (needs ``keep_matrices``)."""
        check_is_fitted(self, "matrices_")
        return self.correlation_ + index_value * self.matrices_["D"].at(tau)
