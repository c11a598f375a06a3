"""Null-hypothesis benchmarks for the regression matrices.

Monte-Carlo ensembles regress the real normalized returns on conditioning
variables drawn independently of them.  For an identity correlation matrix
the limiting eigenvalue density of the null slope matrix solves a pair of
fixed-point equations in the real part of the resolvent and the density;
:func:`rmt_identity_spectrum` solves them on a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_symmetric
from .exceptions import ConvergenceError, FormulaDomainError, QuantileError
from .pra import (
    _subsample_slope,
    _window,
    correlation_matrix,
    eig_symmetric,
    mode_overlap,
    ordered_map,
    regression_matrix,
    rotation_delta,
    uniform_vector,
)

XI_LAWS = ("gauss", "neg-part", "pos-part", "permute")
QUANTILE_LEVELS = (0.01, 0.05, 0.95, 0.99)
_HALF_MEAN = 1.0 / math.sqrt(2.0 * math.pi)  # E[max(xi, 0)] for standard normal xi


def sample_rng(seed, index):
    """Independent generator for sample ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),)))


def draw_xi(law, rng, n, cond=None):
    """Draw ``n`` conditioning values from a named null law."""
    if law == "gauss":
        return rng.standard_normal(n)
    if law == "neg-part":
        return np.minimum(rng.standard_normal(n), 0.0) + _HALF_MEAN
    if law == "pos-part":
        return np.maximum(rng.standard_normal(n), 0.0) - _HALF_MEAN
    if law == "permute":
        if cond is None:
            raise ValueError("the permutation null needs the observed conditioning series")
        return rng.permutation(np.asarray(cond, dtype=np.float64))
    raise ValueError(f"unknown xi law {law!r}; expected one of {XI_LAWS}")


@dataclass(frozen=True)
class NullEnsembleStats:
    ranked_means: np.ndarray
    ranked_quantiles: dict
    overlap_samples: np.ndarray
    delta_samples: np.ndarray
    n_samples: int
    seed: int
    xi_law: str = "gauss"
    estimator: str = "regression"
    tau: int = 1
    n_days: int = 0
    eigenvalues: np.ndarray = field(default=None, repr=False)  # (n_samples, N), ascending

    @property
    def delta_rms(self):
        return float(np.sqrt(np.mean(self.delta_samples**2)))

    def to_dict(self):
        return {
            "xi_law": self.xi_law,
            "estimator": self.estimator,
            "tau": self.tau,
            "n_days": self.n_days,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "ranked_means": self.ranked_means.tolist(),
            "ranked_quantiles": {f"{q:g}": v.tolist() for q, v in self.ranked_quantiles.items()},
            "overlap_mean": float(self.overlap_samples.mean()),
            "overlap_samples": self.overlap_samples.tolist(),
            "delta_mean": float(self.delta_samples.mean()),
            "delta_rms": self.delta_rms,
            "delta_samples": self.delta_samples.tolist(),
        }


def _null_matrix(npanel, xi, tau, law, estimator):
    if estimator == "regression":
        return regression_matrix(npanel, xi, tau)
    # sign-split: Gaussian xi through the same subsample estimator as D-/D+
    Ew, x, _ = _window(npanel, xi, tau)
    if law == "neg-part":
        return _subsample_slope(Ew, x, x < 0, "negative")
    return _subsample_slope(Ew, x, x > 0, "positive")


def null_ensemble(npanel, xi_law="gauss", n_samples=1000, seed=0, tau=1, estimator="regression",
                  cond=None, C_eig=None, n_jobs=None, center=True):
    """Ranked-eigenvalue statistics of null slope matrices.

    Parameters
    ----------
    npanel : NormalizedPanel
        Real (or synthetic) normalized returns; only the conditioning
        variable is randomized.
    xi_law : {"gauss", "neg-part", "pos-part", "permute"}
        Null conditioning law.  The two part laws are the centered negative
        and positive parts of a standard normal variable.  ``"permute"``
        shuffles ``cond``.
    estimator : {"regression", "sign-split"}
        ``"regression"`` applies the raw-moment slope estimator to the drawn
        series.  ``"sign-split"`` (part laws only) draws a standard normal
        series and applies the sign-restricted estimator, returning the
        branch matching the law; this is the null that matches
        :func:`~pra_toolkit.pra.sign_split_matrices`.
    tau : int
        Lag whose window length the null reproduces.
    center : bool
        Subtract each drawn series' full-sample mean before the regression
        estimator.  The observed conditioning series has zero sample mean,
        while an iid draw has mean of order ``1/sqrt(T)``; through the
        raw-moment estimator that mean adds ``mean(xi) C`` to the null matrix
        and inflates the extreme eigenvalues by about ``lambda_1 / sqrt(T)``.

    Notes
    -----
    Sample ``i`` uses a generator derived from ``(seed, i)`` only, so results
    do not depend on ``n_jobs``.  Overlaps use the most positive eigenvector
    for ``pos-part``, the most negative one otherwise.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if estimator not in ("regression", "sign-split"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if estimator == "sign-split" and xi_law not in ("neg-part", "pos-part"):
        raise ValueError("the sign-split estimator needs xi_law 'neg-part' or 'pos-part'")
    if C_eig is None:
        C_eig = eig_symmetric(correlation_matrix(npanel), "C")
    v1 = C_eig.eigenvectors[:, 0]
    T = npanel.n_days
    use_top = xi_law == "pos-part"

    def one(i):
        rng = sample_rng(seed, i)
        law = "gauss" if estimator == "sign-split" else xi_law
        xi = draw_xi(law, rng, T, cond)
        if center and estimator == "regression":
            xi = xi - xi.mean()
        D = _null_matrix(npanel, xi, tau, xi_law, estimator)
        eig = eig_symmetric(D, "D")
        w = eig.eigenvectors[:, -1] if use_top else eig.eigenvectors[:, 0]
        return eig.eigenvalues, mode_overlap(w, v1), rotation_delta(D, C_eig)

    out = ordered_map(one, range(n_samples), n_jobs)
    ev = np.stack([o[0] for o in out])
    return NullEnsembleStats(
        ranked_means=ev.mean(axis=0),
        ranked_quantiles={q: np.quantile(ev, q, axis=0) for q in QUANTILE_LEVELS},
        overlap_samples=np.array([o[1] for o in out]),
        delta_samples=np.array([o[2] for o in out]),
        n_samples=int(n_samples),
        seed=int(seed),
        xi_law=xi_law,
        estimator=estimator,
        tau=int(tau),
        n_days=int(T),
        eigenvalues=ev,
    )


@dataclass(frozen=True)
class SignificanceBand:
    lower: np.ndarray  # (n_lags, N) or (N,)
    upper: np.ndarray
    level: float

    def flags(self, ranked_values, rank, side="both"):
        """Boolean per-lag flags for the eigenvalue at 0-based ``rank``.

        ``side="lower"`` flags values below the band, ``"upper"`` above it.
        """
        v = np.asarray(ranked_values, dtype=np.float64)
        lo, hi = self.lower[..., rank], self.upper[..., rank]
        if side == "lower":
            return v < lo
        if side == "upper":
            return v > hi
        return (v < lo) | (v > hi)


def significance_bands(stats, level, lags=None):
    """Per-rank ``(q_level, q_{1-level})`` null thresholds.

    With ``lags`` the band is rescaled to each lag's window: the null noise
    scales as ``1 / sqrt(T - tau)``, so thresholds estimated at the null's
    own lag ``tau0`` are multiplied by ``sqrt((T - tau0) / (T - tau))``.
    """
    if not 0.0 < level <= 0.5:
        raise QuantileError(f"level must lie in (0, 0.5], got {level}")
    if stats.eigenvalues is None or stats.n_samples * level < 5:
        raise QuantileError(
            f"{stats.n_samples} samples cannot resolve the {level:g} quantile (need n*level >= 5)"
        )
    lower = np.quantile(stats.eigenvalues, level, axis=0)
    upper = np.quantile(stats.eigenvalues, 1.0 - level, axis=0)
    if lags is not None:
        lags = np.asarray(lags)
        scale = np.sqrt((stats.n_days - stats.tau) / (stats.n_days - lags))[:, None]
        lower, upper = lower[None, :] * scale, upper[None, :] * scale
    return SignificanceBand(lower, upper, level)


def delta_variance_analytic(C, C_eig, T, xi_second_moment=1.0):
    """Null variance of the rotation parameter for Gaussian returns with correlation C.

    ``(<e|C|e> - lambda_1 <e|v1>^2) / (T lambda_1 <xi^2>)``.  The numerator
    equals ``sum_{l>1} lambda_l <e|v_l>^2`` and is nonnegative for positive
    semi-definite C; a value below -1e-12 signals an invalid input.
    """
    C = check_symmetric(C, tol=1e-10, name="C")
    lam1 = float(C_eig.eigenvalues[0])
    if not lam1 > 0.0:
        raise FormulaDomainError("top eigenvalue must be positive")
    e = uniform_vector(C.shape[0])
    a = float(e @ C_eig.eigenvectors[:, 0])
    var = (float(e @ C @ e) - lam1 * a * a) / (T * lam1 * xi_second_moment)
    if var < -1e-12:
        raise FormulaDomainError(f"negative variance {var:.3g}; is C positive semi-definite?")
    return max(var, 0.0)


def simulate_delta_null(C, T, n_samples, seed=0, xi_law="gauss", batch=500):
    """Monte-Carlo rotation parameters with fresh Gaussian returns and fresh xi per draw.

    Each draw builds ``T`` return vectors with correlation ``C``, an
    independent conditioning series, the null slope matrix with the
    raw-moment estimator at zero lag, and its rotation parameter against the
    top eigenvector of ``C``.
    """
    C = check_symmetric(C, tol=1e-10, name="C")
    C_eig = eig_symmetric(C, "C")
    lam, V = np.linalg.eigh(C)
    root = V * np.sqrt(np.clip(lam, 0.0, None))  # C = root @ root.T
    n = C.shape[0]
    lam1 = float(C_eig.eigenvalues[0])
    v1 = C_eig.eigenvectors[:, 0]
    e = uniform_vector(n)
    ev1 = float(e @ v1)
    out = np.empty(n_samples)
    for start in range(0, n_samples, batch):
        stop = min(start + batch, n_samples)
        rng = sample_rng(seed, start)
        m = stop - start
        X = rng.standard_normal((m, T, n)) @ root.T
        xi = draw_xi(xi_law, rng, m * T).reshape(m, T)
        xi2 = np.mean(xi**2, axis=1)
        D = np.einsum("sti,st,stj->sij", X, xi, X) / (T * xi2)[:, None, None]
        Dv = D @ v1
        out[start:stop] = (Dv @ e - (Dv @ v1) * ev1) / lam1
    return out


# --- identity-C spectrum -----------------------------------------------------------


@dataclass(frozen=True)
class XiQuadrature:
    """Discrete representation ``sum_j w_j f(x_j)`` of a conditioning law."""

    nodes: np.ndarray
    weights: np.ndarray
    name: str = "custom"

    @property
    def mean(self):
        return float(self.weights @ self.nodes)

    @property
    def second_moment(self):
        return float(self.weights @ self.nodes**2)


def xi_quadrature(law, n_nodes=96):
    """Quadrature rule for a named law, or exact atoms for a discrete one.

    ``law`` may be ``"gauss"`` (Gauss-Hermite), ``"neg-part"`` / ``"pos-part"``
    (an atom for the clipped half plus Gauss-Legendre over the other half),
    a ``(values, probabilities)`` pair, or an :class:`XiQuadrature`.
    """
    if isinstance(law, XiQuadrature):
        return law
    if isinstance(law, tuple):
        x, p = (np.asarray(a, dtype=np.float64) for a in law)
        return XiQuadrature(x, p / p.sum(), "discrete")
    if law == "gauss":
        x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
        return XiQuadrature(x, w / w.sum(), law)
    if law in ("neg-part", "pos-part"):
        y, w = np.polynomial.legendre.leggauss(n_nodes)
        upper = 12.0
        y = 0.5 * upper * (y + 1.0)
        w = 0.5 * upper * w * np.exp(-0.5 * y**2) / math.sqrt(2.0 * math.pi)
        nodes = np.concatenate([[0.0], y])
        weights = np.concatenate([[0.5], w])
        weights = weights / weights.sum()
        part = nodes if law == "pos-part" else -nodes
        return XiQuadrature(part - weights @ part, weights, law)
    raise ValueError(f"no quadrature for xi law {law!r}")


@dataclass(frozen=True)
class RMTSpectrum:
    mu_grid: np.ndarray
    density: np.ndarray
    g_real: np.ndarray
    q: float
    epsilon: float
    xi_law: str
    iterations: np.ndarray = field(default=None, repr=False)

    def cdf(self, x=None):
        """Cumulative trapezoidal integral of the density, optionally interpolated at ``x``."""
        mu, rho = self.mu_grid, self.density
        c = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(mu))])
        if x is None:
            return c
        return np.interp(x, mu, c, left=0.0, right=c[-1])

    def mass(self):
        return float(self.cdf()[-1])

    def quantile(self, p):
        c = self.cdf()
        return float(np.interp(p * c[-1], c, self.mu_grid))


def spectral_residuals(mu, g_real, density, q, quad, epsilon):
    """Residuals of the real fixed-point equations for (G_R, rho) at ``mu + i epsilon``.

    With ``G = G_R - i pi rho`` the resolvent satisfies ``z = 1/G + S(G)``,
    ``S(G) = <xi / (1 - q xi G)>``.  Returned are the real-part residual and
    the imaginary-part residual; both vanish at a solution.
    """
    x, w = quad.nodes, quad.weights
    mod2 = g_real**2 + (math.pi * density) ** 2
    a = 1.0 - q * x * g_real
    b = q * math.pi * x * density
    den = a * a + b * b
    r1 = mu - (g_real / mod2 + np.sum(w * x * a / den))
    r2 = epsilon - math.pi * density * (1.0 / mod2 - np.sum(w * q * x * x / den))
    return r1, r2


def _stieltjes_map(G, z, q, x, w):
    d = 1.0 - q * x * G
    S = np.sum(w * x / d)
    dS = np.sum(w * q * x * x / (d * d))
    return S, dS


def _solve_point(z, q, x, w, G0, tol, max_iter, damping):
    """Newton on ``G (z - S(G)) = 1``, falling back to damped fixed-point iteration."""
    G = G0
    for it in range(1, 60):
        S, dS = _stieltjes_map(G, z, q, x, w)
        F = G * (z - S) - 1.0
        dF = (z - S) - G * dS
        step = F / dF
        G_new = G - step
        # stay on the physical sheet (Im G <= 0 for Im z > 0)
        while G_new.imag > 0.0 and abs(step) > tol:
            step *= 0.5
            G_new = G - step
        if abs(G_new - G) < tol * max(1.0, abs(G)):
            return G_new, it
        G = G_new
    G = G0
    for it in range(1, max_iter + 1):
        S, _ = _stieltjes_map(G, z, q, x, w)
        G_new = (1.0 - damping) * G + damping / (z - S)
        if abs(G_new - G) < tol * max(1.0, abs(G)):
            return G_new, it
        G = G_new
    raise ConvergenceError(
        f"resolvent iteration did not converge at mu={z.real:.6g}",
        {"mu": z.real, "epsilon": z.imag, "last_step": abs(G_new - G), "G": G},
    )


def _solve_grid(mu_grid, q, quad, epsilon, tol, max_iter, damping):
    x, w = quad.nodes, quad.weights
    G = np.empty(mu_grid.size, dtype=np.complex128)
    iters = np.empty(mu_grid.size, dtype=np.int64)
    # seed the continuation far to the left of the grid, where G ~ 1/z
    span = mu_grid[-1] - mu_grid[0]
    z_far = complex(mu_grid[0] - 4.0 * span - 1.0, epsilon)
    g_prev = 1.0 / z_far
    for mu_seed in np.linspace(z_far.real, mu_grid[0], 64):
        g_prev, _ = _solve_point(complex(mu_seed, epsilon), q, x, w, g_prev, tol, max_iter, damping)
    for i, mu in enumerate(mu_grid):
        g_prev, iters[i] = _solve_point(complex(mu, epsilon), q, x, w, g_prev, tol, max_iter, damping)
        G[i] = g_prev
    return G, iters


def rmt_identity_spectrum(q, xi_law="gauss", mu_grid=None, epsilon=1e-3, *, n_nodes=96,
                          tol=1e-10, max_iter=10_000, damping=0.5, extrapolate=True):
    """Limiting eigenvalue density of the null slope matrix for C = identity.

    Parameters
    ----------
    q : float
        Aspect ratio ``N / T`` in (0, 1).
    xi_law : str, tuple or XiQuadrature
        Conditioning law; it must have zero mean.  The slope matrix is
        normalized by ``<xi^2>``, which is folded into the nodes.
    mu_grid : array-like
        Increasing abscissae; defaults to 600 points on [-15, 15].
    epsilon : float
        Imaginary regularization.  With ``extrapolate`` the system is solved
        at ``epsilon`` and ``epsilon / 2`` and linearly extrapolated to zero.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    quad = xi_quadrature(xi_law, n_nodes)
    if abs(quad.mean) > 1e-10 * max(1.0, math.sqrt(quad.second_moment)):
        raise ValueError(f"xi law must have zero mean, has {quad.mean:.3g}")
    quad = XiQuadrature(quad.nodes / quad.second_moment, quad.weights, quad.name)
    mu_grid = np.linspace(-15.0, 15.0, 600) if mu_grid is None else np.asarray(mu_grid, dtype=np.float64)
    if mu_grid.ndim != 1 or mu_grid.size < 2 or np.any(np.diff(mu_grid) <= 0):
        raise ValueError("mu_grid must be strictly increasing with at least 2 points")

    G1, it1 = _solve_grid(mu_grid, q, quad, epsilon, tol, max_iter, damping)
    if extrapolate:
        G2, it2 = _solve_grid(mu_grid, q, quad, 0.5 * epsilon, tol, max_iter, damping)
        G = 2.0 * G2 - G1
        iters = np.maximum(it1, it2)
    else:
        G, iters = G1, it1
    density = -G.imag / math.pi
    if density.min() < -1e-8:
        raise ConvergenceError(
            f"negative density {density.min():.3g} after extrapolation",
            {"mu": float(mu_grid[np.argmin(density)])},
        )
    name = xi_law if isinstance(xi_law, str) else quad.name
    return RMTSpectrum(mu_grid, np.clip(density, 0.0, None), G.real, float(q), float(epsilon),
                       name, iters)


def identity_null_eigenvalues(n_stocks, n_days, n_samples, seed=0, xi_law="gauss"):
    """Eigenvalues of null slope matrices for iid standard normal returns (C = identity)."""
    out = []
    for i in range(n_samples):
        rng = sample_rng(seed, i)
        X = rng.standard_normal((n_stocks, n_days))
        xi = draw_xi(xi_law, rng, n_days)
        D = (X * xi) @ X.T / (n_days * np.mean(xi**2))
        out.append(np.linalg.eigvalsh(0.5 * (D + D.T)))
    return np.concatenate(out)
