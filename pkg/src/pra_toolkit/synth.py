"""Synthetic return panels with planted conditional-correlation dynamics.

One-factor construction with a time-varying loading::

    rho_t = clip(rho0 + g_minus K_t^- + g_plus K_t^+, 0, 0.99)
    eta_a(t) = v_t [sqrt(rho_t) f(t) + sqrt(s_t) b_a g_{sec(a)}(t)
                    + sqrt(1 - rho_t - s_t b_a^2) eps_a(t)]

``K_t^-`` and ``K_t^+`` are exponentially weighted sums of the past centered
negative and positive parts of the standardized index innovations, mixed over
a short and a long memory.  The optional sector term ``s_t`` follows the same
kernels with its own sensitivities (``b_a`` is 1 inside a sector, 0 for the
market-only remainder).  The volatility factor is ``v_t = exp(vol_leverage K_t^-)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from datetime import date

import numpy as np
from scipy.signal import lfilter

from .exceptions import DimensionalityError, MatrixDomainError
from .panel import ReturnsPanel

RHO_MAX = 0.99
_HALF_MEAN = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SynthSpec:
    n_stocks: int = 100
    n_days: int = 4000
    rho0: float = 0.3
    g_minus: float = 0.0
    g_plus: float = 0.0
    memory_short: float = 20.0
    memory_long: float = 250.0
    weight_long: float = 0.5
    vol_leverage: float = 0.0
    seed: int = 0
    n_sectors: int = 0
    sector_rho0: float = 0.0
    sector_g_minus: float = 0.0
    sector_g_plus: float = 0.0
    burn_in: int | None = None

    def __post_init__(self):
        if self.n_stocks < 2 or self.n_days < 1:
            raise DimensionalityError("need n_stocks >= 2 and n_days >= 1")
        if not 0.0 <= self.rho0 < 1.0:
            raise ValueError(f"rho0 must lie in [0, 1), got {self.rho0}")
        if self.memory_short <= 0 or self.memory_long <= 0:
            raise ValueError("memory scales must be positive")
        if not 0.0 <= self.weight_long <= 1.0:
            raise ValueError("weight_long must lie in [0, 1]")
        if self.n_sectors < 0 or (self.n_sectors and self.n_stocks < 2 * (self.n_sectors + 1)):
            raise ValueError("each sector and the remainder need at least 2 stocks")
        if not 0.0 <= self.sector_rho0 < 1.0 - self.rho0:
            if self.n_sectors:
                raise ValueError("sector_rho0 must lie in [0, 1 - rho0)")

    def to_dict(self):
        return asdict(self)


def ew_past(u, theta):
    """``(1 - a) sum_{s >= 1} a^(s-1) u(t - s)`` with ``a = exp(-1/theta)``."""
    a = math.exp(-1.0 / theta)
    return lfilter([0.0, 1.0 - a], [1.0, -a], u)


def memory_kernel(tau, memory_short, memory_long, weight_long):
    """Weight of the innovation ``tau`` days back in ``K_t``."""
    tau = np.asarray(tau, dtype=np.float64)
    out = 0.0
    for w, th in ((1.0 - weight_long, memory_short), (weight_long, memory_long)):
        a = math.exp(-1.0 / th)
        out = out + w * (1.0 - a) * a ** (tau - 1.0)
    return out


def business_dates(n, start=date(2000, 1, 3)):
    days = np.busday_offset(np.datetime64(start), np.arange(n), roll="forward")
    return [d.item() for d in days]


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def sector_layout(n_stocks, n_sectors):
    """Sector labels: ``n_sectors`` contiguous blocks of ``N // (n_sectors + 1)``
    stocks, the remainder (label -1) loading on the market only.

    The remainder keeps ``e`` outside the span of the sector indicators, so
    every sector adds a response direction of its own.
    """
    size = n_stocks // (n_sectors + 1)
    labels = np.full(n_stocks, -1)
    for k in range(n_sectors):
        labels[k * size:(k + 1) * size] = k
    return labels


def generate(spec):
    """Simulate a panel from ``spec`` (bit-identical for a given spec).

    The kernels are driven by the standardized equal-weight index innovation
    ``e_t``, which is iid standard normal whatever ``rho_t`` does.  Returns
    are drawn conditionally on the index: ``x = A z`` is sampled from the
    day's covariance ``S_t = A A^T`` and then shifted along ``S_t w`` so that
    ``w^T x = s_t e_t`` (``w = 1/N``, ``s_t^2 = w^T S_t w``).  The joint law
    of each day is exactly Gaussian with covariance ``S_t``.
    """
    N, T = spec.n_stocks, spec.n_days
    burn = spec.burn_in if spec.burn_in is not None else int(math.ceil(5 * max(spec.memory_short, spec.memory_long)))
    L = T + burn
    r_index, r_idio, r_sector, r_factor = _streams(spec.seed, 4)
    e = r_index.standard_normal(L)
    u_minus = np.minimum(e, 0.0) + _HALF_MEAN
    u_plus = np.maximum(e, 0.0) - _HALF_MEAN
    w = spec.weight_long

    def kernel(u):
        return (1.0 - w) * ew_past(u, spec.memory_short) + w * ew_past(u, spec.memory_long)

    k_minus, k_plus = kernel(u_minus), kernel(u_plus)
    rho_raw = spec.rho0 + spec.g_minus * k_minus + spec.g_plus * k_plus
    rho = np.clip(rho_raw, 0.0, RHO_MAX)
    clipped = rho != rho_raw

    sq_rho = np.sqrt(rho)[:, None]
    x = sq_rho * r_factor.standard_normal(L)[:, None]
    sw = np.repeat(N * rho[:, None], N, axis=1)  # N S_t w, filled term by term
    s = np.zeros(L)
    load = np.zeros(N)
    if spec.n_sectors:
        labels = sector_layout(N, spec.n_sectors)
        load = (labels >= 0).astype(np.float64)
        s_raw = spec.sector_rho0 + spec.sector_g_minus * k_minus + spec.sector_g_plus * k_plus
        s = np.clip(s_raw, 0.0, RHO_MAX - rho)
        clipped |= s != s_raw
        g = r_sector.standard_normal((L, spec.n_sectors))
        x = x + np.sqrt(s)[:, None] * load[None, :] * g[:, np.maximum(labels, 0)]
        b_sum = np.bincount(labels[labels >= 0], minlength=spec.n_sectors)[np.maximum(labels, 0)] * load
        sw = sw + s[:, None] * (load * b_sum)[None, :]
    idio_var = 1.0 - rho[:, None] - s[:, None] * load[None, :] ** 2
    x = x + np.sqrt(idio_var) * r_idio.standard_normal((L, N))
    sw = (sw + idio_var) / N
    s2 = sw.mean(axis=1)
    shift = np.sqrt(s2) * e - x.mean(axis=1)
    eta = x + (sw / s2[:, None]) * shift[:, None]
    if spec.vol_leverage:
        eta = eta * np.exp(spec.vol_leverage * k_minus)[:, None]
    eta = eta[burn:]
    frac = clipped[burn:].mean()
    if frac > 0.10:
        warnings.warn(f"correlation clipped on {100 * frac:.1f}% of days; planted dynamics distorted",
                      RuntimeWarning, stacklevel=2)
    tickers = [f"SYN{i:04d}" for i in range(N)]
    return ReturnsPanel(tickers=tickers, dates=business_dates(T), returns=np.ascontiguousarray(eta.T))


def planted_slope(spec, tau=1):
    """Expected off-diagonal slope on the raw index at lag ``tau``, linear regime.

    With ``g_minus == g_plus == g`` the kernel input is ``u^- + u^+ = e``, so
    ``rho_t`` moves by ``g k(tau)`` per unit of ``e(t - tau)``.  Since
    ``I(t - tau) = s e(t - tau)`` with ``s^2 = rho + (1 - rho) / N`` fixed by
    the past, the slope is ``g k(tau) E[s] / E[s^2]``, which to first order in
    ``g`` is ``g k(tau) / sqrt(rho0 + (1 - rho0) / N)``.
    """
    if spec.g_minus != spec.g_plus:
        raise ValueError("planted_slope needs a symmetric (linear) sensitivity")
    k = float(memory_kernel(tau, spec.memory_short, spec.memory_long, spec.weight_long))
    r0, N = spec.rho0, spec.n_stocks
    return spec.g_minus * k / math.sqrt(r0 + (1.0 - r0) / N)


def generate_null(n_stocks, n_days, C_target=None, seed=0):
    """iid-in-time Gaussian panel with cross-sectional covariance ``C_target``."""
    if n_stocks < 2 or n_days < 1:
        raise DimensionalityError("need n_stocks >= 2 and n_days >= 1")
    if C_target is None:
        root = np.eye(n_stocks)
    else:
        C = np.asarray(C_target, dtype=np.float64)
        if C.shape != (n_stocks, n_stocks) or np.max(np.abs(C - C.T)) > 1e-10 * max(1.0, np.abs(C).max()):
            raise MatrixDomainError("C_target must be a symmetric n_stocks x n_stocks matrix")
        lam, V = np.linalg.eigh(C)
        if lam.min() < -1e-10 * max(1.0, lam.max()):
            raise MatrixDomainError(f"C_target is not positive semi-definite (min eigenvalue {lam.min():.3g})")
        root = V * np.sqrt(np.clip(lam, 0.0, None))
    rng = np.random.default_rng(seed)
    X = root @ rng.standard_normal((n_stocks, n_days))
    tickers = [f"NUL{i:04d}" for i in range(n_stocks)]
    return ReturnsPanel(tickers=tickers, dates=business_dates(n_days), returns=X)


def one_factor_correlation(n_stocks, lambda_1):
    """Equicorrelation matrix whose top eigenvalue is ``lambda_1``."""
    rho = (lambda_1 - 1.0) / (n_stocks - 1.0)
    C = np.full((n_stocks, n_stocks), rho)
    np.fill_diagonal(C, 1.0)
    return C
