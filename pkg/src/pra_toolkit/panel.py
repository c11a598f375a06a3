"""Return-panel ingestion, normalization and the derived index series.

Matrices in the functional API are oriented stocks x days (``N x T``), the
natural layout for the cross-sectional products used throughout the
package.  The scikit-learn style transformers at the bottom of the module
follow the usual ``(n_samples, n_features)`` convention instead, i.e.
days x stocks.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
from scipy.special import ndtri
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_returns_matrix, check_series
from .exceptions import DegenerateStockError, DimensionalityError, PanelParseError

logger = logging.getLogger(__name__)

_MISSING_TOKENS = {"", "na", "nan", "null"}


@dataclass(frozen=True)
class MissingPolicy:
    """How :func:`load_panel` treats empty cells.

    Tickers with a missing fraction strictly above ``drop_frac`` are removed.
    Remaining gaps are either filled with a zero return (``fill="zero"``) or
    the affected dates are removed (``fill="drop-day"``).
    """

    drop_frac: float = 0.5
    fill: str = "zero"

    def __post_init__(self):
        if not 0.0 <= self.drop_frac <= 1.0:
            raise ValueError(f"drop_frac must lie in [0, 1], got {self.drop_frac}")
        if self.fill not in ("zero", "drop-day"):
            raise ValueError(f"fill must be 'zero' or 'drop-day', got {self.fill!r}")


@dataclass(frozen=True)
class ReturnsPanel:
    tickers: list
    dates: list
    returns: np.ndarray  # (N, T)
    dropped: list = field(default_factory=list)

    def __post_init__(self):
        X = check_returns_matrix(self.returns)
        if X.shape != (len(self.tickers), len(self.dates)):
            raise DimensionalityError(
                f"returns shape {X.shape} does not match "
                f"{len(self.tickers)} tickers x {len(self.dates)} dates"
            )
        object.__setattr__(self, "returns", X)

    @property
    def n_stocks(self):
        return self.returns.shape[0]

    @property
    def n_days(self):
        return self.returns.shape[1]

    @classmethod
    def from_array(cls, returns, tickers=None, dates=None):
        """Wrap a bare ``N x T`` array, inventing labels where absent."""
        returns = np.asarray(returns, dtype=np.float64)
        n, t = returns.shape
        tickers = list(tickers) if tickers is not None else [f"S{i:04d}" for i in range(n)]
        dates = list(dates) if dates is not None else list(range(t))
        return cls(tickers=tickers, dates=dates, returns=returns)


@dataclass(frozen=True)
class NormalizedPanel:
    base: ReturnsPanel
    eta_hat: np.ndarray  # (N, T)
    sigma_alpha: np.ndarray
    means: np.ndarray

    @property
    def n_stocks(self):
        return self.eta_hat.shape[0]

    @property
    def n_days(self):
        return self.eta_hat.shape[1]


@dataclass(frozen=True)
class IndexSeries:
    values: np.ndarray
    mean_pos: float
    mean_neg: float
    second_moment: float


@dataclass(frozen=True)
class InstantSeries:
    sigma2: np.ndarray
    rho: np.ndarray
    sigma0_sq: float
    rho0: float
    degenerate_days: np.ndarray  # boolean mask of days with sigma(t)^2 == 0


def _parse_cell(text, lineno, column):
    token = text.strip()
    if token.lower() in _MISSING_TOKENS:
        return math.nan
    try:
        value = float(token)
    except ValueError:
        raise PanelParseError(f"non-numeric cell {token!r} in column {column!r}", line=lineno) from None
    if not math.isfinite(value):
        raise PanelParseError(f"non-finite cell {token!r} in column {column!r}", line=lineno)
    return value


def read_panel_csv(source):
    """Parse the panel CSV into (tickers, dates, raw matrix with NaN gaps).

    Line numbers in errors are 1-based file lines; the header is line 1.
    """
    path = Path(source)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if not header or header[0].lower() != "date":
            raise PanelParseError("first column must be 'date'", line=1)
        tickers = header[1:]
        if len(set(tickers)) != len(tickers):
            raise PanelParseError("duplicate ticker columns", line=1)
        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelParseError(
                    f"expected {len(header)} fields, found {len(row)}", line=lineno
                )
            try:
                d = date.fromisoformat(row[0].strip())
            except ValueError:
                raise PanelParseError(f"invalid ISO-8601 date {row[0]!r}", line=lineno) from None
            if dates and d <= dates[-1]:
                raise PanelParseError(f"date {d} is not after {dates[-1]}", line=lineno)
            dates.append(d)
            rows.append([_parse_cell(c, lineno, t) for c, t in zip(row[1:], tickers)])
    raw = np.array(rows, dtype=np.float64).reshape(len(dates), len(tickers)).T
    return tickers, dates, raw


def load_panel(source, policy=None):
    """Load a daily return panel from the CSV schema.

    Parameters
    ----------
    source : path-like
        CSV whose first column is ``date`` and whose other columns hold one
        ticker's decimal daily returns each.
    policy : MissingPolicy, optional
        Missing-data handling; defaults to dropping tickers with more than
        50% gaps and filling the rest with zero returns.

    Returns
    -------
    ReturnsPanel
    """
    policy = policy or MissingPolicy()
    tickers, dates, raw = read_panel_csv(source)
    if raw.shape[1] == 0:
        raise DimensionalityError("no data rows")
    missing = np.isnan(raw)
    frac = missing.mean(axis=1)
    keep = frac <= policy.drop_frac
    dropped = [t for t, k in zip(tickers, keep) if not k]
    for t, f in zip(tickers, frac):
        if f > policy.drop_frac:
            logger.warning("dropping ticker %s: %.1f%% missing", t, 100 * f)
    tickers = [t for t, k in zip(tickers, keep) if k]
    raw, missing = raw[keep], missing[keep]
    if policy.fill == "zero":
        raw = np.where(missing, 0.0, raw)
    else:
        day_ok = ~missing.any(axis=0)
        if not day_ok.all():
            logger.info("dropping %d days with missing cells", int((~day_ok).sum()))
        raw = raw[:, day_ok]
        dates = [d for d, ok in zip(dates, day_ok) if ok]
    if len(tickers) < 2 or len(dates) < 2:
        raise DimensionalityError(
            f"need >= 2 tickers and >= 2 dates after filtering, have {len(tickers)} x {len(dates)}"
        )
    return ReturnsPanel(tickers=tickers, dates=dates, returns=raw, dropped=dropped)


def write_panel_csv(panel, path):
    """Write a panel in the ingest CSV schema (full float64 precision)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.tickers])
        for j, d in enumerate(panel.dates):
            w.writerow([str(d), *(repr(float(v)) for v in panel.returns[:, j])])


def normalize(panel):
    """Demean each stock over the full period and divide by its volatility."""
    X = panel.returns
    means = X.mean(axis=1)
    centered = X - means[:, None]
    sigma = np.sqrt(np.mean(centered**2, axis=1))
    for ticker, s in zip(panel.tickers, sigma):
        if not s > 0.0:
            raise DegenerateStockError(ticker)
    eta_hat = centered / sigma[:, None]
    return NormalizedPanel(base=panel, eta_hat=eta_hat, sigma_alpha=sigma, means=means)


def index_series(npanel):
    """Inverse-volatility weighted index ``I(t) = mean_alpha eta_hat``."""
    I = npanel.eta_hat.mean(axis=0)
    return IndexSeries(
        values=I,
        mean_pos=float(np.mean(np.maximum(I, 0.0))),
        mean_neg=float(np.mean(np.minimum(I, 0.0))),
        second_moment=float(np.mean(I**2)),
    )


def instantaneous_stats(npanel):
    """Daily cross-sectional volatility and average pairwise correlation.

    Uses ``sum_{a != b} x_a x_b = (sum x)^2 - sum x^2`` so that the identity
    ``I^2 = sigma^2/N + rho sigma^2 (N-1)/N`` holds to rounding.  Days with
    ``sigma(t)^2 == 0`` get ``rho(t) = 0`` and are flagged.
    """
    E = npanel.eta_hat
    n = E.shape[0]
    if n < 2:
        raise DimensionalityError("instantaneous correlation needs N >= 2")
    sigma2 = np.mean(E**2, axis=0)
    total = E.sum(axis=0)
    cross = total**2 - n * sigma2
    degenerate = sigma2 == 0.0
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} day(s) with zero cross-sectional volatility; rho set to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    denom = np.where(degenerate, 1.0, n * (n - 1) * sigma2)
    rho = np.where(degenerate, 0.0, cross / denom)
    return InstantSeries(
        sigma2=sigma2,
        rho=rho,
        sigma0_sq=float(sigma2.mean()),
        rho0=float(rho.mean()),
        degenerate_days=degenerate,
    )


def gaussianize(series, return_ties=False):
    """Map a series onto standard normal quantiles of its ranks.

    Day ``t`` with 1-based ascending rank ``k`` maps to
    ``Phi^{-1}((k - 0.5) / T)``.  Ties are broken by position (earlier day
    gets the lower rank).

    Parameters
    ----------
    series : array-like, shape (T,)
    return_ties : bool
        Also return a boolean mask marking entries that shared their value
        with another entry.
    """
    x = check_series(series)
    T = x.shape[0]
    if T < 2:
        raise DimensionalityError("gaussianize needs at least 2 points")
    order = np.argsort(x, kind="stable")
    ranks = np.empty(T, dtype=np.int64)
    ranks[order] = np.arange(1, T + 1)
    out = ndtri((ranks - 0.5) / T)
    sorted_x = x[order]
    same = sorted_x[1:] == sorted_x[:-1]
    tied = np.zeros(T, dtype=bool)
    if same.any():
        tied_sorted = np.zeros(T, dtype=bool)
        tied_sorted[1:] |= same
        tied_sorted[:-1] |= same
        tied[order] = tied_sorted
        logger.info("gaussianize: %d tied values broken by position", int(tied.sum()))
    if return_ties:
        return out, tied
    return out


class PanelNormalizer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Full-period demeaning and volatility normalization of a return panel.

    ``X`` has shape ``(n_days, n_stocks)``.  After ``fit`` the attributes
    ``means_`` and ``sigma_`` hold the per-stock mean and volatility, and
    ``transform`` returns normalized returns.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        npanel = normalize(ReturnsPanel.from_array(X.T))
        self.means_ = npanel.means
        self.sigma_ = npanel.sigma_alpha
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ["means_", "sigma_"])
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} stocks, fitted on {self.n_features_in_}")
        return (X - self.means_) / self.sigma_


class Gaussianizer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Column-wise rank-to-normal-quantile transform (stateless)."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        return np.column_stack([gaussianize(X[:, j]) for j in range(X.shape[1])])
