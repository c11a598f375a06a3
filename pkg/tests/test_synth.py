import warnings

import numpy as np
import pytest
from scipy.stats import binom

from pra_toolkit import (
    PrincipalRegressionAnalysis,
    SynthSpec,
    correlation_matrix,
    generate,
    generate_null,
    index_series,
    normalize,
    null_ensemble,
    regression_matrix,
    significance_bands,
)
from pra_toolkit.exceptions import DimensionalityError, MatrixDomainError
from pra_toolkit.synth import (
    business_dates,
    memory_kernel,
    one_factor_correlation,
    planted_slope,
    sector_layout,
)


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(rho0=1.0), dict(rho0=-0.1), dict(memory_short=0.0),
                                    dict(memory_long=-1.0), dict(weight_long=1.5),
                                    dict(n_sectors=2, n_stocks=5), dict(n_sectors=1, sector_rho0=0.8)])
    def test_rejected(self, kw):
        with pytest.raises(ValueError):
            SynthSpec(**kw)

    def test_dimensions(self):
        with pytest.raises(DimensionalityError):
            SynthSpec(n_stocks=1)

    def test_to_dict_roundtrip(self):
        spec = SynthSpec(n_stocks=7, g_minus=-1.0, seed=3)
        assert SynthSpec(**spec.to_dict()) == spec


class TestGenerate:
    def test_reproducible(self):
        spec = SynthSpec(n_stocks=10, n_days=500, g_minus=-1.0, vol_leverage=-0.5, n_sectors=1,
                         sector_rho0=0.1, seed=5)
        a, b = generate(spec), generate(spec)
        assert a.returns.tobytes() == b.returns.tobytes()
        assert a.tickers == b.tickers and a.dates == b.dates
        c = generate(SynthSpec(n_stocks=10, n_days=500, g_minus=-1.0, seed=6))
        assert not np.array_equal(a.returns, c.returns)

    def test_constant_rho_moments(self):
        p = generate(SynthSpec(n_stocks=20, n_days=40_000, rho0=0.3, seed=1))
        X = p.returns
        np.testing.assert_allclose(X.var(axis=1), 1.0, atol=0.05)
        C = np.corrcoef(X)
        assert np.mean(C[~np.eye(20, dtype=bool)]) == pytest.approx(0.3, abs=0.01)
        assert X.mean(axis=0).var() == pytest.approx(0.3 + 0.7 / 20, rel=0.03)

    def test_index_innovation_drives_kernel(self):
        # with a pure short memory, the index at t-1 sets the next day's correlation
        spec = SynthSpec(n_stocks=30, n_days=60_000, rho0=0.4, g_minus=0.3, g_plus=0.3,
                         memory_short=1.0, weight_long=0.0, seed=2)
        X = generate(spec).returns
        I = X.mean(axis=0)
        low = I[:-1] < np.quantile(I, 0.2)
        high = I[:-1] > np.quantile(I, 0.8)
        C_low, C_high = np.corrcoef(X[:, 1:][:, low]), np.corrcoef(X[:, 1:][:, high])
        off = ~np.eye(30, dtype=bool)
        assert np.mean(C_high[off]) - np.mean(C_low[off]) > 0.08

    def test_clipping_warns(self):
        with pytest.warns(RuntimeWarning, match="clipped"):
            generate(SynthSpec(n_stocks=5, n_days=2000, rho0=0.05, g_minus=-3.0, seed=0))

    def test_no_warning_in_linear_regime(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            generate(SynthSpec(n_stocks=5, n_days=2000, rho0=0.3, g_minus=-0.5, seed=0))

    def test_dates_and_tickers(self):
        p = generate(SynthSpec(n_stocks=3, n_days=10, seed=0))
        assert p.tickers == ["SYN0000", "SYN0001", "SYN0002"]
        assert str(p.dates[0]) == "2000-01-03"
        assert all(d.weekday() < 5 for d in p.dates)
        assert all(a < b for a, b in zip(p.dates, p.dates[1:]))
        assert business_dates(6)[5].isoformat() == "2000-01-10"

    def test_memory_kernel_normalized(self):
        k = memory_kernel(np.arange(1, 20_000), 20.0, 250.0, 0.5)
        assert k.sum() == pytest.approx(1.0, abs=1e-10)

    def test_sector_layout(self):
        lab = sector_layout(10, 2)
        assert lab.tolist() == [0, 0, 0, 1, 1, 1, -1, -1, -1, -1]

    def test_sector_correlation(self):
        spec = SynthSpec(n_stocks=12, n_days=30_000, rho0=0.2, n_sectors=2, sector_rho0=0.3, seed=4)
        C = np.corrcoef(generate(spec).returns)
        assert C[0, 1] == pytest.approx(0.5, abs=0.03)
        assert C[0, 5] == pytest.approx(0.2, abs=0.03)
        assert C[0, 10] == pytest.approx(0.2, abs=0.03)


def test_planted_slope_identification():
    # linear sensitivity, single short scale, no clipping: 20 panels
    spec = SynthSpec(n_stocks=20, n_days=20_000, rho0=0.4, g_minus=0.5, g_plus=0.5,
                     memory_short=5.0, weight_long=0.0)
    est = []
    off = ~np.eye(20, dtype=bool)
    for seed in range(20):
        p = normalize(generate(SynthSpec(**{**spec.to_dict(), "seed": seed})))
        D = regression_matrix(p, index_series(p).values, 1)
        est.append(D[off].mean())
    se = np.std(est, ddof=1) / np.sqrt(len(est))
    assert abs(np.mean(est) - planted_slope(spec, 1)) < 3 * se


def test_planted_slope_needs_symmetric_sensitivity():
    with pytest.raises(ValueError):
        planted_slope(SynthSpec(g_minus=-1.0))


def test_null_calibration_small():
    p = normalize(generate(SynthSpec(n_stocks=30, n_days=2000, rho0=0.3, seed=8)))
    est = PrincipalRegressionAnalysis(lags=100).fit_normalized(p)
    band = significance_bands(null_ensemble(p, "gauss", 500, seed=9, C_eig=est.correlation_eig_),
                              0.01, lags=est.lags_)
    hi = binom.ppf(0.995, 100, 0.01)
    assert band.flags(est.curve("mu_1"), 0, "lower").sum() <= hi
    assert band.flags(est.curve("mu_top_1"), 29, "upper").sum() <= hi


@pytest.mark.slow
def test_sign_split_asymmetry_over_seeds():
    inside = []
    for seed in range(20):
        p = normalize(generate(SynthSpec(n_stocks=100, n_days=4000, rho0=0.3, g_minus=-1.0, seed=seed)))
        est = PrincipalRegressionAnalysis(lags=[1], split_sign=True).fit_normalized(p)
        st = null_ensemble(p, "pos-part", 500, seed=2000 + seed, estimator="sign-split",
                           C_eig=est.correlation_eig_)
        band = significance_bands(st, 0.01)
        inside.append(not band.flags(est.curve("mu_plus_1"), 99, "upper")[0])
    assert np.mean(inside) >= 0.95


class TestGenerateNull:
    def test_identity(self):
        T = 5000
        C = correlation_matrix(normalize(generate_null(50, T, seed=1)))
        assert np.max(np.abs(C[~np.eye(50, dtype=bool)])) < 5 / np.sqrt(T)

    def test_top_eigenvalue(self):
        C = one_factor_correlation(50, 20.0)
        assert np.linalg.eigvalsh(C)[-1] == pytest.approx(20.0)
        Chat = correlation_matrix(normalize(generate_null(50, 10_000, C, seed=2)))
        assert np.linalg.eigvalsh(Chat)[-1] == pytest.approx(20.0, rel=0.1)

    def test_not_psd(self):
        with pytest.raises(MatrixDomainError):
            generate_null(2, 10, np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_not_symmetric(self):
        with pytest.raises(MatrixDomainError):
            generate_null(2, 10, np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_single_day(self):
        with pytest.raises(DimensionalityError):
            normalize(generate_null(3, 1))

    def test_no_temporal_dependence(self):
        X = generate_null(4, 50_000, seed=3).returns
        ac = np.mean(X[:, 1:] * X[:, :-1], axis=1)
        assert np.max(np.abs(ac)) < 4 / np.sqrt(50_000)
