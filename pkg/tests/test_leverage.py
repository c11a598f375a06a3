import numpy as np
import pytest
from scipy.stats import norm

from pra_toolkit import (
    LagCurve,
    LeverageCorrelation,
    additivity_residual,
    binned_conditional,
    index_series,
    instantaneous_stats,
    leverage_full,
    leverage_partials,
    normalize,
)
from pra_toolkit.exceptions import AlignmentError, BinningError, LagRangeError
from pra_toolkit.panel import InstantSeries
from pra_toolkit.synth import SynthSpec, generate

from conftest import make_panel
from oracles import ols_slope


def _inst(sigma2, rho):
    sigma2, rho = np.asarray(sigma2, float), np.asarray(rho, float)
    return InstantSeries(sigma2, rho, float(sigma2.mean()), float(rho.mean()), np.zeros(sigma2.size, bool))


class TestLeverageFull:
    def test_alternating_series(self):
        # numerator: mean over the window of I(t - tau) a^2; denominator a^2
        a, T = 0.7, 11
        I = a * (-1.0) ** np.arange(T)
        curve = leverage_full(I, 4)
        for tau, v in zip(curve.lags, curve.values):
            assert v == pytest.approx(I[: T - tau].mean(), abs=1e-15)

    def test_alternating_even_window(self):
        a, T = 0.7, 12
        I = a * (-1.0) ** np.arange(T)
        curve = leverage_full(I, 4)
        np.testing.assert_allclose(curve.values[1::2], 0.0, atol=1e-15)

    def test_iid_band(self):
        T = 100_000
        I = np.random.default_rng(4).standard_normal(T)
        assert np.max(np.abs(leverage_full(I, 20).values)) < 4 / np.sqrt(T) * np.sqrt(3)

    @pytest.mark.parametrize("tau_max", [0, 10])
    def test_lag_range(self, tau_max):
        with pytest.raises(LagRangeError):
            leverage_full(np.ones(10), tau_max)

    def test_matches_ols_through_origin(self):
        I = np.random.default_rng(5).standard_normal(300)
        c = leverage_full(I, 7)
        for tau, v in zip(c.lags, c.values):
            num = np.linalg.lstsq(I[:-tau, None], (I[tau:] ** 2), rcond=None)[0][0]
            # slope through origin uses the window second moment; the estimator uses the full one
            w2 = np.mean(I[:-tau] ** 2)
            assert v == pytest.approx(num * w2 / np.mean(I**2), rel=1e-12)


class TestPartials:
    def test_constant_sigma(self):
        I = np.array([1.0, -1.0, 2.0, -2.0, 0.5, -0.5])
        l_s, _ = leverage_partials(I, _inst(np.full(6, 3.0), np.zeros(6)), 2)
        expect = [3.0 * I[:-t].mean() / np.mean(I**2) for t in (1, 2)]
        np.testing.assert_allclose(l_s.values, expect, atol=1e-15)
        assert l_s.values[1] == 0.0

    def test_hand_panel(self):
        p = normalize(make_panel(2, 3, seed=9))
        idx, inst = index_series(p), instantaneous_stats(p)
        l_s, l_r = leverage_partials(idx, inst, 1)
        I = idx.values
        I2 = (I[0] ** 2 + I[1] ** 2 + I[2] ** 2) / 3
        s = [(p.eta_hat[0, t] ** 2 + p.eta_hat[1, t] ** 2) / 2 for t in range(3)]
        r = [2 * p.eta_hat[0, t] * p.eta_hat[1, t] / (2 * s[t]) for t in range(3)]
        assert l_s.values[0] == pytest.approx((I[0] * s[1] + I[1] * s[2]) / 2 / I2, abs=1e-12)
        assert l_r.values[0] == pytest.approx((I[0] * r[1] + I[1] * r[2]) / 2 / I2, abs=1e-12)

    def test_planted_rho(self):
        rng = np.random.default_rng(6)
        T, c = 50_000, 0.3
        I = rng.standard_normal(T)
        rho = np.zeros(T)
        rho[5:] = c * I[:-5]
        _, l_r = leverage_partials(I, _inst(np.ones(T), rho), 10)
        assert l_r.values[4] == pytest.approx(c, abs=0.02)
        assert np.max(np.abs(np.delete(l_r.values, 4))) < 0.02

    def test_permutation_destroys_planted(self):
        rng = np.random.default_rng(7)
        T, c = 20_000, 0.3
        I = rng.standard_normal(T)
        rho = np.zeros(T)
        rho[5:] = c * I[:-5]
        Ip = rng.permutation(I)
        _, l_r = leverage_partials(Ip, _inst(np.ones(T), rho), 10)
        # 99% band for a slope of rho on an independent unit series
        band = 2.576 * rho.std() / np.sqrt(T - 10)
        assert np.max(np.abs(l_r.values)) < band * np.sqrt(2)

    def test_misaligned(self):
        with pytest.raises(AlignmentError):
            leverage_partials(np.ones(5), _inst(np.ones(4), np.ones(4)), 2)

    def test_ols_oracle(self):
        p = normalize(make_panel(5, 200, seed=10))
        idx, inst = index_series(p), instantaneous_stats(p)
        l_s, l_r = leverage_partials(idx, inst, 5)
        I = idx.values
        for tau, vs, vr in zip(l_s.lags, l_s.values, l_r.values):
            scale = np.mean(I[:-tau] ** 2) / np.mean(I**2)
            assert vs == pytest.approx(ols_slope(I[:-tau], inst.sigma2[tau:], intercept=False) * scale, rel=1e-12)
            assert vr == pytest.approx(ols_slope(I[:-tau], inst.rho[tau:], intercept=False) * scale, rel=1e-12)


class TestAdditivity:
    def test_constructed_identity(self):
        lags = np.arange(1, 6)
        ls = LagCurve(lags, np.linspace(1, 2, 5))
        lr = LagCurve(lags, np.linspace(-1, 0, 5))
        lI = LagCurve(lags, 0.3 * ls.values + 1.7 * lr.values)
        np.testing.assert_allclose(additivity_residual(lI, ls, lr, 0.3, 1.7).values, 0.0, atol=1e-15)

    def test_grid_mismatch(self):
        a = LagCurve([1, 2], [0.0, 0.0])
        b = LagCurve([1, 3], [0.0, 0.0])
        with pytest.raises(AlignmentError):
            additivity_residual(a, a, b, 0.1, 1.0)

    def test_weak_correlation_panel(self):
        # the neglected cross term scales like 4 rho0 relative to L_I
        spec = SynthSpec(n_stocks=100, n_days=50_000, rho0=0.01, g_minus=-0.04, g_plus=0.0,
                         memory_short=10, memory_long=100, seed=3)
        est = LeverageCorrelation(tau_max=30).fit(generate(spec).returns.T)
        assert np.max(np.abs(est.residual_.values)) <= 0.1 * np.max(np.abs(est.l_index_.values))

    def test_strong_correlation_residual_small_tau(self):
        spec = SynthSpec(n_stocks=50, n_days=20_000, rho0=0.4, g_minus=-1.0, g_plus=0.0,
                         memory_short=10, memory_long=100, vol_leverage=-2.0, seed=4)
        est = LeverageCorrelation(tau_max=60).fit(generate(spec).returns.T)
        r = np.abs(est.residual_.values)
        assert np.argmax(r) < 10


class TestBinned:
    def test_identity_regressand(self):
        I = np.random.default_rng(11).standard_normal(1000)
        y = np.r_[0.0, I[:-1]]
        b = binned_conditional(y, I, 1, 10)
        np.testing.assert_allclose(b.means, b.bin_centers, atol=1e-15)

    def test_parabola_symmetric(self):
        rng = np.random.default_rng(12)
        I = rng.standard_normal(200_000)
        y = np.r_[0.0, I[:-1] ** 2]
        b = binned_conditional(y, I, 1, 10)
        # E[x^2 | a < x < b] for a standard normal between decile edges
        edges = norm.ppf(np.linspace(0, 1, 11))
        pdf = np.zeros(11)  # x phi(x) vanishes at the infinite outer edges
        pdf[1:-1] = edges[1:-1] * norm.pdf(edges[1:-1])
        expect = 1.0 + (pdf[:-1] - pdf[1:]) / 0.1
        assert np.all(np.abs(b.means - expect) < 4 * b.stderr)
        np.testing.assert_allclose(b.means, b.means[::-1], rtol=0.05)

    def test_independent_within_3_stderr(self):
        rng = np.random.default_rng(13)
        I, y = rng.standard_normal(5000), rng.standard_normal(5000)
        b = binned_conditional(y, I, 1, 8)
        assert np.all(np.abs(b.means - y[1:].mean()) < 3 * b.stderr)

    def test_counts_conserved(self):
        I = np.random.default_rng(14).standard_normal(503)
        for n in (2, 7, 12, 50):
            assert binned_conditional(I, I, 3, n).counts.sum() == 500

    def test_too_few_pairs(self):
        with pytest.raises(BinningError):
            binned_conditional(np.ones(5), np.arange(5.0), 1, 6)

    def test_one_bin(self):
        with pytest.raises(BinningError):
            binned_conditional(np.ones(5), np.arange(5.0), 1, 1)


def test_lagcurve_validation():
    with pytest.raises(LagRangeError):
        LagCurve([0, 1], [1.0, 2.0])
    with pytest.raises(AlignmentError):
        LagCurve([1, 2], [1.0])
    with pytest.raises(ValueError):
        LagCurve([1, 2], [1.0, np.nan])
