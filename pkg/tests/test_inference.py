import math

import numpy as np
import pytest

from panelhd.errors import (
    ConstantResidualSeries,
    DimensionMismatch,
    NonPositiveVariance,
    ZeroVariance,
)
from panelhd.inference import (
    cd_test,
    chi2_sf_2df,
    ci_debiased,
    ci_factor,
    jarque_bera,
    normal_cdf,
    normal_quantile,
    rescale_report,
)
from panelhd.lasso import GramData, LassoFit, fit_weighted_lasso
from panelhd.longrun import KernelSpec, LongRunCov, aggregated_scores, hac
from panelhd.nodewise import DebiasedFit, PrecisionEstimate, debias, nodewise_fit, FixedPenalties
from panelhd.panel import PanelDataset, standardize


def identity_debiased(beta_bc, n_obs):
    d = beta_bc.size
    precision = PrecisionEstimate(
        gamma=(), tau_sq=np.ones(d), omega=np.eye(d), penalties=np.zeros(d)
    )
    base = LassoFit(
        beta=np.zeros(d),
        penalty=0.0,
        weights=np.ones(d),
        active_set=(),
        iterations=0,
        converged=True,
        objective=0.0,
    )
    return DebiasedFit(beta_bc=beta_bc, base_fit=base, precision=precision, n_obs=n_obs)


def identity_cov(d):
    return LongRunCov(theta=np.eye(d), kernel=KernelSpec("bartlett", 1.0))


class TestNormalQuantile:
    def test_97_5_percent_point(self):
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-5)

    def test_symmetry(self):
        for p in (0.6, 0.9, 0.999):
            assert normal_quantile(p) == pytest.approx(-normal_quantile(1 - p), abs=1e-12)

    def test_against_cdf_inverse(self):
        for p in (1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1 - 1e-6):
            z = normal_quantile(p)
            assert normal_cdf(z) == pytest.approx(p, abs=1e-9)

    def test_domain(self):
        with pytest.raises(ValueError):
            normal_quantile(0.0)
        with pytest.raises(ValueError):
            normal_quantile(1.0)


class TestCiDebiased:
    def test_identity_case_std_error(self):
        # Omega = Theta = I: std error of each coefficient is 1/sqrt(NT)
        bc = identity_debiased(np.array([0.5, -0.2]), n_obs=400)
        rep = ci_debiased(bc, identity_cov(2), level=0.95)
        for row in rep.rows:
            assert row.std_error == pytest.approx(1 / math.sqrt(400))

    def test_interval_width_identity(self):
        bc = identity_debiased(np.array([1.0, 2.0, 3.0]), n_obs=250)
        rep = ci_debiased(bc, identity_cov(3), level=0.9)
        z = normal_quantile(0.95)
        for row in rep.rows:
            assert row.ci_high - row.ci_low == pytest.approx(
                2 * z * row.std_error, abs=1e-12
            )
            assert row.ci_low < row.ci_high
            assert row.z_stat * row.std_error == pytest.approx(row.estimate)

    def test_contrast_variance(self):
        bc = identity_debiased(np.array([1.0, -1.0]), n_obs=100)
        rho = np.array([1.0, 1.0])
        rep = ci_debiased(bc, identity_cov(2), rho=rho)
        assert rep.rows[0].estimate == pytest.approx(0.0)
        assert rep.rows[0].std_error == pytest.approx(math.sqrt(2 / 100))

    def test_non_positive_variance_raises(self):
        bc = identity_debiased(np.array([1.0]), n_obs=100)
        bad = LongRunCov(theta=np.array([[0.0]]), kernel=KernelSpec("bartlett", 1.0))
        with pytest.raises(NonPositiveVariance):
            ci_debiased(bc, bad)

    def test_wider_level_contains_narrower(self):
        bc = identity_debiased(np.array([0.3]), n_obs=100)
        cov = identity_cov(1)
        r95 = ci_debiased(bc, cov, level=0.95).rows[0]
        r99 = ci_debiased(bc, cov, level=0.99).rows[0]
        assert r99.ci_low < r95.ci_low and r95.ci_high < r99.ci_high

    def test_rescaling_invariance(self):
        # standardized-fit CI mapped back equals the raw-data CI when the
        # pipeline is scale-equivariant: zero-mean data, unpenalized fit,
        # exact Gram inverse, unthresholded HAC
        rng = np.random.default_rng(0)
        n, t, d = 20, 30, 3
        x = rng.standard_normal((n, t, d)) * np.array([1.0, 4.0, 0.25])
        x -= x.reshape(-1, d).mean(axis=0)
        y = x @ np.array([1.0, -0.5, 2.0]) + rng.standard_normal((n, t))
        y -= y.mean()
        ds = PanelDataset(y=y, x=x)

        def full_ci(dataset):
            gd = GramData.from_dataset(dataset)
            fit = fit_weighted_lasso(gd, 0.0)
            precision = PrecisionEstimate(
                gamma=(),
                tau_sq=np.ones(d),
                omega=np.linalg.inv(gd.gram),
                penalties=np.zeros(d),
            )
            bc = debias(dataset, fit, precision)
            kernel = KernelSpec("bartlett", 3.0)
            cov = hac(aggregated_scores(dataset, fit.beta), kernel)
            return ci_debiased(bc, cov)

        raw = full_ci(ds)
        std_ds, record = standardize(ds)
        mapped = rescale_report(full_ci(std_ds), record)
        for a, b in zip(raw.rows, mapped.rows):
            assert a.estimate == pytest.approx(b.estimate, abs=1e-6)
            assert a.ci_low == pytest.approx(b.ci_low, abs=1e-6)
            assert a.ci_high == pytest.approx(b.ci_high, abs=1e-6)


class TestCiFactor:
    def make_fit(self, sigma, theta, beta_bc, active, n_obs):
        from panelhd.factors import FactorFit

        d = max(active) + 1
        beta = np.zeros(d)
        beta[list(active)] = 1.0
        return FactorFit(
            beta=beta,
            active_set=tuple(active),
            factors=np.zeros((10, 0)),
            loadings=np.zeros((10, 0)),
            r_hat=0,
            w3=0.1,
            weights=np.ones(d),
            converged=True,
            rank_zero=True,
            n_obs=n_obs,
            beta_bc=np.asarray(beta_bc, dtype=np.float64),
            sigma_j=np.asarray(sigma, dtype=np.float64),
            theta_j=np.asarray(theta, dtype=np.float64),
        )

    def test_identity_blocks(self):
        fit = self.make_fit(np.eye(1), np.eye(1), [0.7], [0], n_obs=400)
        rep = ci_factor(fit)
        assert rep.rows[0].std_error == pytest.approx(1 / math.sqrt(400))
        assert rep.rows[0].index == 0

    def test_level_monotonicity(self):
        fit = self.make_fit(np.eye(2), np.eye(2), [0.7, -0.1], [1, 3], n_obs=900)
        r95 = ci_factor(fit, level=0.95)
        r99 = ci_factor(fit, level=0.99)
        for a, b in zip(r95.rows, r99.rows):
            assert b.ci_low < a.ci_low and a.ci_high < b.ci_high
        assert [r.index for r in r95.rows] == [1, 3]

    def test_requires_variance_blocks(self):
        fit = self.make_fit(np.eye(1), np.eye(1), [0.7], [0], n_obs=100)
        from dataclasses import replace

        with pytest.raises(DimensionMismatch):
            ci_factor(replace(fit, sigma_j=None))


class TestCdTest:
    def test_identical_units(self):
        rng = np.random.default_rng(1)
        base = rng.standard_normal(30)
        res = np.vstack([base, base, base])
        stat, _ = cd_test(res)
        n, t = 3, 30
        assert stat == pytest.approx(math.sqrt(t * n * (n - 1) / 2))

    def test_hand_instance(self):
        # two exactly mean-zero series with correlation 0.5:
        # CD = sqrt(2T / (N(N-1))) * 0.5 = sqrt(3) * 0.5 at N=2, T=3
        r1 = np.array([1.0, 0.0, -1.0])
        r2 = np.array([0.0, 1.0, -1.0])
        stat, p = cd_test(np.vstack([r1, r2]))
        assert stat == pytest.approx(math.sqrt(3) * 0.5)
        assert 0 < p < 1

    def test_null_distribution(self):
        rng = np.random.default_rng(2)
        stats = []
        for _ in range(300):
            stats.append(cd_test(rng.standard_normal((20, 200)))[0])
        stats = np.array(stats)
        assert abs(stats.mean()) < 0.1
        assert abs(stats.var() - 1.0) < 0.2

    def test_unit_permutation_invariance(self):
        rng = np.random.default_rng(3)
        res = rng.standard_normal((8, 40))
        s1, _ = cd_test(res)
        s2, _ = cd_test(res[rng.permutation(8)])
        assert s1 == pytest.approx(s2)

    def test_constant_series_rejected(self):
        res = np.vstack([np.ones(10), np.arange(10.0)])
        with pytest.raises(ConstantResidualSeries):
            cd_test(res)

    def test_shape_validation(self):
        with pytest.raises(DimensionMismatch):
            cd_test(np.ones((1, 10)))


class TestJarqueBera:
    def test_two_point_sample(self):
        # alternating -1, 1: skewness 0, kurtosis 1 -> JB = n/6
        x = np.tile([-1.0, 1.0], 50)
        stat, p = jarque_bera(x)
        assert stat == pytest.approx(x.size / 6.0)
        assert p == pytest.approx(chi2_sf_2df(x.size / 6.0))

    def test_normal_null(self):
        rng = np.random.default_rng(4)
        below = 0
        runs = 60
        for _ in range(runs):
            stat, _ = jarque_bera(rng.standard_normal(10_000))
            below += stat < 9.21  # chi-square(2) 99th percentile
        assert below / runs >= 0.95

    def test_heavy_tail_power(self):
        rng = np.random.default_rng(5)
        reject = 0
        runs = 40
        for _ in range(runs):
            _, p = jarque_bera(rng.standard_t(5, 10_000))
            reject += p < 0.05
        assert reject / runs >= 0.95

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            jarque_bera(np.ones(20))

    def test_too_short(self):
        with pytest.raises(DimensionMismatch):
            jarque_bera(np.arange(5.0))


def test_report_csv_format():
    bc = identity_debiased(np.array([0.25, -0.5]), n_obs=100)
    rep = ci_debiased(bc, identity_cov(2))
    lines = rep.to_csv().strip().split("\n")
    assert lines[0] == "index,estimate,std_error,z_stat,ci_low,ci_high,level"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert float(first[1]) == pytest.approx(0.25)
