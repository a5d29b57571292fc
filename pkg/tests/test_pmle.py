"""MLE and penalized coordinate-descent estimators."""

import numpy as np
import pytest

from svcsel.kernels import GpParams, KernelSpec, cholesky_lower, covariance_matrix
from svcsel.model import Dataset, SvcParams
from svcsel.pmle import (
    CdConfig,
    adaptive_weights,
    bic_value,
    count_nonzero,
    default_theta_bounds,
    fit_mle,
    fit_pmle,
)

SPEC = KernelSpec("exp")


def svc_dataset(rng, n=36, mu=(2.0, 0.0, 1.0), sigma2=(0.4, 0.0, 0.0),
                rho=(0.3, 0.2, 0.2), tau2=0.1):
    locs = rng.uniform(0, 1, (n, 2))
    p = len(mu)
    X = rng.normal(size=(n, p))
    y = X @ np.asarray(mu)
    for k in range(p):
        if sigma2[k] > 0:
            C = covariance_matrix(locs, GpParams(rho[k], sigma2[k]), SPEC)
            y += (cholesky_lower(C + 1e-12 * np.eye(n)) @ rng.standard_normal(n)) * X[:, k]
    y += np.sqrt(tau2) * rng.standard_normal(n)
    return Dataset(y, X, X, locs)


class TestCdConfig:
    def test_defaults(self):
        cd = CdConfig()
        assert cd.delta == 1e-6
        assert cd.t_max == 20

    def test_validation(self):
        with pytest.raises(ValueError):
            CdConfig(delta=0.0)
        with pytest.raises(ValueError):
            CdConfig(t_max=0)


class TestDefaultBounds:
    def test_shape_and_values(self):
        rng = np.random.default_rng(0)
        data = svc_dataset(rng, n=20)
        b = default_theta_bounds(data, rho_lower=0.05, tau2_lower=1e-4)
        assert b.lower.size == 2 * 3 + 1
        assert np.all(b.lower[0:-1:2] == 0.05)   # ranges
        assert np.all(b.lower[1:-1:2] == 0.0)    # variances
        assert b.lower[-1] == 1e-4               # nugget
        assert np.all(np.isinf(b.upper))

    def test_data_driven_range_floor(self):
        rng = np.random.default_rng(1)
        data = svc_dataset(rng, n=25)
        b = default_theta_bounds(data)
        assert 0 < b.lower[0] < 1.0


class TestFitMle:
    def test_nugget_only_closed_form(self):
        rng = np.random.default_rng(2)
        n = 50
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = X @ np.array([1.0, 2.0]) + 0.4 * rng.standard_normal(n)
        data = Dataset(y, X, np.zeros((n, 0)), rng.uniform(0, 1, (n, 2)))
        fit = fit_mle(data, SPEC)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        rss = float(np.sum((y - X @ ols) ** 2))
        assert np.max(np.abs(fit.params.mu - ols)) < 1e-8
        assert fit.params.tau2 == pytest.approx(max(rss / n, 1e-4), rel=1e-5)
        assert fit.converged

    def test_loglik_not_below_truth_init(self):
        rng = np.random.default_rng(3)
        data = svc_dataset(rng)
        truth_theta = SvcParams(mu=np.zeros(3), rho=[0.3, 0.2, 0.2],
                                sigma2=[0.4, 0.0, 0.0], tau2=0.1).theta
        from svcsel.lasso import gls
        from svcsel.model import assemble_sigma_y, log_likelihood
        params0 = SvcParams.from_theta(np.zeros(3), truth_theta)
        mu0 = gls(data.y, data.X, assemble_sigma_y(data, params0, SPEC))
        ll0 = log_likelihood(data, SvcParams.from_theta(mu0, truth_theta), SPEC)
        fit = fit_mle(data, SPEC, theta_init=truth_theta)
        assert fit.loglik >= ll0 - 1e-8

    def test_bic_consistent_with_recomputation(self):
        rng = np.random.default_rng(4)
        data = svc_dataset(rng)
        fit = fit_mle(data, SPEC)
        nz_mu, nz_var = count_nonzero(fit.params)
        assert fit.bic == pytest.approx(
            bic_value(fit.loglik, nz_mu, nz_var, data.n), abs=1e-10)

    def test_trace_records_every_iteration(self):
        rng = np.random.default_rng(5)
        data = svc_dataset(rng)
        fit = fit_mle(data, SPEC)
        assert fit.n_iterations == len(fit.iterations)
        assert [s.t for s in fit.iterations] == list(range(1, fit.n_iterations + 1))
        lls = [s.loglik for s in fit.iterations]
        assert all(b >= a - 1e-6 for a, b in zip(lls, lls[1:]))  # monotone refinement


class TestAdaptiveWeights:
    def _fit_with(self, mu, sigma2):
        params = SvcParams(mu=mu, rho=np.full(len(sigma2), 0.2), sigma2=sigma2,
                           tau2=0.1)
        from svcsel.model import FitResult
        return FitResult(params=params, loglik=0.0, pen_loglik=0.0, bic=0.0)

    def test_reciprocal(self):
        wmu, wvar = adaptive_weights(self._fit_with([2.0], [0.5]))
        assert wmu[0] == pytest.approx(0.5)
        assert wvar[0] == pytest.approx(2.0)

    def test_pair_example(self):
        wmu, _ = adaptive_weights(self._fit_with([3.0, 1.5], [0.1, 0.1]))
        assert np.allclose(wmu, [1.0 / 3.0, 2.0 / 3.0])

    def test_zero_estimate_pins(self):
        wmu, wvar = adaptive_weights(self._fit_with([0.0, 1.0], [0.0, 0.2]))
        assert np.isinf(wmu[0]) and np.isinf(wvar[0])
        assert np.isfinite(wmu[1]) and np.isfinite(wvar[1])

    def test_epsilon_threshold(self):
        wmu, _ = adaptive_weights(self._fit_with([1e-11, 1.0], [0.1, 0.1]))
        assert np.isinf(wmu[0])


class TestCountNonzero:
    def test_balanced_design_truth(self):
        params = SvcParams(mu=[3, 1.5, 0, 0, 2, 0, 1, 0], rho=np.full(8, 0.1),
                           sigma2=[0.2, 0, 0.25, 0, 0.25, 0.2, 0, 0], tau2=0.1)
        assert count_nonzero(params) == (4, 4)

    def test_all_zero(self):
        params = SvcParams(mu=np.zeros(2), rho=[0.1, 0.1], sigma2=np.zeros(2),
                           tau2=0.1)
        assert count_nonzero(params) == (0, 0)

    def test_negative_zero_counts_as_zero(self):
        params = SvcParams(mu=[-0.0, 1.0], rho=[0.1, 0.1], sigma2=[0.0, 0.3],
                           tau2=0.1)
        assert count_nonzero(params) == (1, 1)


class TestFitPmle:
    def test_zero_penalty_matches_mle(self):
        rng = np.random.default_rng(6)
        data = svc_dataset(rng)
        mle = fit_mle(data, SPEC)
        pm = fit_pmle(data, (0.0, 0.0), mle, SPEC)
        assert abs(pm.loglik - mle.loglik) <= 1e-4
        assert pm.converged

    def test_huge_mean_penalty_zeroes_mu(self):
        rng = np.random.default_rng(7)
        data = svc_dataset(rng)
        mle = fit_mle(data, SPEC)
        pm = fit_pmle(data, (1e8, 1e-6), mle, SPEC)
        assert np.all(pm.params.mu == 0.0)
        assert count_nonzero(pm.params)[0] == 0

    def test_variance_support_subset_of_mle(self):
        rng = np.random.default_rng(8)
        for seed in range(4):
            data = svc_dataset(np.random.default_rng(100 + seed))
            mle = fit_mle(data, SPEC)
            pm = fit_pmle(data, (0.05, 0.05), mle, SPEC)
            mle_support = set(np.flatnonzero(mle.params.sigma2 > 0))
            pm_support = set(np.flatnonzero(pm.params.sigma2 > 0))
            assert pm_support <= mle_support

    def test_pinned_variances_stay_zero(self):
        rng = np.random.default_rng(9)
        data = svc_dataset(rng)
        mle = fit_mle(data, SPEC)
        zeros = np.flatnonzero(mle.params.sigma2 == 0.0)
        if zeros.size:
            pm = fit_pmle(data, (0.01, 0.01), mle, SPEC)
            assert np.all(pm.params.sigma2[zeros] == 0.0)

    def test_trace_bounded_and_flagged(self):
        rng = np.random.default_rng(10)
        data = svc_dataset(rng)
        mle = fit_mle(data, SPEC)
        cd = CdConfig(t_max=3)
        pm = fit_pmle(data, (0.1, 0.01), mle, SPEC, cd=cd)
        assert pm.n_iterations <= 3
        if pm.n_iterations == 3 and not pm.converged:
            assert pm.n_iterations == cd.t_max

    def test_pen_loglik_nondecreasing_up_to_tolerance(self):
        rng = np.random.default_rng(11)
        data = svc_dataset(rng)
        mle = fit_mle(data, SPEC)
        pm = fit_pmle(data, (0.05, 0.01), mle, SPEC)
        plls = [s.pen_loglik for s in pm.iterations]
        assert all(b >= a - 1e-5 for a, b in zip(plls, plls[1:]))

    def test_bic_consistency(self):
        rng = np.random.default_rng(12)
        data = svc_dataset(rng)
        mle = fit_mle(data, SPEC)
        pm = fit_pmle(data, (0.05, 0.02), mle, SPEC)
        nz_mu, nz_var = count_nonzero(pm.params)
        assert pm.bic == pytest.approx(
            bic_value(pm.loglik, nz_mu, nz_var, data.n), abs=1e-10)

    def test_sparsity_monotone_in_mean_penalty(self):
        # q = 0 with an orthonormal-style design: support shrinks as the
        # mean penalty grows
        rng = np.random.default_rng(13)
        n, p = 32, 4
        Q, _ = np.linalg.qr(rng.normal(size=(n, p)))
        X = Q * np.sqrt(n)
        y = X @ np.array([2.0, 1.0, 0.3, 0.0]) + 0.2 * rng.standard_normal(n)
        data = Dataset(y, X, np.zeros((n, 0)), rng.uniform(0, 1, (n, 2)))
        mle = fit_mle(data, SPEC)
        supports = []
        for lam in [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0]:
            pm = fit_pmle(data, (lam, 0.0), mle, SPEC)
            supports.append(count_nonzero(pm.params)[0])
        assert all(b <= a for a, b in zip(supports, supports[1:]))


class TestFiniteDifferenceFallback:
    def test_fd_mode_agrees_with_analytic(self):
        rng = np.random.default_rng(15)
        data = svc_dataset(rng, n=25)
        analytic = fit_mle(data, SPEC)
        fd = fit_mle(data, SPEC, use_fd_gradient=True)
        assert abs(analytic.loglik - fd.loglik) < 1e-3
        assert np.max(np.abs(analytic.params.mu - fd.params.mu)) < 1e-3


class TestUnidentifiedRangeReporting:
    def test_zero_variance_range_flagged(self):
        rng = np.random.default_rng(14)
        data = svc_dataset(rng)
        mle = fit_mle(data, SPEC)
        zeros = mle.params.unidentified_ranges()
        doc = mle.to_dict()
        for k, flag in enumerate(zeros):
            assert doc["estimates"]["gp"][k]["range_identifiable"] == (not flag)
