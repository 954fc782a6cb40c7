import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import soft_threshold
from tosi.errors import ConvergenceError, DegreesOfFreedomError, DomainError, SingularityError
from tosi.harness import gen_regression
from tosi.numerics import RngStream
from tosi.regression import (DebiasConfig, RegressionBackend, cv_lasso, debiased_estimates,
                             debiased_lasso, lambda_max, lasso_cd, noise_variance, nodewise,
                             refit_noise_variance)


def design(n, p, seed=0):
    gen = RngStream(seed, "design").generator()
    return gen.standard_normal((n, p))


class TestLasso:
    @given(st.integers(0, 10_000), st.floats(0, 2))
    def test_single_predictor_soft_threshold(self, seed, lam):
        gen = np.random.default_rng(seed)
        x = gen.normal(size=30)
        x = x / np.sqrt(np.mean(x**2))
        y = 0.7 * x + gen.normal(size=30)
        fit = lasso_cd(x[:, None], y, lam)
        assert abs(fit.beta[0] - soft_threshold(x @ y / 30, lam)) <= 1e-10

    def test_zero_penalty_is_least_squares(self):
        X = design(60, 5)
        y = X @ np.arange(1.0, 6.0) + RngStream(1).generator().normal(size=60)
        fit = lasso_cd(X, y, 0.0)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        assert np.max(np.abs(fit.beta - ols)) < 1e-8

    def test_null_threshold(self):
        X = design(40, 8)
        y = X[:, 2] + RngStream(2).generator().normal(size=40)
        top = lambda_max(X, y)
        assert np.all(lasso_cd(X, y, top).beta == 0)
        assert np.any(lasso_cd(X, y, 0.9 * top).beta != 0)

    def test_objective_nonincreasing_and_kkt(self):
        X, y, _ = gen_regression(50, 80, 5, RngStream(3))
        fit = lasso_cd(X, y, 0.05, record=500)
        trace = fit.objective_trace
        assert trace.size >= 1
        assert np.all(np.diff(trace) <= 1e-12 * np.maximum(1.0, np.abs(trace[1:])))
        assert fit.kkt_residual <= 1e-8
        assert fit.support.size <= 50

    @given(st.floats(0.1, 50))
    def test_homogeneity(self, c):
        X, y, _ = gen_regression(40, 30, 3, RngStream(4))
        a = lasso_cd(X, y, 0.1)
        b = lasso_cd(X, c * y, 0.1 * c)
        assert np.max(np.abs(b.beta - c * a.beta)) <= 1e-10 * max(1.0, c)

    def test_warm_start_matches_cold(self):
        X, y, _ = gen_regression(40, 60, 5, RngStream(5))
        cold = lasso_cd(X, y, 0.08)
        warm = lasso_cd(X, y, 0.08, beta0=lasso_cd(X, y, 0.2).beta)
        assert np.max(np.abs(cold.beta - warm.beta)) < 1e-7

    def test_iteration_cap(self):
        X, y, _ = gen_regression(40, 60, 5, RngStream(5))
        with pytest.raises(ConvergenceError) as info:
            lasso_cd(X, y, 1e-4, max_sweeps=1)
        assert info.value.residual > 0

    def test_bad_inputs(self):
        with pytest.raises(DomainError):
            lasso_cd(np.ones((3, 2)), np.ones(4), 0.1)
        with pytest.raises(DomainError):
            lasso_cd(np.ones((3, 2)), np.ones(3), -1.0)


class TestNodewise:
    def test_orthogonal_design(self):
        Q, _ = np.linalg.qr(design(500, 6, seed=7))
        X = Q * np.sqrt(500)
        fit = nodewise(X, 2, 0.1)
        assert np.max(np.abs(fit.gamma)) < 0.1
        assert abs(fit.tau_sq - 1) < 0.1
        e = np.zeros(6)
        e[2] = 1
        assert np.max(np.abs(fit.theta_row - e)) < 0.1
        assert fit.theta_row[2] == pytest.approx(1 / fit.tau_sq)

    def test_two_by_two_precision_row(self):
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        X = RngStream(8).generator().multivariate_normal([0, 0], cov, size=2000)
        fit = nodewise(X, 0, 0.01)
        assert np.max(np.abs(fit.theta_row - np.linalg.inv(cov)[0])) < 0.15

    def test_theta_row_matches_definition(self):
        X = design(60, 5, seed=9) * np.array([1.0, 3.0, 0.5, 2.0, 1.0])
        fit = nodewise(X, 1, 0.2)
        row = np.insert(-fit.gamma, 1, 1.0) / fit.tau_sq
        assert np.allclose(fit.theta_row, row, atol=1e-12)
        r = X[:, 1] - np.delete(X, 1, axis=1) @ fit.gamma
        assert fit.tau_sq >= r @ r / 60 - 1e-12

    def test_duplicate_column(self):
        X = design(50, 4, seed=10)
        X[:, 3] = X[:, 1]
        # an exact copy drives tau^2 down to the penalty level itself
        assert nodewise(X, 1, 1e-3).tau_sq == pytest.approx(1e-3 * np.mean(X[:, 1] ** 2), rel=1e-6)
        with pytest.raises(SingularityError):
            nodewise(X, 1, 1e-12)

    def test_zero_column(self):
        X = design(20, 3)
        X[:, 0] = 0
        with pytest.raises(SingularityError):
            nodewise(X, 0, 0.1)


class TestDebiased:
    def test_ols_at_zero_penalty(self):
        X = design(80, 6, seed=11)
        y = X @ np.array([1.0, 0, 0, 2.0, 0, -1.0]) + RngStream(12).generator().normal(size=80)
        fit = debiased_lasso(X, y, cfg=DebiasConfig(lambda_main=0.0))
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        assert np.max(np.abs(fit.b - ols)) < 1e-8

    def test_orthogonal_design_is_ols(self):
        Q, _ = np.linalg.qr(design(100, 5, seed=13))
        X = Q * 10.0
        y = X @ np.array([1.0, 0.5, 0, 0, 0]) + RngStream(14).generator().normal(size=100)
        est = debiased_estimates(X, y, np.arange(5), DebiasConfig(lambda_main=0.0, lambda_node=0.01))
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        assert np.max(np.abs(est.theta[:, 0] - ols)) < 1e-6

    def test_separable_per_index(self):
        X, y, _ = gen_regression(60, 40, 4, RngStream(15))
        full = debiased_estimates(X, y, np.arange(40))
        part = debiased_estimates(X, y, [7, 2, 30])
        assert np.array_equal(part.theta[:, 0], full.theta[[7, 2, 30], 0])
        assert np.array_equal(part.sigma[:, 0, 0], full.sigma[[7, 2, 30], 0, 0])

    def test_orthogonal_two_column_unbiased(self):
        errs, ses = [], []
        for r in range(200):
            gen = RngStream(16, "o").child(r).generator()
            Q, _ = np.linalg.qr(gen.standard_normal((500, 2)))
            X = Q * np.sqrt(500)
            y = X @ np.array([1.0, 0.0]) + gen.standard_normal(500)
            fit = debiased_lasso(X, y)
            errs.append(fit.b - [1.0, 0.0])
            ses.append(np.sqrt(fit.variance / 500))
        errs = np.array(errs)
        assert np.all(np.abs(errs.mean(0)) < 3 * np.mean(ses, axis=0) / np.sqrt(200))

    def test_null_coordinate_calibration(self):
        from scipy import stats
        z = []
        for r in range(300):
            X, y, beta = gen_regression(100, 60, 5, RngStream(17).child(r))
            fit = debiased_lasso(X, y, [40])
            z.append(fit.b[0] / np.sqrt(fit.variance[0] / 100))
        assert stats.kstest(z, "norm").pvalue > 0.001

    def test_backend_response_column(self):
        X, y, _ = gen_regression(50, 10, 2, RngStream(18))
        data = np.column_stack([X[:, :3], y, X[:, 3:]])
        est = RegressionBackend(response=3)(data, [0, 5])
        ref = debiased_estimates(X, y, [0, 5])
        assert np.array_equal(est.theta, ref.theta)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            DebiasConfig(noise="mad")
        with pytest.raises(DomainError):
            DebiasConfig(lambda_node=-1.0)
        with pytest.raises(DomainError):
            DebiasConfig(sigma_passes=1)


class TestNoise:
    def test_exact_fit(self):
        X = design(10, 2)
        beta = np.array([1.0, -2.0])
        assert noise_variance(X, X @ beta, beta) == 0.0

    def test_null_beta_is_mean_square(self):
        y = RngStream(19).generator().normal(size=30)
        assert noise_variance(design(30, 4), y, np.zeros(4)) == pytest.approx(y @ y / 30)

    def test_degrees_of_freedom(self):
        with pytest.raises(DegreesOfFreedomError):
            noise_variance(design(3, 5), np.ones(3), np.ones(5))
        with pytest.raises(DegreesOfFreedomError):
            refit_noise_variance(design(3, 5), np.ones(3), np.ones(5))

    def test_experiment_design_level(self):
        values = []
        for r in range(200):
            X, y, beta = gen_regression(200, 50, 5, RngStream(20).child(r))
            lam = np.sqrt(2 * np.log(50) / 200)
            values.append(noise_variance(X, y, lasso_cd(X, y, lam).beta))
        assert abs(np.mean(values) - 1.0) < 0.15


class TestCrossValidation:
    def test_single_grid_value(self):
        X, y, _ = gen_regression(40, 10, 2, RngStream(21))
        lam, fit = cv_lasso(X, y, 5, [0.3], RngStream(1))
        assert lam == 0.3 and fit.lam == 0.3

    def test_pure_noise_prefers_null_end(self):
        hits = 0
        for r in range(100):
            gen = RngStream(22).child(r).generator()
            X = gen.standard_normal((60, 20))
            y = gen.standard_normal(60)
            top = lambda_max(X, y)
            grid = top * np.geomspace(1, 0.01, 20)
            lam, _ = cv_lasso(X, y, 10, grid, RngStream(23).child(r))
            hits += lam >= grid[4]
        assert hits >= 80

    def test_fold_size(self):
        with pytest.raises(DomainError):
            cv_lasso(design(10, 3), np.ones(10), 6, [0.1], RngStream(0))
        with pytest.raises(DomainError):
            cv_lasso(design(10, 3), np.ones(10), 2, [], RngStream(0))
