import numpy as np
import pytest
from scipy import stats

from trunccpe.criteria import (
    CpeEvaluator,
    cpe_blup,
    kappa_star,
    kfold_cv_err,
    mallows_cp,
    pointwise_loglik,
    theorem1_quantities,
    training_error,
    waic,
)
from trunccpe.predictors import ols_fit
from trunccpe.statcore import (
    CovarianceSpec,
    SpatialLocations,
    distance_matrix,
    exp_covariance,
    mvn_logpdf,
    rng_stream,
)


def _problem(n=9, seed=47, p=2):
    rng = np.random.default_rng(seed)
    locs = SpatialLocations(rng.random((n, 2)))
    design = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    z = rng.standard_normal(n)
    beta = rng.standard_normal(p)
    return locs, design, z, beta


class TestTrainingError:
    def test_zero_when_exact(self):
        assert training_error([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert training_error([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]) == pytest.approx(14.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            training_error([1.0], [1.0, 2.0])


class TestMallowsCp:
    def test_hand_value(self):
        c = mallows_cp([1.0, 2.0], [0.0, 0.0], p=2, sigma2=0.5)
        assert c.value == pytest.approx(5.0 + 2.0)
        assert c.components["fit"] == pytest.approx(5.0)
        assert c.components["penalty"] == pytest.approx(2.0)

    def test_ols_penalty_counts_columns(self):
        rng = np.random.default_rng(51)
        design = np.column_stack([np.ones(20), rng.standard_normal((20, 2))])
        z = rng.standard_normal(20)
        fitted, _ = ols_fit(design, z)
        c = mallows_cp(z, fitted, p=design.shape[1], sigma2=1.0)
        assert c.components["penalty"] == pytest.approx(6.0)
        assert c.value == pytest.approx(training_error(z, fitted) + 6.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            mallows_cp([1.0], [1.0], p=-1, sigma2=1.0)
        with pytest.raises(ValueError):
            mallows_cp([1.0], [1.0], p=1, sigma2=0.0)


class TestCpeBlup:
    def test_dense_matrix_oracle(self):
        # independent route: explicit Sigma_Y Sigma_Z^{-1} matrices
        locs, design, z, beta = _problem()
        tau2, b, sigma2 = 1.4, 8.0, 0.6
        sigma_y = exp_covariance(
            distance_matrix(locs), CovarianceSpec(tau2=tau2, decay=b)
        )
        smoother = sigma_y @ np.linalg.inv(sigma_y + sigma2 * np.eye(z.size))
        resid = z - design @ beta
        yhat = design @ beta + smoother @ resid
        fit_expected = float(np.sum((z - yhat) ** 2))
        pen_expected = 2.0 * sigma2 * float(np.trace(smoother))
        c = cpe_blup(z, beta, tau2, b, sigma2, design, locs)
        assert c.components["fit"] == pytest.approx(fit_expected, rel=1e-9)
        assert c.components["penalty"] == pytest.approx(pen_expected, rel=1e-9)
        assert c.value == pytest.approx(fit_expected + pen_expected, rel=1e-9)

    def test_predict_matches_dense_blup(self):
        locs, design, z, beta = _problem(seed=53)
        tau2, b, sigma2 = 0.8, 15.0, 1.1
        ev = CpeEvaluator(design, locs, [b], sigma2)
        sigma_y = exp_covariance(
            distance_matrix(locs), CovarianceSpec(tau2=tau2, decay=b)
        )
        resid = z - design @ beta
        expected = design @ beta + sigma_y @ np.linalg.solve(
            sigma_y + sigma2 * np.eye(z.size), resid
        )
        assert np.max(np.abs(ev.predict(z, beta, tau2, b) - expected)) < 1e-8

    def test_penalty_bounds(self):
        # effective dof penalty lies in (0, 2 sigma2 n)
        locs, design, z, beta = _problem(seed=59)
        c = cpe_blup(z, beta, 2.0, 10.0, 0.5, design, locs)
        assert 0.0 < c.components["penalty"] < 2.0 * 0.5 * z.size

    def test_tau2_to_zero_penalty_vanishes(self):
        locs, design, z, beta = _problem(seed=61)
        c = cpe_blup(z, beta, 1e-12, 10.0, 1.0, design, locs)
        assert c.components["penalty"] == pytest.approx(0.0, abs=1e-8)
        assert c.components["fit"] == pytest.approx(
            float(np.sum((z - design @ beta) ** 2)), rel=1e-6
        )

    def test_evaluator_matches_wrapper_bitwise(self):
        locs, design, z, beta = _problem(seed=67)
        levels = [10.0, 20.0, 30.0]
        ev = CpeEvaluator(design, locs, levels, 0.9)
        for b in levels:
            wrapped = cpe_blup(z, beta, 1.2, b, 0.9, design, locs).value
            assert ev.cpe(z, beta, 1.2, b) == wrapped

    def test_recomputation_bit_identical(self):
        locs, design, z, beta = _problem(seed=71)
        ev = CpeEvaluator(design, locs, [10.0], 0.9)
        a = ev.cpe(z, beta, 1.2, 10.0)
        b = ev.cpe(z, beta, 1.2, 10.0)
        assert a == b

    def test_invalid(self):
        locs, design, z, beta = _problem()
        with pytest.raises(ValueError):
            cpe_blup(z, beta, -1.0, 10.0, 1.0, design, locs)
        with pytest.raises(ValueError):
            CpeEvaluator(design, locs, [10.0], 0.0)


class TestKfoldCv:
    def test_zero_predictor_equals_mean_square(self):
        # equal-size folds: average fold MSE = overall mean of z^2
        rng = np.random.default_rng(73)
        z = rng.standard_normal(20)
        c = kfold_cv_err(z, 4, lambda tr, va: np.zeros(va.size), seed=1)
        assert c.value == pytest.approx(float(np.mean(z**2)))

    def test_perfect_predictor(self):
        z = np.arange(12, dtype=float)
        c = kfold_cv_err(z, 3, lambda tr, va: z[va], seed=0)
        assert c.value == 0.0

    def test_loo_train_mean_oracle(self):
        # leave-one-out with the train-mean predictor has a closed form:
        # err_i = (z_i - mean(z_-i))^2 = ((n/(n-1)) (z_i - zbar))^2
        z = np.array([1.0, 4.0, 5.0, 10.0])
        n = z.size
        c = kfold_cv_err(
            z, n, lambda tr, va: np.full(va.size, np.mean(z[tr])), seed=0
        )
        expected = float(np.mean(((n / (n - 1)) * (z - z.mean())) ** 2))
        assert c.value == pytest.approx(expected)

    def test_seed_changes_partition_not_validity(self):
        rng = np.random.default_rng(79)
        z = rng.standard_normal(21)
        vals = {
            kfold_cv_err(
                z, 5, lambda tr, va: np.full(va.size, np.mean(z[tr])), seed=s
            ).value
            for s in range(3)
        }
        assert len(vals) > 1  # partition depends on seed
        assert all(v > 0 for v in vals)

    def test_same_seed_reproducible(self):
        rng = np.random.default_rng(83)
        z = rng.standard_normal(15)
        fp = lambda tr, va: np.full(va.size, np.mean(z[tr]))
        assert kfold_cv_err(z, 5, fp, seed=9).value == kfold_cv_err(
            z, 5, fp, seed=9
        ).value

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            kfold_cv_err([1.0, 2.0], 1, lambda tr, va: np.zeros(va.size))
        with pytest.raises(ValueError):
            kfold_cv_err([1.0, 2.0], 3, lambda tr, va: np.zeros(va.size))


class TestWaic:
    def test_hand_matrix(self):
        ll = np.array([[-1.0, -2.0], [-3.0, -1.0]])
        lppd = np.log(np.mean(np.exp(ll), axis=0))
        p2 = np.var(ll, axis=0, ddof=1)
        expected = float(np.sum(-2.0 * (lppd - p2)))
        c = waic(ll)
        assert c.value == pytest.approx(expected, rel=1e-12)
        assert c.components["lppd"] == pytest.approx(float(np.sum(lppd)))
        assert c.components["p_waic"] == pytest.approx(float(np.sum(p2)))

    def test_constant_rows_zero_penalty(self):
        ll = np.full((50, 4), -1.3)
        c = waic(ll)
        assert c.components["p_waic"] == pytest.approx(0.0)
        assert c.value == pytest.approx(-2.0 * 4 * -1.3)

    def test_extreme_values_stable(self):
        ll = np.array([[-1000.0, -1.0], [-1001.0, -1.1], [-999.0, -0.9]])
        c = waic(ll)
        assert np.isfinite(c.value)

    def test_pointwise_sums_to_total(self):
        rng = np.random.default_rng(89)
        ll = rng.normal(-2.0, 0.3, size=(40, 7))
        c = waic(ll)
        assert float(np.sum(c.components["pointwise"])) == pytest.approx(c.value)

    def test_invalid(self):
        with pytest.raises(ValueError):
            waic(np.array([[-1.0, -2.0]]))  # single state
        with pytest.raises(ValueError):
            waic(np.array([[-1.0], [np.nan]]))


class TestPointwiseLoglik:
    def test_matches_scipy_norm(self):
        rng = np.random.default_rng(97)
        z = rng.standard_normal(5)
        y = rng.standard_normal((4, 5))
        sigma2 = 1.7
        got = pointwise_loglik(z, y, sigma2)
        expected = stats.norm.logpdf(z[None, :], loc=y, scale=np.sqrt(sigma2))
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_rows_sum_to_joint(self):
        rng = np.random.default_rng(101)
        z = rng.standard_normal(6)
        y = rng.standard_normal(6)
        sigma2 = 0.8
        row = pointwise_loglik(z, y[None, :], sigma2)[0]
        assert float(np.sum(row)) == pytest.approx(
            mvn_logpdf(z, y, sigma2 * np.eye(6)), abs=1e-10
        )


class TestTheorem1:
    def test_identity_holds_nonnegative_cpe(self):
        rng = np.random.default_rng(103)
        z = rng.standard_normal(4)
        y = rng.standard_normal(4)
        sigma2 = 1.2
        f = np.exp(mvn_logpdf(z, y, sigma2 * np.eye(4)))
        for cpe in (0.0, 0.5, 3.0, 12.0):
            r, quantity = theorem1_quantities(z, y, sigma2, cpe)
            assert quantity == pytest.approx(f, rel=1e-10)

    def test_r_formula(self):
        z = np.array([0.0])
        y = np.array([1.0])
        sigma2 = 1.0
        logf = mvn_logpdf(z, y, np.eye(1))
        r, _ = theorem1_quantities(z, y, sigma2, 4.0)
        assert r == pytest.approx(4.0 / (2.0 * logf) + 1.0)

    def test_zero_logf_rejected(self):
        # 1-d Gaussian with sigma2 = 1/(2 pi) has density exactly 1 at the mean
        sigma2 = 1.0 / (2.0 * np.pi)
        with pytest.raises(ValueError):
            theorem1_quantities([0.0], [0.0], sigma2, 1.0)


class TestKappaStar:
    def test_u_one(self):
        assert kappa_star(1.0) == 0.0

    def test_hand_value(self):
        assert kappa_star(np.exp(-3.0)) == pytest.approx(6.0)

    def test_small_u_large_bound(self):
        assert kappa_star(1e-100) > 400.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            kappa_star(0.0)
        with pytest.raises(ValueError):
            kappa_star(1.5)
