import numpy as np
import pytest

from trunccpe.predictors import (
    BlupInputs,
    blup,
    kriging_point,
    ols_fit,
    posterior_summary,
)
from trunccpe.statcore import (
    CovarianceSpec,
    SpatialLocations,
    distance_matrix,
    exp_covariance,
    rng_stream,
)


class TestOlsFit:
    def test_exact_line(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        design = np.column_stack([np.ones(4), x])
        z = 2.0 + 3.0 * x
        fitted, coef = ols_fit(design, z)
        assert np.allclose(coef, [2.0, 3.0])
        assert np.allclose(fitted, z)

    def test_intercept_only_is_mean(self):
        z = np.array([1.0, 2.0, 6.0])
        fitted, coef = ols_fit(np.ones((3, 1)), z)
        assert coef[0] == pytest.approx(3.0)
        assert np.allclose(fitted, 3.0)

    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(21)
        design = rng.standard_normal((30, 4))
        z = rng.standard_normal(30)
        _, coef = ols_fit(design, z)
        expected = np.linalg.solve(design.T @ design, design.T @ z)
        assert np.max(np.abs(coef - expected)) < 1e-10

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(23)
        design = rng.standard_normal((25, 3))
        z = rng.standard_normal(25)
        fitted, _ = ols_fit(design, z)
        assert np.max(np.abs(design.T @ (z - fitted))) < 1e-10

    def test_rank_deficient(self):
        design = np.column_stack([np.ones(5), np.ones(5)])
        with pytest.raises(ValueError):
            ols_fit(design, np.arange(5.0))


class TestBlup:
    def test_zero_noise_returns_data(self):
        rng = np.random.default_rng(29)
        locs = SpatialLocations(rng.random((6, 2)))
        sigma_y = exp_covariance(
            distance_matrix(locs), CovarianceSpec(tau2=1.0, decay=2.0)
        )
        inputs = BlupInputs.from_process(np.zeros(6), sigma_y, 0.0)
        z = rng.standard_normal(6)
        assert np.max(np.abs(blup(z, inputs) - z)) < 1e-6

    def test_huge_noise_returns_prior_mean(self):
        rng = np.random.default_rng(31)
        locs = SpatialLocations(rng.random((6, 2)))
        sigma_y = exp_covariance(
            distance_matrix(locs), CovarianceSpec(tau2=1.0, decay=2.0)
        )
        mu = np.full(6, 1.5)
        inputs = BlupInputs.from_process(mu, sigma_y, 1e10)
        z = rng.standard_normal(6)
        assert np.max(np.abs(blup(z, inputs) - mu)) < 1e-6

    def test_explicit_inverse_oracle(self):
        rng = np.random.default_rng(37)
        locs = SpatialLocations(rng.random((8, 2)))
        sigma_y = exp_covariance(
            distance_matrix(locs), CovarianceSpec(tau2=2.0, decay=3.0)
        )
        mu = rng.standard_normal(8)
        sigma2 = 0.7
        inputs = BlupInputs.from_process(mu, sigma_y, sigma2)
        z = rng.standard_normal(8)
        expected = mu + sigma_y @ np.linalg.inv(sigma_y + sigma2 * np.eye(8)) @ (
            z - mu
        )
        assert np.max(np.abs(blup(z, inputs) - expected)) < 1e-10

    def test_scalar_shrinkage(self):
        # n=1: prediction = mu + tau2/(tau2+sigma2) * (z - mu)
        inputs = BlupInputs.from_process([0.0], np.array([[2.0]]), 1.0)
        assert blup([3.0], inputs)[0] == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            BlupInputs.from_process([0.0, 0.0], np.eye(3), 1.0)


class TestKriging:
    def test_at_observed_location_matches_blup(self):
        rng = np.random.default_rng(41)
        locs = SpatialLocations(rng.random((7, 2)))
        spec = CovarianceSpec(tau2=1.3, decay=4.0)
        sigma2 = 0.5
        z = rng.standard_normal(7)
        mu_fn = lambda s: 0.0
        sigma_y = exp_covariance(distance_matrix(locs), spec)
        inputs = BlupInputs.from_process(np.zeros(7), sigma_y, sigma2)
        fitted = blup(z, inputs)
        for i in range(7):
            pred = kriging_point(locs.coords[i], z, locs, mu_fn, spec, sigma2)
            assert pred == pytest.approx(fitted[i], abs=1e-8)

    def test_far_location_reverts_to_mean(self):
        rng = np.random.default_rng(43)
        locs = SpatialLocations(rng.random((5, 2)))
        spec = CovarianceSpec(tau2=1.0, decay=2.0)
        z = rng.standard_normal(5) + 10.0
        mu_fn = lambda s: 4.0
        pred = kriging_point([100.0, 100.0], z, locs, mu_fn, spec, 1.0)
        assert pred == pytest.approx(4.0, abs=1e-6)

    def test_bad_dimension(self):
        locs = SpatialLocations([[0.0, 0.0], [1.0, 1.0]])
        spec = CovarianceSpec(tau2=1.0, decay=1.0)
        with pytest.raises(ValueError):
            kriging_point([0.5], [1.0, 2.0], locs, lambda s: 0.0, spec, 1.0)


class TestPosteriorSummary:
    def test_hand_values(self):
        samples = [[1.0, 10.0], [2.0, 20.0], [6.0, 30.0]]
        s = posterior_summary(samples)
        assert np.allclose(s.mean, [3.0, 20.0])
        assert np.allclose(s.median, [2.0, 20.0])
        # population sd: sqrt(mean of squared deviations)
        assert s.sd[0] == pytest.approx(np.sqrt(14.0 / 3.0))

    def test_single_sample(self):
        s = posterior_summary([[5.0, -1.0]])
        assert np.allclose(s.mean, [5.0, -1.0])
        assert np.allclose(s.median, [5.0, -1.0])
        assert np.allclose(s.sd, 0.0)

    def test_median_even_count(self):
        s = posterior_summary([[1.0], [2.0], [3.0], [100.0]])
        assert s.median[0] == pytest.approx(2.5)

    def test_empty(self):
        with pytest.raises(ValueError):
            posterior_summary(np.empty((0, 3)))
