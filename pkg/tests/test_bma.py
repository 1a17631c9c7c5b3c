import numpy as np
import pytest
from scipy import stats

from trunccpe.bma import (
    CandidateModel,
    bma_predict,
    bma_weights,
    covariate_inclusion_models,
    log_marginal_likelihood,
)


def _models(n=12, seed=107):
    rng = np.random.default_rng(seed)
    x1, x2, x3 = rng.standard_normal((3, n))
    z = rng.standard_normal(n)
    return covariate_inclusion_models(x1, x2, x3), z


class TestCovariateInclusionModels:
    def test_count_and_widths(self):
        models, _ = _models()
        assert [m.index for m in models] == list(range(1, 9))
        assert [m.design.shape[1] for m in models] == [1, 2, 2, 2, 3, 3, 3, 4]

    def test_uniform_prior(self):
        models, _ = _models()
        assert all(m.prior == pytest.approx(1.0 / 8.0) for m in models)

    def test_restricted_prior(self):
        rng = np.random.default_rng(109)
        x1, x2, x3 = rng.standard_normal((3, 6))
        models = covariate_inclusion_models(x1, x2, x3, priors={5: 0.5, 8: 0.5})
        masses = {m.index: m.prior for m in models}
        assert masses[5] == 0.5 and masses[8] == 0.5
        assert sum(masses.values()) == pytest.approx(1.0)
        assert all(masses[i] == 0.0 for i in (1, 2, 3, 4, 6, 7))

    def test_intercept_always_first_column(self):
        models, _ = _models()
        for m in models:
            assert np.allclose(m.design[:, 0], 1.0)

    def test_full_model_contains_all_covariates(self):
        rng = np.random.default_rng(113)
        x1, x2, x3 = rng.standard_normal((3, 5))
        models = covariate_inclusion_models(x1, x2, x3)
        full = models[-1].design
        assert np.allclose(full[:, 1], x1)
        assert np.allclose(full[:, 2], x2)
        assert np.allclose(full[:, 3], x3)

    def test_negative_prior_rejected(self):
        with pytest.raises(ValueError):
            CandidateModel(index=1, design=np.ones((3, 1)), prior=-0.1)


class TestLogMarginalLikelihood:
    def test_matches_dense_gaussian(self):
        models, z = _models()
        v, sigma2 = 2.0, 0.7
        for m in models:
            x = m.design
            cov = v * (x @ x.T) + sigma2 * np.eye(z.size)
            expected = stats.multivariate_normal.logpdf(z, mean=np.zeros(z.size), cov=cov)
            assert log_marginal_likelihood(z, m, v, sigma2) == pytest.approx(
                expected, abs=1e-8
            )

    def test_quadrature_oracle_intercept_model(self):
        # independent route: 1-d trapezoid over the intercept coefficient
        z = np.array([0.4, -0.2, 0.9])
        v, sigma2 = 1.5, 0.6
        model = CandidateModel(index=1, design=np.ones((3, 1)), prior=1.0)
        beta = np.linspace(-12.0, 12.0, 40001)
        like = np.prod(
            stats.norm.pdf(z[:, None], loc=beta[None, :], scale=np.sqrt(sigma2)),
            axis=0,
        )
        integrand = like * stats.norm.pdf(beta, scale=np.sqrt(v))
        expected = np.log(np.trapezoid(integrand, beta))
        assert log_marginal_likelihood(z, model, v, sigma2) == pytest.approx(
            expected, abs=1e-8
        )

    def test_invalid(self):
        model = CandidateModel(index=1, design=np.ones((2, 1)), prior=1.0)
        with pytest.raises(ValueError):
            log_marginal_likelihood([1.0, 2.0], model, 0.0, 1.0)


class TestBmaWeights:
    def test_sum_to_one_and_positive(self):
        models, z = _models()
        w = bma_weights(z, models, v=5.0, sigma2=1.0)
        assert w.sum() == pytest.approx(1.0)
        assert np.all(w > 0)

    def test_identical_models_split_by_prior(self):
        design = np.ones((4, 1))
        models = [
            CandidateModel(index=1, design=design, prior=0.25),
            CandidateModel(index=2, design=design, prior=0.75),
        ]
        w = bma_weights([0.1, 0.2, 0.3, 0.4], models, v=1.0, sigma2=1.0)
        assert np.allclose(w, [0.25, 0.75])

    def test_zero_prior_gets_zero_weight(self):
        models, z = _models()
        restricted = [
            CandidateModel(m.index, m.design, 0.5 if m.index in (5, 8) else 0.0)
            for m in models
        ]
        w = bma_weights(z, restricted, v=5.0, sigma2=1.0)
        assert w.sum() == pytest.approx(1.0)
        mask = np.array([m.index in (5, 8) for m in models])
        assert np.all(w[~mask] == 0.0)
        assert np.all(w[mask] > 0)

    def test_softmax_by_hand(self):
        models, z = _models(n=6, seed=127)
        v, sigma2 = 3.0, 0.9
        logw = np.array(
            [
                log_marginal_likelihood(z, m, v, sigma2) + np.log(m.prior)
                for m in models
            ]
        )
        expected = np.exp(logw - logw.max())
        expected /= expected.sum()
        assert np.allclose(bma_weights(z, models, v, sigma2), expected, atol=1e-12)

    def test_true_model_dominates_with_strong_signal(self):
        rng = np.random.default_rng(131)
        n = 200
        x1, x2, x3 = rng.standard_normal((3, n))
        z = 2.0 + 3.0 * x1 + 0.01 * rng.standard_normal(n)
        models = covariate_inclusion_models(x1, x2, x3)
        w = bma_weights(z, models, v=10.0, sigma2=0.01**2)
        # models containing x1 should carry essentially all the mass
        with_x1 = [i for i, m in enumerate(models) if m.index in (2, 5, 6, 8)]
        assert w[with_x1].sum() > 0.999

    def test_errors(self):
        with pytest.raises(ValueError):
            bma_weights([1.0], [], v=1.0, sigma2=1.0)
        model = CandidateModel(index=1, design=np.ones((1, 1)), prior=0.0)
        with pytest.raises(ValueError):
            bma_weights([1.0], [model], v=1.0, sigma2=1.0)


class TestBmaPredict:
    def test_single_model_dense_oracle(self):
        rng = np.random.default_rng(137)
        n = 10
        x = np.column_stack([np.ones(n), rng.standard_normal(n)])
        z = rng.standard_normal(n)
        v, sigma2 = 2.0, 0.5
        model = CandidateModel(index=1, design=x, prior=1.0)
        cov = v * (x @ x.T) + sigma2 * np.eye(n)
        expected = v * (x @ x.T) @ np.linalg.solve(cov, z)
        got = bma_predict(z, [model], v, sigma2)
        assert np.max(np.abs(got - expected)) < 1e-10

    def test_convex_combination(self):
        models, z = _models(n=8, seed=139)
        v, sigma2 = 4.0, 1.0
        w = bma_weights(z, models, v, sigma2)
        singles = np.array(
            [bma_predict(z, [m], v, sigma2, weights=[1.0]) for m in models]
        )
        expected = w @ singles
        assert np.allclose(bma_predict(z, models, v, sigma2), expected, atol=1e-10)

    def test_shrinks_toward_zero(self):
        # posterior mean norm never exceeds the data norm for these smoothers
        models, z = _models(n=15, seed=149)
        pred = bma_predict(z, models, v=3.0, sigma2=1.0)
        assert np.linalg.norm(pred) < np.linalg.norm(z)
