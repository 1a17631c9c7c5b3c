"""Bayesian model averaging over finitely many conjugate Gaussian regression
models: marginal likelihoods, posterior model weights, and the averaged
predictor."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .statcore import LOG_2PI, chol_factor


@dataclass(frozen=True)
class CandidateModel:
    """One candidate design with prior mass."""

    index: int
    design: np.ndarray  # (n, p_b), included columns only
    prior: float

    def __post_init__(self):
        if self.prior < 0:
            raise ValueError("prior mass must be nonnegative")
        object.__setattr__(self, "design", np.asarray(self.design, dtype=float))


def covariate_inclusion_models(x1, x2, x3, priors=None):
    """The eight intercept-plus-subset designs over three covariates.

    Model index runs 1..8 in the order: none, {1}, {2}, {3}, {1,2}, {1,3},
    {2,3}, {1,2,3}. Uniform prior unless priors (dict index -> mass) given.
    """
    n = np.asarray(x1).size
    ones = np.ones(n)
    subsets = [(), (0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)]
    cols = [np.asarray(x, dtype=float).ravel() for x in (x1, x2, x3)]
    models = []
    for i, subset in enumerate(subsets, start=1):
        design = np.column_stack([ones] + [cols[j] for j in subset])
        mass = 1.0 / len(subsets) if priors is None else priors.get(i, 0.0)
        models.append(CandidateModel(index=i, design=design, prior=mass))
    return models


def _marginal_chol(model, v, sigma2):
    x = model.design
    cov = v * (x @ x.T) + sigma2 * np.eye(x.shape[0])
    lower, logdet = chol_factor(cov)
    return lower, logdet


def log_marginal_likelihood(z, model, v, sigma2):
    """log integral of N(z | X beta, sigma2 I) N(beta | 0, v I) d beta.

    Equals log N(z; 0, v X X' + sigma2 I).
    """
    if not (v > 0 and sigma2 > 0):
        raise ValueError("v and sigma2 must be positive")
    z = np.asarray(z, dtype=float).ravel()
    lower, logdet = _marginal_chol(model, v, sigma2)
    alpha = solve_triangular(lower, z, lower=True)
    return -0.5 * (z.size * LOG_2PI + logdet + float(alpha @ alpha))


def bma_weights(z, models, v, sigma2):
    """Posterior model probabilities: softmax of log-marginal + log-prior."""
    if not models:
        raise ValueError("empty model set")
    priors = np.array([m.prior for m in models], dtype=float)
    if np.all(priors == 0):
        raise ValueError("all prior masses are zero")
    logw = np.full(len(models), -np.inf)
    for i, m in enumerate(models):
        if m.prior > 0:
            logw[i] = log_marginal_likelihood(z, m, v, sigma2) + np.log(m.prior)
    logw -= logsumexp(logw)
    return np.exp(logw)


def _posterior_mean(z, model, v, sigma2, lower=None):
    # E[y | z, b] = v X X' (v X X' + sigma2 I)^{-1} z
    x = model.design
    if lower is None:
        lower, _ = _marginal_chol(model, v, sigma2)
    return v * (x @ (x.T @ cho_solve((lower, True), z)))


def bma_predict(z, models, v, sigma2, weights=None):
    """Model-averaged conjugate posterior mean of y."""
    z = np.asarray(z, dtype=float).ravel()
    if weights is None:
        weights = bma_weights(z, models, v, sigma2)
    weights = np.asarray(weights, dtype=float)
    out = np.zeros(z.size)
    for w, m in zip(weights, models):
        if w > 0:
            out += w * _posterior_mean(z, m, v, sigma2)
    return out
