"""Prediction-error criteria: training error, Mallow's Cp, the BLUP-form
covariance penalized error (CPE), K-fold cross-validation, WAIC, and the
augmentation quantities behind the truncation identity."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .statcore import LOG_2PI, distance_matrix, mvn_logpdf, percentile, rng_stream


@dataclass(frozen=True)
class CriterionValue:
    """One prediction-error estimate with an optional fit/penalty breakdown."""

    value: float
    kind: str  # training | cp | cpe_blup | kfold_cv | waic
    components: dict = field(default_factory=dict)


def training_error(z, fitted):
    """Sum of squared in-sample residuals."""
    z = np.asarray(z, dtype=float).ravel()
    fitted = np.asarray(fitted, dtype=float).ravel()
    if z.size != fitted.size:
        raise ValueError("z and fitted have different lengths")
    return float(np.sum((z - fitted) ** 2))


def mallows_cp(z, fitted, p, sigma2):
    """Training error plus 2 * sigma2 * p, the OLS covariance penalty."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    if not (sigma2 > 0):
        raise ValueError("sigma2 must be positive")
    fit = training_error(z, fitted)
    penalty = 2.0 * sigma2 * p
    return CriterionValue(fit + penalty, "cp", {"fit": fit, "penalty": penalty})


class CpeEvaluator:
    """Fast BLUP-form CPE for a fixed (design, locations, sigma2) problem.

    Eigendecomposes the unit-scale correlation matrix exp(-b * D) once per
    decay level; a CPE evaluation is then O(n^2) for any (beta, tau2, b).
    This is the canonical CPE code path: the standalone cpe_blup wrapper and
    the Gibbs sampler both go through it, so a recomputed CPE is bit-identical
    to a cached one.
    """

    def __init__(self, design, locs, b_levels, sigma2):
        if not (sigma2 > 0):
            raise ValueError("sigma2 must be positive")
        self.design = np.asarray(design, dtype=float)
        self.sigma2 = float(sigma2)
        dist = distance_matrix(locs)
        self._eig = {}
        for b in b_levels:
            b = float(b)
            lam, q = np.linalg.eigh(np.exp(-b * dist))
            # floor guards roundoff-negative eigenvalues of near-singular H
            self._eig[b] = (np.clip(lam, 1e-12, None), q)

    def levels(self):
        return sorted(self._eig)

    def _transform(self, z, beta, b):
        lam, q = self._eig[float(b)]
        resid = np.asarray(z, dtype=float).ravel() - self.design @ np.asarray(
            beta, dtype=float
        ).ravel()
        return lam, q, q.T @ resid

    def components(self, z, beta, tau2, b):
        """(fit term, covariance penalty) at one parameter point."""
        if not (tau2 > 0):
            raise ValueError("tau2 must be positive")
        lam, _, t = self._transform(z, beta, b)
        gain = tau2 * lam / (tau2 * lam + self.sigma2)
        fit = float(np.sum(((1.0 - gain) * t) ** 2))
        penalty = 2.0 * self.sigma2 * float(np.sum(gain))
        return fit, penalty

    def cpe(self, z, beta, tau2, b):
        fit, penalty = self.components(z, beta, tau2, b)
        return fit + penalty

    def predict(self, z, beta, tau2, b):
        """BLUP X beta + Sigma_Y Sigma_Z^{-1} (z - X beta)."""
        lam, q, t = self._transform(z, beta, b)
        gain = tau2 * lam / (tau2 * lam + self.sigma2)
        return self.design @ np.asarray(beta, dtype=float).ravel() + q @ (gain * t)


def cpe_blup(z, beta, tau2, b, sigma2, design, locs):
    """BLUP-form CPE: ||z - yhat||^2 + 2 sigma2 trace(Sigma_Y Sigma_Z^{-1}).

    The process mean is X beta and the process covariance is the exponential
    family tau2 * exp(-b * distance). The penalty is the effective degrees
    of freedom times 2 sigma2.
    """
    evaluator = CpeEvaluator(design, locs, [b], sigma2)
    fit, penalty = evaluator.components(z, beta, tau2, b)
    return CriterionValue(fit + penalty, "cpe_blup", {"fit": fit, "penalty": penalty})


def kfold_cv_err(z, k, fit_predict, seed=0):
    """K-fold cross-validation estimate of prediction error.

    Fold assignment is a seeded shuffle followed by contiguous blocks;
    k = n gives leave-one-out. fit_predict(train_idx, val_idx) must return
    predictions at the validation indices. Returns the average over folds
    of the per-fold mean squared validation error.
    """
    z = np.asarray(z, dtype=float).ravel()
    n = z.size
    if not (2 <= k <= n):
        raise ValueError("k must satisfy 2 <= k <= n")
    order = rng_stream(seed, "kfold").permutation(n)
    folds = np.array_split(order, k)
    errors = []
    for val_idx in folds:
        train_idx = np.setdiff1d(order, val_idx, assume_unique=True)
        pred = np.asarray(fit_predict(train_idx, val_idx), dtype=float).ravel()
        errors.append(float(np.mean((z[val_idx] - pred) ** 2)))
    return CriterionValue(float(np.mean(errors)), "kfold_cv", {"fold_errors": errors})


def waic(loglik):
    """WAIC from a (chain states x data points) pointwise log-likelihood matrix.

    -2 * sum_i [ log mean_g exp(l_gi) - var_g(l_gi) ], log-sum-exp
    stabilized; the penalty is the posterior variance of the pointwise
    log-likelihood. Smaller is better.
    """
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2 or loglik.shape[0] < 2:
        raise ValueError("need a (G >= 2) x n log-likelihood matrix")
    if not np.all(np.isfinite(loglik)):
        raise ValueError("log-likelihood matrix contains NaN/Inf")
    g = loglik.shape[0]
    lppd = logsumexp(loglik, axis=0) - np.log(g)
    p_waic = np.var(loglik, axis=0, ddof=1)
    pointwise = -2.0 * (lppd - p_waic)
    return CriterionValue(
        float(np.sum(pointwise)),
        "waic",
        {"lppd": float(np.sum(lppd)), "p_waic": float(np.sum(p_waic)), "pointwise": pointwise},
    )


def pointwise_loglik(z, y_samples, sigma2):
    """Per-state, per-point Gaussian log f(z_i | y_i, sigma2)."""
    z = np.asarray(z, dtype=float).ravel()
    y_samples = np.atleast_2d(np.asarray(y_samples, dtype=float))
    return -0.5 * (LOG_2PI + np.log(sigma2)) - (z[None, :] - y_samples) ** 2 / (
        2.0 * sigma2
    )


def theorem1_quantities(z, y, sigma2, cpe_value):
    """Augmentation exponent r and the reassembled joint factor.

    r = cpe / (2 log f(z|y, sigma2)) + 1; the returned factor is
    f^r * min(1, exp(-cpe/2)), which equals f whenever cpe >= 0.
    Computed in log space.
    """
    logf = mvn_logpdf(z, y, sigma2 * np.eye(np.asarray(z).size))
    if logf == 0.0:
        raise ValueError("log-density is exactly zero; r is undefined")
    r = cpe_value / (2.0 * logf) + 1.0
    log_quantity = r * logf + min(0.0, -cpe_value / 2.0)
    return r, float(np.exp(log_quantity))


def kappa_star(u):
    """Implicit truncation bound -2 log(u) for u in (0, 1]."""
    if not (0.0 < u <= 1.0):
        raise ValueError("u must lie in (0, 1]")
    return -2.0 * float(np.log(u))


__all__ = [
    "CriterionValue",
    "CpeEvaluator",
    "training_error",
    "mallows_cp",
    "cpe_blup",
    "kfold_cv_err",
    "waic",
    "pointwise_loglik",
    "theorem1_quantities",
    "kappa_star",
    "percentile",
]
