"""Point predictors: OLS, best linear unbiased prediction (BLUP), kriging
at an unobserved location, and chain-based posterior summaries."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .statcore import chol_factor, distance_matrix, exp_covariance


@dataclass(frozen=True)
class BlupInputs:
    """Prior mean, process covariance, and marginal data covariance.

    sigma_z is always formed as sigma_y + sigma2 * I via from_process so
    callers never pass inconsistent pairs.
    """

    mu_y: np.ndarray
    sigma_y: np.ndarray
    sigma_z: np.ndarray

    @classmethod
    def from_process(cls, mu_y, sigma_y, sigma2):
        mu_y = np.asarray(mu_y, dtype=float).ravel()
        sigma_y = np.asarray(sigma_y, dtype=float)
        if sigma_y.shape != (mu_y.size, mu_y.size):
            raise ValueError("mu_y / sigma_y dimension mismatch")
        if sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        sigma_z = sigma_y + sigma2 * np.eye(mu_y.size)
        return cls(mu_y=mu_y, sigma_y=sigma_y, sigma_z=sigma_z)


@dataclass(frozen=True)
class PosteriorSummary:
    """Coordinatewise mean, median, and standard deviation over chain states."""

    mean: np.ndarray
    median: np.ndarray
    sd: np.ndarray


def ols_fit(design, z):
    """Least-squares fit; returns (fitted values, coefficients).

    Raises on rank deficiency.
    """
    design = np.asarray(design, dtype=float)
    z = np.asarray(z, dtype=float).ravel()
    coef, _, rank, _ = np.linalg.lstsq(design, z, rcond=None)
    if rank < design.shape[1]:
        raise ValueError(
            f"design is rank deficient (rank {rank} < {design.shape[1]} columns)"
        )
    return design @ coef, coef


def blup(z, inputs):
    """Best linear unbiased predictor mu_y + sigma_y sigma_z^{-1} (z - mu_y)."""
    z = np.asarray(z, dtype=float).ravel()
    lower, _ = chol_factor(inputs.sigma_z)
    resid = z - inputs.mu_y
    return inputs.mu_y + inputs.sigma_y @ cho_solve((lower, True), resid)


def kriging_point(s0, z, locs, mu_fn, spec, sigma2):
    """Kriging prediction at location s0.

    mu(s0) + cov{Y(s0), z} sigma_z^{-1} (z - mu_Y), with covariances from
    the exponential family.
    """
    s0 = np.asarray(s0, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    coords = locs.coords
    if s0.size != coords.shape[1]:
        raise ValueError("s0 dimension does not match the observed locations")
    sigma_y = exp_covariance(distance_matrix(locs), spec)
    sigma_z = sigma_y + sigma2 * np.eye(coords.shape[0])
    c0 = spec.tau2 * np.exp(-spec.decay * np.sqrt(np.sum((coords - s0) ** 2, axis=1)))
    mu_obs = np.array([mu_fn(s) for s in coords], dtype=float)
    lower, _ = chol_factor(sigma_z)
    return float(mu_fn(s0)) + float(c0 @ cho_solve((lower, True), z - mu_obs))


def posterior_summary(samples):
    """Coordinatewise mean / interpolated median / sd of a set of vectors."""
    arr = np.atleast_2d(np.asarray(samples, dtype=float))
    if arr.size == 0:
        raise ValueError("posterior_summary of empty sample set")
    return PosteriorSummary(
        mean=arr.mean(axis=0),
        median=np.median(arr, axis=0),
        sd=arr.std(axis=0),
    )
