"""Shared numeric substrate: distances, exponential covariances, stable
factorizations, Gaussian / inverse-gamma sampling, percentiles, and SNR
calibration. Everything here is pure given an explicit RNG handle."""

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))


class NotPositiveDefinite(Exception):
    """Cholesky failed even after the single jitter retry."""


def rng_stream(base_seed, *path):
    """Independent counter-based RNG stream keyed by (base_seed, *path).

    Distinct paths give independent streams, so replicate/chain work can be
    scheduled in any order without changing results. Path elements may be
    ints or short strings (strings are hashed to uint32).
    """
    key = []
    for p in path:
        if isinstance(p, str):
            key.append(zlib.crc32(p.encode()))
        else:
            key.append(int(p))
    ss = np.random.SeedSequence(int(base_seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SpatialLocations:
    """n points in R^d, arbitrary consistent units."""

    coords: np.ndarray  # (n, d)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ValueError("coords must be a nonempty (n, d) array")
        if not np.all(np.isfinite(c)):
            raise ValueError("coords contain NaN/Inf")
        object.__setattr__(self, "coords", c)

    @property
    def n(self):
        return self.coords.shape[0]


@dataclass(frozen=True)
class CovarianceSpec:
    """Exponential covariance: entries tau2 * exp(-decay * distance)."""

    tau2: float
    decay: float
    family: str = "exponential"

    def __post_init__(self):
        if self.family != "exponential":
            raise ValueError(f"unsupported covariance family: {self.family}")
        if not (self.tau2 > 0):
            raise ValueError("tau2 must be positive")
        if not (self.decay > 0):
            raise ValueError("decay must be positive")


@dataclass(frozen=True)
class DataVector:
    """Observed n-vector with known noise variance."""

    z: np.ndarray
    sigma2: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        if z.size == 0 or not np.all(np.isfinite(z)):
            raise ValueError("z must be nonempty and finite")
        if not (self.sigma2 > 0):
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.z.size


def distance_matrix(locs):
    """Symmetric matrix of pairwise Euclidean distances."""
    c = locs.coords
    diff = c[:, None, :] - c[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(d, 0.0)
    return d


def exp_covariance(dist, spec):
    """Covariance matrix tau2 * exp(-decay * dist)."""
    return spec.tau2 * np.exp(-spec.decay * np.asarray(dist, dtype=float))


def chol_factor(a):
    """Lower Cholesky factor and log-determinant of a symmetric matrix.

    One retry with diagonal jitter 1e-8 * mean(diag); raises
    NotPositiveDefinite if the jittered attempt also fails.
    """
    a = np.asarray(a, dtype=float)
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        jitter = 1e-8 * np.mean(np.diag(a))
        try:
            lower = np.linalg.cholesky(a + jitter * np.eye(a.shape[0]))
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                f"matrix of shape {a.shape} not positive definite after jitter"
            ) from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return lower, logdet


def mvn_logpdf(x, mean, cov):
    """Multivariate normal log-density."""
    x = np.asarray(x, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    lower, logdet = chol_factor(cov)
    alpha = solve_triangular(lower, x - mean, lower=True)
    return -0.5 * (x.size * LOG_2PI + logdet + float(alpha @ alpha))


def sample_mvn(mean, cov, rng):
    """One draw mean + L * xi with xi standard normal."""
    mean = np.asarray(mean, dtype=float).ravel()
    lower, _ = chol_factor(cov)
    return mean + lower @ rng.standard_normal(mean.size)


def sample_inverse_gamma(shape, rate, rng):
    """Draw X with density proportional to x^(-shape-1) * exp(-rate/x)."""
    if not (shape > 0 and rate > 0):
        raise ValueError("inverse-gamma shape and rate must be positive")
    return float(rate / rng.gamma(shape))


def percentile(values, d):
    """Linearly interpolated order statistic at fraction d in (0, 1].

    Index h = (m - 1) * d, interpolating between the floor/ceil ranks.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("percentile of empty sequence")
    if not np.all(np.isfinite(v)):
        raise ValueError("percentile input contains NaN/Inf")
    if not (0.0 < d <= 1.0):
        raise ValueError("d must lie in (0, 1]")
    return float(np.quantile(v, d))


def snr_to_sigma2(signal, snr):
    """Noise variance implied by a target signal-to-noise ratio.

    sigma2 = sample-variance(signal) / snr, with the n-1 divisor.
    """
    signal = np.asarray(signal, dtype=float).ravel()
    if signal.size < 2:
        raise ValueError("need at least two signal values")
    if not (snr > 0):
        raise ValueError("SNR must be positive")
    var = float(np.var(signal, ddof=1))
    if var == 0.0:
        raise ValueError("signal is constant; SNR is undefined")
    return var / snr
