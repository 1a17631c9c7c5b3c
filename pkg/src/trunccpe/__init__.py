"""Truncated covariance-penalized-error (CPE) Bayesian hierarchical modeling
for Gaussian data: criteria, predictors, a constraint-filtered Gibbs sampler,
Bayesian model averaging, and reproducible experiment runners."""

__version__ = "0.1.0"

from .criteria import (
    CpeEvaluator,
    CriterionValue,
    cpe_blup,
    kfold_cv_err,
    mallows_cp,
    theorem1_quantities,
    training_error,
    waic,
)
from .predictors import BlupInputs, PosteriorSummary, blup, kriging_point, ols_fit, posterior_summary
from .sampler import (
    Chain,
    ChainState,
    GibbsConfig,
    InitializationExhausted,
    ModelSpec,
    kappa_from_percentile,
    run_gibbs,
    warm_state,
)
from .statcore import (
    CovarianceSpec,
    DataVector,
    NotPositiveDefinite,
    SpatialLocations,
    chol_factor,
    distance_matrix,
    exp_covariance,
    mvn_logpdf,
    percentile,
    rng_stream,
    sample_inverse_gamma,
    sample_mvn,
    snr_to_sigma2,
)

__all__ = [name for name in dir() if not name.startswith("_")]
