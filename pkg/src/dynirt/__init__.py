"""Dynamic Gaussian-process item response theory.

Latent trait trajectories follow smooth Gaussian-process priors over time,
item response functions are nonparametric Gaussian-process draws around affine
trends, and ordinal responses arise through an ordered-probit link. Posterior
inference runs a Gibbs sampler whose conditional updates all use elliptical
slice sampling.
"""

from .data import GroundTruth, HyperParams, ResponseDataset, validate_dataset
from .diagnostics import ess_count, rhat
from .engine import (
    PosteriorSamples,
    SamplerConfig,
    align_signs,
    forecast_responses,
    forecast_traits,
    predict_responses,
    run,
)
from .metrics import icc_from_samples, icc_rmse, predictive_scores, trait_correlation
from .simulate import SimConfig, generate, train_test_split

__all__ = [
    "GroundTruth",
    "HyperParams",
    "PosteriorSamples",
    "ResponseDataset",
    "SamplerConfig",
    "SimConfig",
    "align_signs",
    "ess_count",
    "forecast_responses",
    "forecast_traits",
    "generate",
    "icc_from_samples",
    "icc_rmse",
    "predict_responses",
    "predictive_scores",
    "rhat",
    "run",
    "trait_correlation",
    "train_test_split",
    "validate_dataset",
]

__version__ = "0.1.0"
