"""Bayesian low-rank models for covariance-valued data.

Scaled Wishart likelihoods with a shared orthonormal dictionary, global-local
shrinkage of the loadings, and subject-specific change points.
"""
from .errors import ConfigError, CovWishError, DataError, DomainError, NumericError, UsageError
from .models import ChainTrace, Dataset, ModelConfig, fit
from .posthoc import compute_waic, detect_changes, estimate_rank

__version__ = "0.1.0"

__all__ = [
    "ChainTrace",
    "ConfigError",
    "CovWishError",
    "DataError",
    "Dataset",
    "DomainError",
    "ModelConfig",
    "NumericError",
    "UsageError",
    "compute_waic",
    "detect_changes",
    "estimate_rank",
    "fit",
]
