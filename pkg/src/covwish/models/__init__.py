"""Generative models and their samplers."""
from __future__ import annotations

from .data import ChainTrace, Dataset, ModelConfig
from .dynamic import fit_dynamic
from .likelihood import CellParams, loglik_cell, loglik_cell_dense
from .static import fit_changepoint, fit_hierarchical, fit_independence

FITTERS = {
    "independence": fit_independence,
    "hierarchical": fit_hierarchical,
    "changepoint": fit_changepoint,
    "dynamic": fit_dynamic,
}


def fit(data: Dataset, config: ModelConfig) -> ChainTrace:
    """Run the sampler selected by ``config.model``."""
    return FITTERS[config.model](data, config)


__all__ = [
    "CellParams",
    "ChainTrace",
    "Dataset",
    "ModelConfig",
    "fit",
    "fit_changepoint",
    "fit_dynamic",
    "fit_hierarchical",
    "fit_independence",
    "loglik_cell",
    "loglik_cell_dense",
]
