"""Scaled Wishart log-likelihood under ``Omega = sigma2 (V diag(dtilde) V' + I)``.

The structured path never forms ``Omega``: ``log|Omega| = p log sigma2 +
sum log(1 + dtilde_h)`` and ``Omega^{-1} = sigma2^{-1} (I - V E^{-1} V')`` with
``E^{-1} = diag(dtilde / (1 + dtilde))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..linalg import log_mvgamma, logdet_spd, wishart_logpdf


@dataclass
class CellParams:
    """Parameters governing one observation: ``V``, ``dtilde``, ``sigma2``, ``phi``."""

    V: np.ndarray
    dtilde: np.ndarray
    sigma2: float
    phi: float

    def omega(self) -> np.ndarray:
        return omega_from(self.V, self.dtilde, self.sigma2)


def omega_from(v, dtilde, sigma2) -> np.ndarray:
    v = np.asarray(v)
    return sigma2 * ((v * np.asarray(dtilde)) @ v.T + np.eye(v.shape[0]))


def wishart_const(phi: float, p: int) -> float:
    return 0.5 * phi * p * np.log(phi / 2.0) - log_mvgamma(phi / 2.0, p)


def logdet_omega(dtilde, sigma2, p) -> float:
    return p * np.log(sigma2) + float(np.sum(np.log1p(dtilde)))


def cell_logliks(proj, trS, logdetS, dtilde, sigma2, phi, p) -> np.ndarray:
    """Vectorized structured log-likelihood.

    Parameters
    ----------
    proj : (T, r) array
        ``v_h' S_t v_h`` for every cell and column.
    trS, logdetS : (T,) arrays
    dtilde : (r,) array
    """
    e_inv = dtilde / (1.0 + dtilde)
    tr = (trS - proj @ e_inv) / sigma2
    return (
        wishart_const(phi, p)
        - 0.5 * phi * logdet_omega(dtilde, sigma2, p)
        + 0.5 * (phi - p - 1.0) * logdetS
        - 0.5 * phi * tr
    )


def projections(S, V) -> np.ndarray:
    """``v_h' S_t v_h`` for a stack ``S`` of shape (T, p, p)."""
    x = S @ V
    return np.einsum("tpr,pr->tr", x, V)


def loglik_cell(S, params: CellParams) -> float:
    """Structured (Woodbury) log-density of one observation."""
    S = np.asarray(S, dtype=float)
    p = S.shape[0]
    proj = projections(S[None], params.V)
    return float(
        cell_logliks(proj, np.array([np.trace(S)]), np.array([logdet_spd(S)]),
                     np.asarray(params.dtilde, dtype=float), params.sigma2, params.phi, p)[0]
    )


def loglik_cell_dense(S, params: CellParams) -> float:
    """Reference evaluation with an explicit ``Omega``."""
    return float(wishart_logpdf(S, params.phi, params.omega()))
