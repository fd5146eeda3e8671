"""Global-local shrinkage on the diagonal loadings.

The loadings are ``dtilde_h = g * lambda_h`` with half-Cauchy locals and a
half-Cauchy global truncated to ``(0, 1)``.  The samplers work with the
natural-scale global ``g`` and run the random walk on ``log g``.

With ``w_h = 1 / (1 + dtilde_h)`` the Wishart likelihood contributes
``w_h^{N phi / 2} exp(-c_h w_h)``, ``c_h = phi M_hh / (2 sigma^2)``, so after the
half-Cauchy slice the local update is a truncated gamma draw for ``w_h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, NumericError, UsageError


@dataclass
class IgHyper:
    """Inverse-gamma prior ``IG(alpha_sigma, beta_sigma)`` on the noise variance."""

    alpha_sigma: float
    beta_sigma: float

    def __post_init__(self):
        if not (self.alpha_sigma > 0 and self.beta_sigma > 0):
            raise ConfigError("inverse-gamma hyperparameters must be positive")

    @property
    def mean(self) -> float:
        if self.alpha_sigma <= 1:
            return float("inf")
        return self.beta_sigma / (self.alpha_sigma - 1.0)


@dataclass
class ShrinkState:
    tau: float
    lam: np.ndarray
    sigma2: float
    dtilde: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lam = np.array(self.lam, dtype=float)
        self.tau = float(self.tau)
        self.sigma2 = float(self.sigma2)
        if not 0.0 < self.tau < 1.0:
            raise UsageError(f"global scale must lie in (0, 1), got {self.tau}")
        if np.any(self.lam <= 0) or self.sigma2 <= 0:
            raise UsageError("local scales and sigma2 must be positive")
        self.dtilde = self.tau * self.lam

    @property
    def w(self) -> np.ndarray:
        return 1.0 / (1.0 + self.dtilde)

    def copy(self) -> "ShrinkState":
        return ShrinkState(self.tau, self.lam.copy(), self.sigma2)


def half_cauchy_logpdf(x, scale: float = 1.0):
    """Log-density of the half-Cauchy on (0, inf)."""
    x = np.asarray(x, dtype=float)
    out = np.log(2.0 / (np.pi * scale)) - np.log1p((x / scale) ** 2)
    return np.where(x >= 0, out, -np.inf)


def truncated_half_cauchy_logpdf(x):
    """Log-density of the standard half-Cauchy restricted to (0, 1)."""
    x = np.asarray(x, dtype=float)
    # the mass of (0, 1) under the half-Cauchy is 1/2
    out = np.log(4.0 / np.pi) - np.log1p(x**2)
    return np.where((x > 0) & (x < 1), out, -np.inf)


def local_conditional_logpdf(lam, g, m_hh, n_eff, phi, sigma2):
    """Unnormalized log full conditional of one local scale."""
    lam = np.asarray(lam, dtype=float)
    d = g * lam
    c = phi * m_hh / (2.0 * sigma2)
    return -0.5 * n_eff * phi * np.log1p(d) + c * d / (1.0 + d) - np.log1p(lam**2)


def global_log_target(mu, lam, m_diag, n_eff, phi, sigma2):
    """Unnormalized log conditional of ``mu = log g`` (``-inf`` when ``g >= 1``)."""
    if mu >= 0.0:
        return -np.inf
    d = np.exp(mu) * np.asarray(lam)
    c = phi * np.asarray(m_diag) / (2.0 * sigma2)
    ll = np.sum(-0.5 * n_eff * phi * np.log1p(d) + c * d / (1.0 + d))
    return float(ll + mu - np.log1p(np.exp(2.0 * mu)))


def _check_proper(n_eff, phi):
    if n_eff > 0 and n_eff * phi / 2.0 - 1.0 <= 0:
        raise ConfigError(f"N_eff * phi / 2 - 1 = {n_eff * phi / 2.0 - 1.0} <= 0: local conditional is improper")


def slice_update_locals(rng, state: ShrinkState, M_diag, N_eff: int, phi: float) -> ShrinkState:
    """Slice-sampler update of every local scale, one at a time.

    Parameters
    ----------
    rng : numpy.random.Generator
    state : ShrinkState
    M_diag : array of shape (r,)
        Diagonal of ``V' S V`` where ``S`` sums the ``N_eff`` observations.
    N_eff : int
        Number of observations; 0 draws the locals from their prior.
    phi : float

    Returns
    -------
    ShrinkState
        New state; only ``lam`` and ``dtilde`` differ.
    """
    _check_proper(N_eff, phi)
    m = np.ascontiguousarray(M_diag, dtype=float)
    if m.shape != state.lam.shape:
        raise UsageError("M_diag does not match the number of loadings")
    lam = _kernels.slice_locals(rng, state.lam.copy(), state.tau, m, int(N_eff), float(phi), state.sigma2)
    return ShrinkState(state.tau, lam, state.sigma2)


def mh_update_global(rng, state: ShrinkState, M_diag, N_eff: int, phi: float, step_sd: float = 0.1):
    """Random-walk Metropolis on ``log g``; returns ``(state, accepted)``."""
    mu = np.log(state.tau)
    prop = mu + step_sd * rng.standard_normal()
    if prop >= 0.0:
        return state, False
    sigma2 = state.sigma2
    cur = global_log_target(mu, state.lam, M_diag, N_eff, phi, sigma2)
    new = global_log_target(prop, state.lam, M_diag, N_eff, phi, sigma2)
    if np.log(rng.random()) < new - cur:
        return ShrinkState(float(np.exp(prop)), state.lam, sigma2), True
    return state, False


def sigma2_posterior(hyper: IgHyper, trQS: float, N_eff: int, p: int, phi: float):
    """Shape and rate of the inverse-gamma full conditional of ``sigma2``."""
    if trQS < 0:
        raise NumericError(f"tr(QS) = {trQS} < 0")
    shape = hyper.alpha_sigma - 1.0 + N_eff * p * phi / 2.0
    rate = hyper.beta_sigma + phi * trQS / 2.0
    return shape, rate


def gibbs_update_sigma2(rng, state: ShrinkState, hyper: IgHyper, trQS: float, N_eff: int, p: int, phi: float):
    shape, rate = sigma2_posterior(hyper, trQS, N_eff, p, phi)
    if shape <= 0:
        raise ConfigError(f"inverse-gamma shape {shape} <= 0")
    s2 = rate / rng.standard_gamma(shape)
    return ShrinkState(state.tau, state.lam, s2)


def tr_qs(state: ShrinkState, trS: float, M_diag) -> float:
    """``tr(Q S)`` with ``Q = (V Dt V' + I)^{-1} = I - V E^{-1} V'`` (Woodbury)."""
    return float(trS - np.sum((1.0 - state.w) * np.asarray(M_diag)))


def elicit_ig_hyper(data, r_star: int) -> IgHyper:
    """Moment-matched prior: mean and standard deviation both equal ``s_hat``.

    ``s_hat`` is the mean of the ``p - r_star`` smallest eigenvalues of the
    element-wise average of ``data``.
    """
    mats = np.asarray(data, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.shape[0] == 0:
        raise UsageError("no matrices to elicit from")
    p = mats.shape[-1]
    if p <= r_star:
        raise ConfigError(f"need p > r_star, got p={p}, r_star={r_star}")
    w = np.linalg.eigvalsh(mats.mean(axis=0))
    s_hat = float(np.mean(w[: p - r_star]))
    if s_hat <= 0:
        raise NumericError("non-positive noise level estimate")
    return IgHyper(3.0, 2.0 * s_hat)


def initial_state(r_star: int, sigma2: float) -> ShrinkState:
    return ShrinkState(0.1, np.ones(r_star), sigma2)


__all__ = [
    "IgHyper",
    "ShrinkState",
    "elicit_ig_hyper",
    "gibbs_update_sigma2",
    "global_log_target",
    "half_cauchy_logpdf",
    "initial_state",
    "local_conditional_logpdf",
    "mh_update_global",
    "sigma2_posterior",
    "slice_update_locals",
    "tr_qs",
    "truncated_half_cauchy_logpdf",
]
