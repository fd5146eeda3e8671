"""Dense SPD primitives: symmetrization, spectral functions, distances, Wishart
sampling and density, and uniform draws on the Stiefel manifold.

Matrices are plain ``numpy`` arrays.  ``as_spd`` is the one place where a
symmetric matrix is built from possibly asymmetric input; the upper triangle
wins.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, UsageError

# relative eigenvalue floor applied before log / sqrt
EIG_FLOOR = 1e-12


class EigenDecomp(NamedTuple):
    values: np.ndarray  # descending
    vectors: np.ndarray


def as_spd(a, validate: bool = False) -> np.ndarray:
    """Return a symmetric copy of ``a`` with the upper triangle mirrored down.

    With ``validate=True`` the smallest eigenvalue must exceed
    ``-1e-10 * s_max``; otherwise ``DomainError`` is raised.
    """
    a = np.array(a, dtype=float, copy=True)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise UsageError(f"expected square matrices, got shape {a.shape}")
    upper = np.triu(a)
    a = upper + np.swapaxes(np.triu(a, 1), -1, -2)
    if validate:
        check_spd(a)
    return a


def check_spd(a, strict: bool = False) -> None:
    """Raise ``DomainError`` unless every matrix in ``a`` is (numerically) PD."""
    w = np.linalg.eigvalsh(a)
    top = np.max(w, axis=-1)
    bad = w[..., 0] <= 0 if strict else w[..., 0] <= -1e-10 * np.abs(top)
    if np.any(bad) or np.any(top <= 0):
        raise DomainError("matrix is not positive definite")


def eigh_desc(a) -> EigenDecomp:
    """Symmetric eigendecomposition with eigenvalues sorted descending."""
    w, u = np.linalg.eigh(a)
    return EigenDecomp(w[..., ::-1], u[..., ::-1])


def _spectral_map(a, fn) -> np.ndarray:
    w, u = np.linalg.eigh(a)
    floor = EIG_FLOOR * np.max(np.abs(w), axis=-1, keepdims=True)
    w = np.maximum(w, floor)
    return (u * fn(w)[..., None, :]) @ np.swapaxes(u, -1, -2)


def sqrtm_spd(a) -> np.ndarray:
    return _spectral_map(a, np.sqrt)


def invsqrtm_spd(a) -> np.ndarray:
    return _spectral_map(a, lambda w: 1.0 / np.sqrt(w))


def logm_spd(a) -> np.ndarray:
    return _spectral_map(a, np.log)


def effective_rank(a) -> float:
    """Trace divided by the largest eigenvalue."""
    w = np.linalg.eigvalsh(a)
    top = w[-1]
    if top <= 0:
        raise DomainError("effective rank undefined for a matrix with s1 <= 0")
    return float(np.sum(w) / top)


def _check_pair(s1, s2):
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if s1.shape != s2.shape or s1.ndim != 2 or s1.shape[0] != s1.shape[1]:
        raise UsageError(f"non-conformable matrices {s1.shape} and {s2.shape}")
    return s1, s2


def dist_euclidean(s1, s2) -> float:
    s1, s2 = _check_pair(s1, s2)
    return float(np.linalg.norm(s1 - s2))


def dist_riemannian(s1, s2) -> float:
    """Affine-invariant distance ``||log(S1^{-1/2} S2 S1^{-1/2})||_F``."""
    s1, s2 = _check_pair(s1, s2)
    if np.linalg.eigvalsh(s1)[0] <= 0 or np.linalg.eigvalsh(s2)[0] <= 0:
        raise DomainError("Riemannian distance needs strictly PD inputs")
    isq = invsqrtm_spd(s1)
    inner = isq @ s2 @ isq
    inner = 0.5 * (inner + inner.T)
    w = np.linalg.eigvalsh(inner)
    w = np.maximum(w, EIG_FLOOR * w[-1])
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def dist_cholesky(s1, s2) -> float:
    """Frobenius distance between lower Cholesky factors (positive diagonal)."""
    s1, s2 = _check_pair(s1, s2)
    try:
        l1 = np.linalg.cholesky(s1)
        l2 = np.linalg.cholesky(s2)
    except np.linalg.LinAlgError as exc:
        raise DomainError("Cholesky distance needs PD inputs") from exc
    return float(np.linalg.norm(l1 - l2))


DISTANCES = {
    "euclidean": dist_euclidean,
    "riemannian": dist_riemannian,
    "cholesky": dist_cholesky,
}


def scale_by_min_eig(s) -> np.ndarray:
    """Divide ``s`` by its smallest eigenvalue so the result has minimum 1."""
    s = np.asarray(s, dtype=float)
    low = np.linalg.eigvalsh(s)[0]
    if low <= 0:
        raise DomainError("cannot scale by a non-positive smallest eigenvalue")
    return s / low


def uniform_stiefel(rng: np.random.Generator, p: int, r: int) -> np.ndarray:
    """Haar-distributed p x r matrix with orthonormal columns."""
    if not 1 <= r <= p:
        raise UsageError(f"need 1 <= r <= p, got p={p}, r={r}")
    return qr_positive(rng.standard_normal((p, r)))


def qr_positive(x) -> np.ndarray:
    """Q factor of a thin QR with the sign convention diag(R) > 0."""
    q, r = np.linalg.qr(x)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def stiefel_error(v) -> float:
    """``max |V^T V - I|``."""
    v = np.asarray(v)
    return float(np.max(np.abs(v.T @ v - np.eye(v.shape[1]))))


def log_mvgamma(a: float, p: int) -> float:
    """Log multivariate gamma function written as a sum of log-gammas."""
    j = np.arange(1, p + 1)
    return p * (p - 1) / 4.0 * np.log(np.pi) + float(np.sum(gammaln(a + (1.0 - j) / 2.0)))


def wishart_sample(rng: np.random.Generator, phi: float, scale, size: int | None = None) -> np.ndarray:
    """Draw from ``W_p(phi, scale)`` by the Bartlett decomposition.

    Pass ``scale = Omega / phi`` to get a draw with mean ``Omega``.  With
    ``size`` a stack of shape ``(size, p, p)`` is returned.
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if phi <= p - 1:
        raise DomainError(f"degrees of freedom {phi} must exceed p - 1 = {p - 1}")
    try:
        chol = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError as exc:
        raise DomainError("Wishart scale matrix must be PD") from exc
    n = 1 if size is None else int(size)
    a = np.zeros((n, p, p))
    dof = phi - np.arange(p)
    a[:, np.arange(p), np.arange(p)] = np.sqrt(2.0 * rng.standard_gamma(dof / 2.0, size=(n, p)))
    low = np.tril_indices(p, -1)
    a[:, low[0], low[1]] = rng.standard_normal((n, len(low[0])))
    la = chol @ a
    out = la @ np.swapaxes(la, -1, -2)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out[0] if size is None else out


def logdet_spd(s) -> np.ndarray | float:
    sign, ld = np.linalg.slogdet(s)
    if np.any(sign <= 0):
        raise DomainError("log-determinant of a non-PD matrix")
    return ld


def wishart_logpdf(s, phi: float, omega) -> np.ndarray | float:
    """Log-density of ``S ~ W_p(phi, omega / phi)`` (mean ``omega``).

    ``s`` may be a single matrix or a stack ``(..., p, p)``.
    """
    s = np.asarray(s, dtype=float)
    omega = np.asarray(omega, dtype=float)
    p = omega.shape[-1]
    if phi <= p - 1:
        raise DomainError(f"degrees of freedom {phi} must exceed p - 1 = {p - 1}")
    try:
        chol = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise DomainError("Wishart mean matrix must be PD") from exc
    logdet_omega = 2.0 * np.sum(np.log(np.diag(chol)))
    logdet_s = logdet_spd(s)
    tr = np.trace(np.linalg.solve(omega, s), axis1=-2, axis2=-1) if s.ndim > 2 else np.trace(np.linalg.solve(omega, s))
    return (
        0.5 * phi * p * np.log(phi / 2.0)
        - log_mvgamma(phi / 2.0, p)
        - 0.5 * phi * logdet_omega
        + 0.5 * (phi - p - 1.0) * logdet_s
        - 0.5 * phi * tr
    )
