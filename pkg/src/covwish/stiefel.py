"""Bingham-type samplers on the sphere and on the Stiefel manifold.

All samplers are Markov transitions that leave their target invariant; they
are meant to be called once per outer MCMC iteration, not to produce exact
independent draws.

The vector kernel works in the eigenbasis of ``H`` and updates one squared
coordinate at a time.  Given the direction of the remaining coordinates, the
squared coordinate ``q`` has density proportional to
``q^{-1/2} (1 - q)^{(m-3)/2} exp(a q)``, which is updated with an auxiliary
slice variable so that only truncated beta draws are needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import UsageError
from .linalg import qr_positive, stiefel_error

REORTH_EVERY = 100
ORTH_TOL = 1e-8


@dataclass
class BinghamParams:
    """Parameters of the matrix Bingham density ``etr(B X' A X)``."""

    A: np.ndarray
    B: np.ndarray  # diagonal entries, or an r x r diagonal matrix

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.B, dtype=float)
        if b.ndim == 2:
            if np.any(np.abs(b - np.diag(np.diag(b))) > 0):
                raise UsageError("B must be diagonal")
            b = np.diag(b).copy()
        self.B = b
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise UsageError("A must be square")
        if np.max(np.abs(self.A - self.A.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(self.A))):
            raise UsageError("A must be symmetric")


class StiefelChain:
    """Bookkeeping for drift control of a Stiefel-valued chain.

    Counts sweeps and re-orthonormalizes every ``REORTH_EVERY`` of them;
    ``corrections`` counts re-orthonormalizations that found drift above
    ``ORTH_TOL``.
    """

    def __init__(self, v):
        self.v = np.array(v, dtype=float)
        self.sweeps = 0
        self.corrections = 0

    def tick(self):
        self.sweeps += 1
        if self.sweeps % REORTH_EVERY == 0:
            if stiefel_error(self.v) > ORTH_TOL:
                self.corrections += 1
            self.v = _reorth(self.v)


def _reorth(v):
    # for a nearly orthonormal V, R is close to I so Q stays close to V
    return qr_positive(v)


def _check_current(current, p):
    v = np.array(current, dtype=float)
    if v.ndim != 2 or v.shape[0] != p or v.shape[1] > p:
        raise UsageError(f"current state of shape {v.shape} does not conform to p={p}")
    return v


def sample_vector_bingham(rng, H, current, sweeps: int = 1) -> np.ndarray:
    """One (or ``sweeps``) transitions for ``z ~ exp(z' H z)`` on the unit sphere.

    Parameters
    ----------
    rng : numpy.random.Generator
    H : (m, m) symmetric array
    current : (m,) unit vector
    sweeps : int
        Number of coordinate sweeps.

    Returns
    -------
    (m,) unit vector
    """
    h = np.asarray(H, dtype=float)
    z = np.asarray(current, dtype=float).ravel()
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] != z.shape[0]:
        raise UsageError(f"H {h.shape} and current {z.shape} do not conform")
    nz = np.linalg.norm(z)
    if not np.isfinite(nz) or abs(nz - 1.0) > 1e-6:
        raise UsageError("current must have unit norm")
    h = 0.5 * (h + h.T)
    return _kernels.vector_bingham_step(rng, np.ascontiguousarray(h), z / nz, int(sweeps))


def sample_column_field(rng, H, current, order=None, inner: int = 1) -> np.ndarray:
    """One Gibbs sweep over the columns of ``V`` for ``prod_j exp(v_j' H_j v_j)``.

    Parameters
    ----------
    rng : numpy.random.Generator
    H : sequence of r symmetric (p, p) arrays, one per column
    current : (p, r) array with orthonormal columns
    order : optional column visiting order (default ``0..r-1``)
    inner : int
        Coordinate sweeps of the vector kernel per column.

    Returns
    -------
    (p, r) array with orthonormal columns
    """
    hs = np.ascontiguousarray(np.asarray(H, dtype=float))
    if hs.ndim != 3 or hs.shape[1] != hs.shape[2]:
        raise UsageError("H must be a stack of square matrices")
    v = _check_current(current, hs.shape[1])
    if v.shape[1] != hs.shape[0]:
        raise UsageError(f"{hs.shape[0]} field matrices for {v.shape[1]} columns")
    hs = 0.5 * (hs + np.swapaxes(hs, 1, 2))
    if order is None:
        order = np.arange(v.shape[1])
    order = np.asarray(order, dtype=np.int64)
    return _kernels.column_sweep(rng, np.ascontiguousarray(hs), np.ascontiguousarray(v), order, int(inner))


def rotate_pairs(rng, H, current) -> np.ndarray:
    """Gibbs update of a plane rotation for every pair of columns.

    The column sweep moves each column only through the orthogonal
    complement of the others, so it cannot rotate columns inside their joint
    span.  Rotating columns ``(j, k)`` by ``theta`` changes the log density of
    ``prod_j exp(v_j' H_j v_j)`` by ``c1 cos(2 theta) + c2 sin(2 theta)``, so
    ``2 theta`` is von Mises and the angle is drawn exactly.  Uniform angles
    preserve the invariant measure on the Stiefel manifold.
    """
    hs = np.asarray(H, dtype=float)
    v = np.array(current, dtype=float)
    r = v.shape[1]
    if hs.shape[0] != r:
        raise UsageError(f"{hs.shape[0]} field matrices for {r} columns")
    for j in range(r - 1):
        for k in range(j + 1, r):
            a, b = v[:, j], v[:, k]
            ja, jb = hs[j] @ a, hs[j] @ b
            ka, kb = hs[k] @ a, hs[k] @ b
            c1 = 0.5 * ((a @ ja + b @ kb) - (b @ jb + a @ ka))
            c2 = 0.5 * (a @ jb + b @ ja) - 0.5 * (a @ kb + b @ ka)
            kappa = np.hypot(c1, c2)
            psi = rng.vonmises(np.arctan2(c2, c1), kappa) if kappa > 0 else rng.uniform(-np.pi, np.pi)
            theta = 0.5 * psi + np.pi * (rng.random() < 0.5)
            cs, sn = np.cos(theta), np.sin(theta)
            v[:, j], v[:, k] = cs * a + sn * b, cs * b - sn * a
    return v


def sample_matrix_bingham(rng, params: BinghamParams, current, sweeps: int = 1) -> np.ndarray:
    """Gibbs sweeps for the matrix Bingham density ``etr(B X' A X)``.

    Equivalent to a column field with ``H_j = B_jj A``; each sweep is a
    column pass followed by pairwise rotations.
    """
    v = _check_current(current, params.A.shape[0])
    if v.shape[1] != params.B.shape[0]:
        raise UsageError(f"B has {params.B.shape[0]} entries for {v.shape[1]} columns")
    hs = params.B[:, None, None] * params.A[None, :, :]
    for _ in range(int(sweeps)):
        v = sample_column_field(rng, hs, v)
        v = rotate_pairs(rng, hs, v)
    return v
