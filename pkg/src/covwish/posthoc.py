"""Post-processing of posterior draws: rank estimates, WAIC, column-space
means and distances, recursive change-point search, shared-dictionary
diagnostic and the phi sweep."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import rng as rngmod
from .errors import UsageError
from .linalg import wishart_sample
from .models import fit, fit_changepoint, fit_independence
from .models.data import ChainTrace, Dataset, ModelConfig
from .models.likelihood import omega_from


class DegenerateMeanWarning(UserWarning):
    """The averaged projector has no eigengap at the requested rank."""


class ShortChainWarning(UserWarning):
    """Fewer kept draws than recommended for a stable WAIC penalty."""


WAIC_MIN_DRAWS = 100


# ---------------------------------------------------------------- ranks


@dataclass
class RankEstimate:
    sizes: np.ndarray
    mode: int
    histogram: np.ndarray  # counts for sizes 1..r

    def as_dict(self):
        return {"mode": int(self.mode), "histogram": self.histogram.tolist()}


def two_means_upper_size(values) -> np.ndarray:
    """Size of the larger-mean cluster of an exact 1-D 2-means split, per row.

    Rows whose values are all equal get the full size by convention.
    """
    x = np.sort(np.atleast_2d(np.asarray(values, dtype=float)), axis=1)
    m, r = x.shape
    if r == 1:
        return np.ones(m, dtype=int)
    s = np.arange(1, r)
    c1 = np.cumsum(x, axis=1)[:, :-1]
    c2 = np.cumsum(x * x, axis=1)[:, :-1]
    tot1 = x.sum(axis=1, keepdims=True)
    tot2 = (x * x).sum(axis=1, keepdims=True)
    sse = (c2 - c1**2 / s) + ((tot2 - c2) - (tot1 - c1) ** 2 / (r - s))
    split = np.argmin(sse, axis=1) + 1
    size = r - split
    flat = (x[:, -1] - x[:, 0]) <= 1e-12 * np.maximum(np.abs(x[:, -1]), 1e-300)
    size[flat] = r
    return size


def estimate_rank(trace: ChainTrace, regime: int = 0, subject: int = 0) -> RankEstimate:
    """Mode over iterations of the larger 2-means cluster size of ``d_h``."""
    d = trace.d_samples(regime, subject)
    r = d.shape[1]
    sizes = two_means_upper_size(d) if r > 1 else np.ones(d.shape[0], dtype=int)
    hist = np.bincount(sizes, minlength=r + 1)[1:]
    return RankEstimate(sizes=sizes, mode=int(np.argmax(hist)) + 1, histogram=hist)


# ---------------------------------------------------------------- WAIC


@dataclass
class WaicReport:
    lppd: float
    p_waic: float
    waic: float
    pointwise: np.ndarray

    def as_dict(self):
        return {"lppd": self.lppd, "p_waic": self.p_waic, "waic": self.waic}


def compute_waic(trace_or_loglik) -> WaicReport:
    """WAIC with the variance penalty from a (draws x cells) log-likelihood matrix."""
    ll = trace_or_loglik.loglik if isinstance(trace_or_loglik, ChainTrace) else trace_or_loglik
    ll = np.asarray(ll, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise UsageError("WAIC needs at least two draws of the log-likelihood")
    if not np.all(np.isfinite(ll)):
        raise UsageError("log-likelihood matrix has non-finite entries")
    s = ll.shape[0]
    if s < WAIC_MIN_DRAWS:
        warnings.warn(f"WAIC from only {s} draws", ShortChainWarning, stacklevel=2)
    lppd_i = logsumexp(ll, axis=0) - np.log(s)
    p_i = np.var(ll, axis=0, ddof=1)
    lppd, p = float(lppd_i.sum()), float(p_i.sum())
    return WaicReport(lppd, p, -2.0 * (lppd - p), -2.0 * (lppd_i - p_i))


# ---------------------------------------------------------------- Stiefel summaries


def projection_distance(U, W) -> float:
    """``||U U' - W W'||_F`` computed from the principal cosines."""
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    if U.shape != W.shape or U.ndim != 2:
        raise UsageError(f"shape mismatch {U.shape} vs {W.shape}")
    r = U.shape[1]
    cross = np.linalg.norm(U.T @ W) ** 2
    return float(np.sqrt(max(2.0 * r - 2.0 * cross, 0.0)))


def karcher_mean_stiefel(samples, tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Projection-metric mean: top eigenvectors of the averaged projector.

    ``max_iter`` is accepted for interface compatibility; the mean is closed form.
    """
    mats = [np.asarray(v, dtype=float) for v in samples]
    if not mats:
        raise UsageError("no samples")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise UsageError("samples differ in shape")
    p, r = shape
    P = np.zeros((p, p))
    for m in mats:
        P += m @ m.T
    P /= len(mats)
    w, u = np.linalg.eigh(P)
    w, u = w[::-1], u[:, ::-1]
    if r < p and w[r - 1] - w[r] <= tol:
        warnings.warn(
            f"averaged projector has no eigengap at rank {r} ({w[r - 1]:.3g} vs {w[r]:.3g})",
            DegenerateMeanWarning,
            stacklevel=2,
        )
    return u[:, :r].copy()


def karcher_objective(center, samples) -> float:
    return float(sum(projection_distance(center, v) ** 2 for v in samples))


# ---------------------------------------------------------------- change points


def change_decision(probs, factor: float = 2.0):
    """``(mode, has_change)`` for one posterior over 1-based change points.

    A change is reported when the mode is an interior time point
    (``2 <= mode <= T - 1``) and its probability exceeds ``factor / T``.
    Mass piling up at either end means one regime explains the whole series.
    """
    probs = np.asarray(probs, dtype=float)
    T = probs.shape[0]
    mode = int(np.argmax(probs)) + 1
    has = bool(probs[mode - 1] > factor / T) and 2 <= mode <= T - 1
    return mode, has


def detect_changes(trace: ChainTrace, factor: float = 2.0) -> dict:
    """Per-subject ``{"mode", "prob", "has_change", "posterior"}``."""
    if trace.cp_probs is None:
        raise UsageError("trace has no change-point posterior")
    out = {}
    for sid, pr in zip(trace.subject_ids, trace.cp_probs):
        mode, has = change_decision(pr, factor)
        out[sid] = {"mode": mode, "prob": float(pr[mode - 1]), "has_change": has, "posterior": pr.tolist()}
    return out


def multiple_changepoints(data: Dataset, config: ModelConfig, max_depth: int = 2, min_len: int = 5) -> dict:
    """Recursive change-point search on shrinking windows.

    Each level fits the change-point model once, treating every open window
    as a pseudo-subject; a window with a detected change ``c`` spawns the
    windows before and after it.

    Returns
    -------
    dict mapping subject id to a sorted list of 1-based change points.
    """
    cfg = replace(config, model="changepoint")
    found = {s: [] for s in data.subject_ids}
    windows = [(s, 0, t) for s, t in zip(data.subject_ids, data.times)]
    depth = 0
    while windows and depth <= max_depth:
        windows = [w for w in windows if w[2] - w[1] >= min_len]
        if not windows:
            break
        spans = {f"{s}@{t0:06d}-{t1:06d}": (s, t0, t1) for s, t0, t1 in windows}
        level = data.windows(spans)
        level_cfg = replace(cfg, seed=rngmod.derive_seed(cfg.seed, "level", depth))
        trace = fit_changepoint(level, level_cfg)
        decisions = detect_changes(trace, cfg.nocp_factor)
        nxt = []
        for wid, (s, t0, t1) in spans.items():
            dec = decisions[wid]
            if not dec["has_change"]:
                continue
            c = dec["mode"]
            found[s].append(t0 + c)
            nxt.append((s, t0, t0 + c - 1))
            nxt.append((s, t0 + c, t1))
        windows = nxt
        depth += 1
    return {s: sorted(v) for s, v in found.items()}


# ---------------------------------------------------------------- diagnostics


def _per_subject_fits(data: Dataset, config: ModelConfig, tag: str):
    cfg = replace(config, model="independence", store_v=True)
    fits = {}
    for sid in data.subject_ids:
        sub = data.subset([sid])
        fits[sid] = fit_independence(sub, replace(cfg, seed=rngmod.derive_seed(config.seed, tag, sid)))
    return fits


def shared_v_diagnostic(data: Dataset, config: ModelConfig):
    """Distances of per-subject dictionary means to their overall mean, on the
    observed data ("different V") and on data regenerated with one shared
    dictionary ("same V").

    Returns
    -------
    (different, same) : two arrays of projection distances, one per subject
    """
    if data.n == 1:
        return np.zeros(1), np.zeros(1)
    fits = _per_subject_fits(data, config, "diag-observed")
    means = {s: karcher_mean_stiefel(list(tr.params["V"][:, 0])) for s, tr in fits.items()}
    vbar = karcher_mean_stiefel(list(means.values()))
    different = np.array([projection_distance(means[s], vbar) for s in data.subject_ids])
    rng = rngmod.stream(config.seed, rngmod.DATA, rngmod.subject_key("diag-regenerate"))
    mats = []
    phi = config.phis(data.p)[0]
    for sid, T in zip(data.subject_ids, data.times):
        tr = fits[sid]
        d_hat = np.sort(tr.d_samples(0, 0).mean(axis=0))[::-1]
        s2 = float(tr.sigma2_mean()[0, 0])
        om = omega_from(vbar, d_hat / s2, s2)
        mats.append(wishart_sample(rng, phi, om / phi, size=T))
    regen = Dataset(data.subject_ids, mats)
    fits2 = _per_subject_fits(regen, config, "diag-regenerated")
    same = np.array(
        [projection_distance(karcher_mean_stiefel(list(fits2[s].params["V"][:, 0])), vbar) for s in data.subject_ids]
    )
    return different, same


def phi_waic_sweep(data: Dataset, config: ModelConfig, phi_grid):
    """Refit at every ``phi`` in the grid.

    Returns
    -------
    (table, argmin) with ``table`` a list of ``(phi, waic)``.
    """
    grid = [float(x) for x in phi_grid]
    if not grid:
        raise UsageError("empty phi grid")
    table = []
    for phi in grid:
        cfg = replace(config, phi=phi, phi1=None, phi2=None, seed=rngmod.derive_seed(config.seed, "phi", phi))
        table.append((phi, compute_waic(fit(data, cfg)).waic))
    best = min(table, key=lambda row: row[1])[0]
    return table, best
