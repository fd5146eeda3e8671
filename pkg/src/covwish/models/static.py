"""Gibbs samplers for the static models: pooled independence, hierarchical
shared-dictionary, and the two-regime change-point model.

All three share one engine.  Each subject carries one shrinkage block per
regime; each regime has one dictionary ``V`` shared across subjects.  Subject
``i`` contributes its first ``c_i`` observations to regime 0 and the rest to
regime 1 (the single-regime models fix ``c_i = T_i``).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError, NumericError
from ..linalg import logdet_spd, uniform_stiefel
from ..shrinkage import (
    IgHyper,
    elicit_ig_hyper,
    gibbs_update_sigma2,
    initial_state,
    mh_update_global,
    slice_update_locals,
    tr_qs,
)
from ..stiefel import StiefelChain, rotate_pairs, sample_column_field
from .data import ChainTrace, Dataset, ModelConfig
from .likelihood import cell_logliks, omega_from, projections


def cp_grid(T: int, interior: bool) -> np.ndarray:
    """Admissible change points (1-based count of pre-change observations)."""
    return np.arange(2, T) if interior else np.arange(1, T + 1)


def cp_log_weights(ll_pre, ll_post, grid) -> np.ndarray:
    """``log A_k = sum_{t <= k} ll_pre[t] + sum_{t > k} ll_post[t]`` for k in grid."""
    T = ll_pre.shape[0]
    t = np.arange(1, T + 1)
    pre = t[None, :] <= np.asarray(grid)[:, None]
    return np.where(pre, ll_pre[None, :], ll_post[None, :]).sum(axis=1)


def cp_conditional(ll_pre, ll_post, grid) -> np.ndarray:
    """Normalized conditional probabilities over ``grid`` (max-subtracted)."""
    a = cp_log_weights(ll_pre, ll_post, grid)
    a = a - a.max()
    w = np.exp(a)
    return w / w.sum()


def resolve_hyper(config: ModelConfig, data: Dataset) -> IgHyper:
    if isinstance(config.ig_hyper, IgHyper):
        return config.ig_hyper
    return elicit_ig_hyper(data.all_matrices(), config.r_star)


class _Subject:
    __slots__ = ("sid", "S", "cum", "trS", "logdetS", "T")

    def __init__(self, sid, S):
        self.sid = sid
        self.S = np.ascontiguousarray(S)
        self.T = S.shape[0]
        self.cum = np.concatenate([np.zeros((1,) + S.shape[1:]), np.cumsum(S, axis=0)])
        self.trS = np.trace(S, axis1=1, axis2=2)
        self.logdetS = np.asarray(logdet_spd(S), dtype=float)


class StaticSampler:
    """Engine shared by the independence, hierarchical and change-point fits."""

    def __init__(self, data: Dataset, config: ModelConfig, n_regimes: int, model: str):
        config.check(data)
        data = data.sorted()
        self.data = data
        self.config = config
        self.model = model
        self.K = n_regimes
        self.p = data.p
        self.r = config.r_star
        phi1, phi2 = config.phis(data.p)
        self.phi = (phi1, phi2) if n_regimes == 2 else (phi1,)
        self.hyper = resolve_hyper(config, data)
        if self.hyper.alpha_sigma <= 1 and n_regimes == 2 and not config.cp_interior_only:
            raise ConfigError("alpha_sigma must exceed 1 when a regime can be empty")
        self.subjects = [_Subject(s, m) for s, m in zip(data.subject_ids, data.matrices)]
        n = len(self.subjects)
        for sub in self.subjects:
            fewest = sub.T if self.K == 1 else 1
            if fewest * min(self.phi) / 2.0 - 1.0 <= 0:
                raise ConfigError(f"subject {sub.sid}: too few observations for proper conditionals")
        seed = config.seed
        self.rngs = [rngmod.subject_stream(seed, s.sid) for s in self.subjects]
        self.v_rngs = [rngmod.stream(seed, rngmod.SHARED_V, k) for k in range(self.K)]
        init = rngmod.stream(seed, rngmod.INIT)
        self.V = [StiefelChain(uniform_stiefel(init, self.p, self.r)) for _ in range(self.K)]
        s0 = self.hyper.mean if np.isfinite(self.hyper.mean) else self.hyper.beta_sigma
        self.shrink = [[initial_state(self.r, s0) for _ in range(n)] for _ in range(self.K)]
        if self.K == 2:
            self.c = np.array([math.ceil(s.T / 2) for s in self.subjects])
            self.grids = [cp_grid(s.T, config.cp_interior_only) for s in self.subjects]
        else:
            self.c = np.array([s.T for s in self.subjects])
            self.grids = None
        self.acc = np.zeros((self.K, n, 2), dtype=np.int64)
        self.cell_ll = [np.zeros(s.T) for s in self.subjects]
        self.cond = [None] * n

    # ------------------------------------------------------------ updates

    def _n_eff(self, k, i):
        return int(self.c[i]) if k == 0 else int(self.subjects[i].T - self.c[i])

    def _sstar(self, k, i):
        sub = self.subjects[i]
        c = self.c[i]
        return sub.cum[c] if k == 0 else sub.cum[sub.T] - sub.cum[c]

    def update_v(self):
        for k in range(self.K):
            hs = np.zeros((self.r, self.p, self.p))
            for i in range(len(self.subjects)):
                if self._n_eff(k, i) == 0:
                    continue
                st = self.shrink[k][i]
                coef = self.phi[k] * (1.0 - st.w) / (2.0 * st.sigma2)
                hs += coef[:, None, None] * self._sstar(k, i)[None]
            chain = self.V[k]
            for _ in range(self.config.inner_sweeps):
                chain.v = sample_column_field(self.v_rngs[k], hs, chain.v)
                chain.v = rotate_pairs(self.v_rngs[k], hs, chain.v)
            chain.tick()

    def subject_step(self, i):
        rng = self.rngs[i]
        sub = self.subjects[i]
        cfg = self.config
        lls = []
        for k in range(self.K):
            proj = projections(sub.S, self.V[k].v)
            n_eff = self._n_eff(k, i)
            part = slice(0, self.c[i]) if k == 0 else slice(self.c[i], sub.T)
            m = proj[part].sum(axis=0)
            trs = float(sub.trS[part].sum())
            st = self.shrink[k][i]
            st = slice_update_locals(rng, st, m, n_eff, self.phi[k])
            st, ok = mh_update_global(rng, st, m, n_eff, self.phi[k], cfg.step_sd)
            self.acc[k, i, 0] += ok
            self.acc[k, i, 1] += 1
            st = gibbs_update_sigma2(rng, st, self.hyper, tr_qs(st, trs, m), n_eff, self.p, self.phi[k])
            self.shrink[k][i] = st
            lls.append(cell_logliks(proj, sub.trS, sub.logdetS, st.dtilde, st.sigma2, self.phi[k], self.p))
        if self.K == 2:
            grid = self.grids[i]
            probs = cp_conditional(lls[0], lls[1], grid)
            cdf = np.cumsum(probs)
            j = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(grid) - 1)
            self.c[i] = grid[j]
            full = np.zeros(sub.T)
            full[grid - 1] = probs
            self.cond[i] = full
            t = np.arange(1, sub.T + 1)
            self.cell_ll[i] = np.where(t <= self.c[i], lls[0], lls[1])
        else:
            self.cell_ll[i] = lls[0]

    # ------------------------------------------------------------ driver

    def run(self) -> ChainTrace:
        cfg = self.config
        n, K, r, p = len(self.subjects), self.K, self.r, self.p
        kept = cfg.kept
        ncell = sum(s.T for s in self.subjects)
        out = {
            "sigma2": np.zeros((kept, K, n)),
            "tau": np.zeros((kept, K, n)),
            "lambda": np.zeros((kept, K, n, r)),
            "dtilde": np.zeros((kept, K, n, r)),
        }
        if K == 2:
            out["c"] = np.zeros((kept, n), dtype=np.int64)
        if cfg.store_v:
            out["V"] = np.zeros((kept, K, p, r))
        loglik = np.zeros((kept, ncell))
        omega_sum = np.zeros((K, n, p, p))
        cond_sum = [np.zeros(s.T) for s in self.subjects] if K == 2 else None
        pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
        try:
            row = 0
            for it in range(cfg.iterations):
                self.update_v()
                if pool is None:
                    for i in range(n):
                        self.subject_step(i)
                else:
                    list(pool.map(self.subject_step, range(n)))
                if it < cfg.burn_in or (it - cfg.burn_in) % cfg.thin:
                    continue
                for k in range(K):
                    v = self.V[k].v
                    for i in range(n):
                        st = self.shrink[k][i]
                        out["sigma2"][row, k, i] = st.sigma2
                        out["tau"][row, k, i] = st.tau
                        out["lambda"][row, k, i] = st.lam
                        out["dtilde"][row, k, i] = st.dtilde
                        omega_sum[k, i] += omega_from(v, st.dtilde, st.sigma2)
                    if cfg.store_v:
                        out["V"][row, k] = v
                if K == 2:
                    out["c"][row] = self.c
                    for i in range(n):
                        cond_sum[i] += self.cond[i]
                ll = np.concatenate(self.cell_ll)
                if not np.all(np.isfinite(ll)):
                    raise NumericError(f"non-finite log-likelihood at iteration {it}")
                loglik[row] = ll
                row += 1
        finally:
            if pool is not None:
                pool.shutdown()
        cells = [(s.sid, t + 1) for s in self.subjects for t in range(s.T)]
        acc = {f"global[{k}]": (int(self.acc[k, :, 0].sum()), int(self.acc[k, :, 1].sum())) for k in range(K)}
        final = {
            "V": [ch.v.copy() for ch in self.V],
            "dtilde": np.array([[st.dtilde for st in row_] for row_ in self.shrink]),
            "sigma2": np.array([[st.sigma2 for st in row_] for row_ in self.shrink]),
            "c": self.c.copy(),
        }
        return ChainTrace(
            model=self.model,
            subject_ids=[s.sid for s in self.subjects],
            times=[s.T for s in self.subjects],
            p=p,
            r_star=r,
            phi=tuple(self.phi),
            params=out,
            loglik=loglik,
            cells=cells,
            accept=acc,
            omega_mean=omega_sum / kept,
            cp_probs=[cs / kept for cs in cond_sum] if K == 2 else None,
            extra={
                "final_state": final,
                "orth_corrections": [ch.corrections for ch in self.V],
                "hyper": (self.hyper.alpha_sigma, self.hyper.beta_sigma),
            },
        )


def fit_independence(data: Dataset, config: ModelConfig) -> ChainTrace:
    """Single-group fit: every matrix in ``data`` is one exchangeable observation."""
    pooled = data.pooled() if data.n > 1 else data
    return StaticSampler(pooled, config, 1, "independence").run()


def fit_hierarchical(data: Dataset, config: ModelConfig) -> ChainTrace:
    """Shared dictionary ``V`` with subject-specific loadings and noise levels."""
    return StaticSampler(data, config, 1, "hierarchical").run()


def fit_changepoint(data: Dataset, config: ModelConfig) -> ChainTrace:
    """Two regimes with dictionaries ``V1``, ``V2`` and a change point per subject."""
    return StaticSampler(data, config, 2, "changepoint").run()
