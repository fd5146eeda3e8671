"""Change-point model with autoregressive log-loadings.

Each regime ``k`` of subject ``i`` carries a path ``x_k[i, t, h] = log dtilde``.
The path starts from a global-local draw ``x_k[i, 0, h] = log tau + log lambda_h``
and evolves as ``x_t = rho_k x_{t-1} + N(0, v_k)``.  Both paths are kept over
the whole time axis so the change point can move freely; only the cells a
regime owns enter the likelihood, the rest follow the prior.

Sampler (one iteration):

1. ``V_k`` column field with time-varying weights.
2. First-time locals and global by random-walk MH on the log scale.
3. Remaining path coordinates by vectorized RW-MH (odd times, then even).
4. ``sigma2`` per subject and regime, conjugate inverse gamma.
5. ``rho_k`` from its truncated normal conditional on (-1, 1).
6. ``v_k`` by RW-MH on ``log v`` under a Gamma(shape 1/2, scale 2) prior.
7. ``c_i`` from the normalized two-regime likelihood over the grid.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit
from scipy.stats import truncnorm

from .. import rng as rngmod
from ..errors import NumericError
from ..linalg import logdet_spd, uniform_stiefel
from ..shrinkage import sigma2_posterior
from ..stiefel import StiefelChain, rotate_pairs, sample_column_field
from .data import ChainTrace, Dataset, ModelConfig
from .likelihood import omega_from, projections, wishart_const
from .static import cp_conditional, cp_grid, resolve_hyper

V_SHAPE, V_SCALE = 0.5, 2.0


def rho_conditional(prev, nxt, v):
    """Mean and standard deviation of the untruncated normal conditional of
    ``rho`` given lagged pairs ``(x_{t-1}, x_t)`` under a flat prior."""
    sxx = float(np.sum(prev * prev))
    sxy = float(np.sum(prev * nxt))
    return sxy / sxx, math.sqrt(v / sxx)


def draw_rho(rng, prev, nxt, v):
    """``rho`` from its normal conditional truncated to (-1, 1)."""
    mean, sd = rho_conditional(prev, nxt, v)
    a, b = (-1.0 - mean) / sd, (1.0 - mean) / sd
    return float(truncnorm.rvs(a, b, loc=mean, scale=sd, random_state=rng))


def _log_v_target(logv, resid_ss, count):
    v = math.exp(logv)
    # Gamma(shape, scale) prior with Jacobian of the log transform
    return (V_SHAPE * logv - v / V_SCALE) - 0.5 * count * logv - 0.5 * resid_ss / v


class DynamicSampler:
    def __init__(self, data: Dataset, config: ModelConfig):
        config.check(data)
        data = data.sorted()
        self.config = config
        self.p, self.r = data.p, config.r_star
        self.phi = config.phis(data.p)
        self.hyper = resolve_hyper(config, data)
        self.ids = list(data.subject_ids)
        self.S = [np.ascontiguousarray(m) for m in data.matrices]
        self.T = [m.shape[0] for m in self.S]
        self.trS = [np.trace(m, axis1=1, axis2=2) for m in self.S]
        self.logdetS = [np.asarray(logdet_spd(m), dtype=float) for m in self.S]
        n = len(self.ids)
        seed = config.seed
        self.rngs = [rngmod.subject_stream(seed, s) for s in self.ids]
        self.v_rngs = [rngmod.stream(seed, rngmod.SHARED_V, k) for k in range(2)]
        self.g_rng = rngmod.stream(seed, rngmod.GLOBAL)
        init = rngmod.stream(seed, rngmod.INIT)
        self.V = [StiefelChain(uniform_stiefel(init, self.p, self.r)) for _ in range(2)]
        s0 = self.hyper.mean if np.isfinite(self.hyper.mean) else self.hyper.beta_sigma
        self.sigma2 = np.full((2, n), s0)
        self.logtau = np.full((2, n), math.log(0.1))
        self.loglam = [np.zeros((2, self.r)) for _ in range(n)]
        self.x = [np.full((2, t, self.r), math.log(0.1)) for t in self.T]
        self.rho = np.array([0.5, 0.5])
        self.v = np.array([0.1, 0.1])
        self.c = np.array([math.ceil(t / 2) for t in self.T])
        self.grids = [cp_grid(t, config.cp_interior_only) for t in self.T]
        self.acc = {"first": [0, 0], "path": [0, 0], "v": [0, 0]}
        self.cond = [None] * n
        self.cell_ll = [None] * n

    # ------------------------------------------------------------ pieces

    def _active(self, k, i):
        t = np.arange(self.T[i])
        return (t < self.c[i]) if k == 0 else (t >= self.c[i])

    def _coord_ll(self, x, proj, k, i):
        """Per-(t, h) likelihood terms that depend on the log-loadings."""
        phi, s2 = self.phi[k], self.sigma2[k, i]
        d = np.exp(x)
        return -0.5 * phi * np.log1p(d) + 0.5 * phi / s2 * proj * expit(x)

    def cell_logliks(self, k, i, proj):
        phi, s2, p = self.phi[k], self.sigma2[k, i], self.p
        x = self.x[i][k]
        return (
            wishart_const(phi, p)
            - 0.5 * phi * p * math.log(s2)
            + 0.5 * (phi - p - 1.0) * self.logdetS[i]
            - 0.5 * phi * self.trS[i] / s2
            + self._coord_ll(x, proj, k, i).sum(axis=1)
        )

    # ------------------------------------------------------------ updates

    def update_v(self):
        for k in range(2):
            hs = np.zeros((self.r, self.p, self.p))
            for i in range(len(self.ids)):
                act = self._active(k, i)
                if not act.any():
                    continue
                w = expit(self.x[i][k][act])  # 1 - 1/(1 + d)
                coef = self.phi[k] * w / (2.0 * self.sigma2[k, i])
                hs += np.einsum("tj,tpq->jpq", coef, self.S[i][act])
            chain = self.V[k]
            for _ in range(self.config.inner_sweeps):
                chain.v = sample_column_field(self.v_rngs[k], hs, chain.v)
                chain.v = rotate_pairs(self.v_rngs[k], hs, chain.v)
            chain.tick()

    def _update_paths(self, rng, k, i, proj):
        step = self.config.dyn_step_sd
        x = self.x[i][k]
        T = x.shape[0]
        act = self._active(k, i)[:, None].astype(float)
        rho, v = self.rho[k], self.v[k]

        def local(xx, rows):
            # likelihood of the rows plus every AR factor touching them
            ll = self._coord_ll(xx[rows], proj[rows], k, i) * act[rows]
            out = ll.copy()
            has_prev = rows > 0
            rp = rows[has_prev]
            out[has_prev] += -0.5 * (xx[rp] - rho * xx[rp - 1]) ** 2 / v
            has_next = rows < T - 1
            rn = rows[has_next]
            out[has_next] += -0.5 * (xx[rn + 1] - rho * xx[rn]) ** 2 / v
            return out

        # first time point: x0 = log tau + log lambda
        lt, ll_ = self.logtau[k, i], self.loglam[i][k]
        row0 = np.array([0])
        cur = local(x, row0)[0]
        prop_l = ll_ + step * rng.standard_normal(self.r)
        xp = x.copy()
        xp[0] = lt + prop_l
        new = local(xp, row0)[0]
        lp_cur = -np.log1p(np.exp(2 * ll_)) + ll_
        lp_new = -np.log1p(np.exp(2 * prop_l)) + prop_l
        ok = np.log(rng.random(self.r)) < new + lp_new - cur - lp_cur
        ll_ = np.where(ok, prop_l, ll_)
        x[0] = lt + ll_
        self.acc["first"][0] += int(ok.sum())
        self.acc["first"][1] += self.r
        prop_t = lt + step * rng.standard_normal()
        if prop_t < 0.0:
            cur = local(x, row0)[0].sum() + lt - math.log1p(math.exp(2 * lt))
            xp = x.copy()
            xp[0] = prop_t + ll_
            new = local(xp, row0)[0].sum() + prop_t - math.log1p(math.exp(2 * prop_t))
            if math.log(rng.random()) < new - cur:
                lt = prop_t
                x[0] = xp[0]
                self.acc["first"][0] += 1
        self.acc["first"][1] += 1
        self.logtau[k, i] = lt
        self.loglam[i][k] = ll_
        # interior: odd rows then even rows, each set conditionally independent
        for start in (1, 2):
            rows = np.arange(start, T, 2)
            if rows.size == 0:
                continue
            cur = local(x, rows)
            xp = x.copy()
            xp[rows] = x[rows] + step * rng.standard_normal((rows.size, self.r))
            new = local(xp, rows)
            ok = np.log(rng.random((rows.size, self.r))) < new - cur
            x[rows] = np.where(ok, xp[rows], x[rows])
            self.acc["path"][0] += int(ok.sum())
            self.acc["path"][1] += ok.size

    def subject_step(self, i):
        rng = self.rngs[i]
        lls = []
        for k in range(2):
            proj = projections(self.S[i], self.V[k].v)
            self._update_paths(rng, k, i, proj)
            act = self._active(k, i)
            n_eff = int(act.sum())
            d = np.exp(self.x[i][k])
            trqs = float(np.sum((self.trS[i] - np.sum(proj * d / (1.0 + d), axis=1))[act]))
            shape, rate = sigma2_posterior(self.hyper, trqs, n_eff, self.p, self.phi[k])
            self.sigma2[k, i] = rate / rng.standard_gamma(shape)
            lls.append(self.cell_logliks(k, i, proj))
        grid = self.grids[i]
        probs = cp_conditional(lls[0], lls[1], grid)
        cdf = np.cumsum(probs)
        j = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(grid) - 1)
        self.c[i] = grid[j]
        full = np.zeros(self.T[i])
        full[grid - 1] = probs
        self.cond[i] = full
        t = np.arange(1, self.T[i] + 1)
        self.cell_ll[i] = np.where(t <= self.c[i], lls[0], lls[1])

    def update_globals(self):
        rng = self.g_rng
        step = self.config.dyn_step_sd
        for k in range(2):
            paths = [xi[k] for xi in self.x]
            prev = np.concatenate([p_[:-1] for p_ in paths])
            nxt = np.concatenate([p_[1:] for p_ in paths])
            self.rho[k] = draw_rho(rng, prev, nxt, self.v[k])
            e = nxt - self.rho[k] * prev
            ss, cnt = float(np.sum(e * e)), e.size
            lv = math.log(self.v[k])
            prop = lv + step * rng.standard_normal()
            if math.log(rng.random()) < _log_v_target(prop, ss, cnt) - _log_v_target(lv, ss, cnt):
                self.v[k] = math.exp(prop)
                self.acc["v"][0] += 1
            self.acc["v"][1] += 1

    # ------------------------------------------------------------ driver

    def run(self) -> ChainTrace:
        cfg = self.config
        n, r, p = len(self.ids), self.r, self.p
        kept = cfg.kept
        out = {
            "sigma2": np.zeros((kept, 2, n)),
            "tau": np.zeros((kept, 2, n)),
            "lambda": np.zeros((kept, 2, n, r)),
            "dtilde": np.zeros((kept, 2, n, r)),
            "c": np.zeros((kept, n), dtype=np.int64),
            "rho": np.zeros((kept, 2)),
            "v": np.zeros((kept, 2)),
        }
        if cfg.store_v:
            out["V"] = np.zeros((kept, 2, p, r))
        loglik = np.zeros((kept, sum(self.T)))
        omega_sum = np.zeros((2, n, p, p))
        logd_sum = [np.zeros((2, t, r)) for t in self.T]
        cond_sum = [np.zeros(t) for t in self.T]
        row = 0
        for it in range(cfg.iterations):
            self.update_v()
            for i in range(n):
                self.subject_step(i)
            self.update_globals()
            if it < cfg.burn_in or (it - cfg.burn_in) % cfg.thin:
                continue
            for i in range(n):
                for k in range(2):
                    t0 = 0 if k == 0 else min(self.c[i], self.T[i] - 1)
                    d = np.exp(self.x[i][k][t0])
                    out["sigma2"][row, k, i] = self.sigma2[k, i]
                    out["tau"][row, k, i] = math.exp(self.logtau[k, i])
                    out["lambda"][row, k, i] = np.exp(self.loglam[i][k])
                    out["dtilde"][row, k, i] = d
                    omega_sum[k, i] += omega_from(self.V[k].v, d, self.sigma2[k, i])
                    logd_sum[i][k] += self.x[i][k]
                cond_sum[i] += self.cond[i]
            out["c"][row] = self.c
            out["rho"][row] = self.rho
            out["v"][row] = self.v
            if cfg.store_v:
                out["V"][row] = np.stack([ch.v for ch in self.V])
            ll = np.concatenate(self.cell_ll)
            if not np.all(np.isfinite(ll)):
                raise NumericError(f"non-finite log-likelihood at iteration {it}")
            loglik[row] = ll
            row += 1
        cells = [(s, t + 1) for s, T in zip(self.ids, self.T) for t in range(T)]
        return ChainTrace(
            model="dynamic",
            subject_ids=self.ids,
            times=list(self.T),
            p=p,
            r_star=r,
            phi=tuple(self.phi),
            params=out,
            loglik=loglik,
            cells=cells,
            accept={k: tuple(v) for k, v in self.acc.items()},
            omega_mean=omega_sum / kept,
            cp_probs=[cs / kept for cs in cond_sum],
            extra={
                "logd_mean": [ls / kept for ls in logd_sum],
                "orth_corrections": [ch.corrections for ch in self.V],
                "hyper": (self.hyper.alpha_sigma, self.hyper.beta_sigma),
            },
        )


def fit_dynamic(data: Dataset, config: ModelConfig) -> ChainTrace:
    """Two-regime change-point fit with autoregressive log-loadings."""
    return DynamicSampler(data, config).run()
