"""Synthetic data for every simulation design plus scoring against the truth.

Designs
-------
independence_311
    One group of ``N`` matrices from ``W(phi, Omega0 / phi)``,
    ``Omega0 = sigma0^2 (V0 diag(dtilde0) V0' + I)``.
hierarchical_33
    ``n`` subjects, ``T`` matrices each; shared ``V0``; per subject a true rank
    drawn uniformly from ``{1..r_star}``, loadings ``U(0, 5)`` on the active
    columns and ``sigma_i^2 ~ U(0.25, 0.5)``.
changepoint_41
    As above with two dictionaries; ``n_change`` subjects switch regime at a
    change point drawn uniformly from ``{2..T-1}``.
dynamic_appA
    Every subject changes regime; loadings follow a log-AR(1) path started from
    global-local draws at the first time point of each regime.
custom
    ``hierarchical_33``-style generation with every field taken from the design.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, UsageError
from .linalg import DISTANCES, uniform_stiefel, wishart_sample
from .models.data import ChainTrace, Dataset
from .models.likelihood import omega_from

DESIGNS = ("independence_311", "hierarchical_33", "changepoint_41", "dynamic_appA", "custom")


@dataclass
class SimDesign:
    design: str = "independence_311"
    n: int = 1
    p: int = 20
    T: int = 26
    N: int = 100
    r_star: int = 3
    dtilde0: Optional[list] = None
    sigma2_0: float = 0.25
    sigma2_range: tuple = (0.25, 0.5)
    d_range: tuple = (0.0, 5.0)
    n_change: Optional[int] = None
    change_fraction: float = 0.4
    rho: float = 0.5
    v: float = 0.1
    phi: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"unknown design {self.design!r}")
        if min(self.n, self.p, self.T, self.N, self.r_star) < 1:
            raise ConfigError("dimensions must be positive")
        if self.r_star > self.p:
            raise ConfigError(f"r_star = {self.r_star} exceeds p = {self.p}")
        if not 0.0 <= self.change_fraction <= 1.0:
            raise ConfigError("change_fraction must lie in [0, 1]")
        if self.n_change is not None and not 0 <= self.n_change <= self.n:
            raise ConfigError("n_change must lie in [0, n]")
        if self.dtilde0 is not None:
            self.dtilde0 = [float(x) for x in self.dtilde0]
            if len(self.dtilde0) > self.p:
                raise ConfigError("more loadings than dimensions")
        if self.design in ("changepoint_41", "dynamic_appA") and self.T < 3:
            raise ConfigError("change-point designs need T >= 3")
        self.sigma2_range = tuple(self.sigma2_range)
        self.d_range = tuple(self.d_range)
        if self.phi is None:
            self.phi = float(self.p + 1)
        if self.phi <= self.p - 1:
            raise ConfigError("phi must exceed p - 1")

    @property
    def changers(self) -> int:
        if self.design == "dynamic_appA":
            return self.n
        if self.n_change is not None:
            return self.n_change
        return int(round(self.change_fraction * self.n))


# desk-scale presets; the full-scale counterparts are listed alongside
PRESETS = {
    "indep-desk": dict(design="independence_311", p=20, N=100, dtilde0=[1.25, 2.0, 1.55]),
    "indep-full": dict(design="independence_311", p=50, N=100, dtilde0=[1.25, 2.0, 1.55]),
    "indep-weak-desk": dict(design="independence_311", p=20, N=100, dtilde0=[0.75, 1.25, 2.0, 1.55]),
    "hier-desk": dict(design="hierarchical_33", n=30, T=26, p=20, r_star=10),
    "hier-full": dict(design="hierarchical_33", n=100, T=26, p=50, r_star=10),
    "cp-desk": dict(design="changepoint_41", n=30, n_change=12, T=26, p=10, r_star=5),
    "cp-full": dict(design="changepoint_41", n=100, n_change=40, T=26, p=50, r_star=10),
    "nochange-desk": dict(design="changepoint_41", n=10, n_change=0, T=26, p=10, r_star=5),
    "dynamic-desk": dict(design="dynamic_appA", n=10, T=26, p=10, r_star=5),
}


def preset(name: str, **overrides) -> SimDesign:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return SimDesign(**kw)


@dataclass
class GroundTruth:
    design: dict
    subject_ids: list
    V: list  # one (p, r) array per regime
    dtilde: np.ndarray  # (regimes, n, r), first time point for dynamic data
    sigma2: np.ndarray  # (regimes, n)
    omega: np.ndarray  # (regimes, n, p, p), first time point of the regime for dynamic data
    ranks: np.ndarray  # (regimes, n)
    c: Optional[list] = None  # change points (1-based), T_i when there is no change
    has_change: Optional[list] = None
    dynamic_logd: Optional[np.ndarray] = None  # (regimes, n, T, r)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def conv(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, list):
                return [conv(y) for y in x]
            return x

        d = {k: conv(v) for k, v in asdict(self).items()}
        return json.dumps(d, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        d["V"] = [np.asarray(v) for v in d["V"]]
        for k in ("dtilde", "sigma2", "omega", "ranks"):
            d[k] = np.asarray(d[k])
        if d.get("dynamic_logd") is not None:
            d["dynamic_logd"] = np.asarray(d["dynamic_logd"])
        return cls(**d)


def _ids(n):
    width = len(str(n - 1))
    return [f"s{i:0{width}d}" for i in range(n)]


def _draw_loadings(rng, design, r):
    rank = int(rng.integers(1, r + 1))
    d = np.zeros(r)
    d[:rank] = rng.uniform(*design.d_range, size=rank)
    s2 = rng.uniform(*design.sigma2_range)
    return rank, d, s2


def _half_cauchy(rng, size=None):
    return np.abs(np.tan(np.pi * (rng.random(size) - 0.5)))


def generate(design: SimDesign, rng=None):
    """Draw a dataset and its ground truth for ``design``.

    Returns
    -------
    (Dataset, GroundTruth)
    """
    if rng is None:
        rng = rngmod.stream(design.seed, rngmod.DATA)
    kind = design.design
    p, phi = design.p, design.phi
    if kind == "independence_311":
        d0 = np.asarray(design.dtilde0 if design.dtilde0 is not None else [1.25, 2.0, 1.55])
        r = max(len(d0), 1)
        v0 = uniform_stiefel(rng, p, r)
        if len(d0) == 0:
            d0 = np.zeros(1)
        omega = omega_from(v0, d0, design.sigma2_0)
        S = wishart_sample(rng, phi, omega / phi, size=design.N)
        ids = ["pooled"] if design.n == 1 else _ids(design.n)
        per = np.array_split(np.arange(design.N), len(ids))
        data = Dataset(ids, [S[ix] for ix in per])
        n = len(ids)
        truth = GroundTruth(
            design=asdict(design), subject_ids=ids, V=[v0],
            dtilde=np.tile(d0, (1, n, 1)), sigma2=np.full((1, n), design.sigma2_0),
            omega=np.tile(omega, (1, n, 1, 1)), ranks=np.full((1, n), int(np.sum(d0 > 0))),
        )
        return data, truth

    n, T, r = design.n, design.T, design.r_star
    ids = _ids(n)
    if kind in ("hierarchical_33", "custom"):
        v0 = uniform_stiefel(rng, p, r)
        mats, dt, s2s, oms, ranks = [], [], [], [], []
        for _ in ids:
            if design.dtilde0 is not None and kind == "custom":
                d = np.zeros(r)
                d[: len(design.dtilde0)] = design.dtilde0
                s2 = rng.uniform(*design.sigma2_range)
                d = d * s2  # custom loadings are given on the dtilde scale
                rank = int(np.sum(d > 0))
            else:
                rank, d, s2 = _draw_loadings(rng, design, r)
            om = (v0 * d) @ v0.T + s2 * np.eye(p)
            mats.append(wishart_sample(rng, phi, om / phi, size=T))
            dt.append(d / s2)
            s2s.append(s2)
            oms.append(om)
            ranks.append(rank)
        truth = GroundTruth(
            design=asdict(design), subject_ids=ids, V=[v0], dtilde=np.array([dt]),
            sigma2=np.array([s2s]), omega=np.array([oms]), ranks=np.array([ranks]),
        )
        return Dataset(ids, mats), truth

    if kind == "changepoint_41":
        v1 = uniform_stiefel(rng, p, r)
        v2 = uniform_stiefel(rng, p, r)
        changers = set(rng.choice(n, size=design.changers, replace=False).tolist())
        mats = []
        dt = np.zeros((2, n, r))
        s2s = np.zeros((2, n))
        oms = np.zeros((2, n, p, p))
        ranks = np.zeros((2, n), dtype=int)
        cs, flags = [], []
        for i in range(n):
            for k, v in enumerate((v1, v2)):
                rank, d, s2 = _draw_loadings(rng, design, r)
                oms[k, i] = (v * d) @ v.T + s2 * np.eye(p)
                dt[k, i] = d / s2
                s2s[k, i] = s2
                ranks[k, i] = rank
            if i in changers:
                c = int(rng.integers(2, T))
            else:
                c = T
            S = np.empty((T, p, p))
            S[:c] = wishart_sample(rng, phi, oms[0, i] / phi, size=c)
            if c < T:
                S[c:] = wishart_sample(rng, phi, oms[1, i] / phi, size=T - c)
            mats.append(S)
            cs.append(c)
            flags.append(i in changers)
        truth = GroundTruth(
            design=asdict(design), subject_ids=ids, V=[v1, v2], dtilde=dt, sigma2=s2s,
            omega=oms, ranks=ranks, c=cs, has_change=flags,
        )
        return Dataset(ids, mats), truth

    if kind == "dynamic_appA":
        v1 = uniform_stiefel(rng, p, r)
        v2 = uniform_stiefel(rng, p, r)
        mats = []
        logd = np.full((2, n, T, r), np.nan)
        s2s = np.zeros((2, n))
        oms = np.zeros((2, n, p, p))
        cs = []
        for i in range(n):
            c = int(rng.integers(2, T))
            cs.append(c)
            S = np.empty((T, p, p))
            for k, (v, t0, t1) in enumerate(((v1, 0, c), (v2, c, T))):
                s2 = rng.uniform(*design.sigma2_range)
                tau = _truncated_unit_half_cauchy(rng)
                lam = _half_cauchy(rng, r)
                x = np.log(tau * lam)
                for t in range(t0, t1):
                    if t > t0:
                        x = design.rho * x + np.sqrt(design.v) * rng.standard_normal(r)
                    logd[k, i, t] = x
                    om = omega_from(v, np.exp(x), s2)
                    if t == t0:
                        oms[k, i] = om
                    S[t] = wishart_sample(rng, phi, om / phi)
                s2s[k, i] = s2
            mats.append(S)
        first = np.stack([logd[0, :, 0], logd[1, np.arange(n), np.array(cs)]])
        truth = GroundTruth(
            design=asdict(design), subject_ids=ids, V=[v1, v2], dtilde=np.exp(first),
            sigma2=s2s, omega=oms, ranks=np.full((2, n), r), c=cs, has_change=[True] * n,
            dynamic_logd=logd,
        )
        return Dataset(ids, mats), truth
    raise ConfigError(f"unknown design {kind!r}")


def _truncated_unit_half_cauchy(rng):
    # half-Cauchy restricted to (0, 1): tan of a uniform angle in (0, pi/4)
    return float(np.tan(0.25 * np.pi * rng.random()))


def score(ground: GroundTruth, trace: ChainTrace, distance: str = "euclidean") -> dict:
    """Compare posterior summaries with the truth.

    Returns a dict with ``d_omega`` (mean over subjects and regimes of the
    distance between the posterior mean and true ``Omega``), the per-subject
    ``d_omega_i`` (regime 0), ``d_sigma``, ``cp_accuracy`` and ``rank_accuracy``.
    """
    from .posthoc import estimate_rank

    if trace.omega_mean is None:
        raise UsageError("trace carries no posterior mean")
    dist = DISTANCES[distance]
    ids = list(trace.subject_ids)
    if trace.model == "independence" and ids == ["pooled"]:
        index = [0] * len(ground.subject_ids)
        order = list(range(len(ground.subject_ids)))
    else:
        if sorted(ids) != sorted(ground.subject_ids):
            raise UsageError("trace and ground truth cover different subjects")
        pos = {s: j for j, s in enumerate(ids)}
        order = list(range(len(ground.subject_ids)))
        index = [pos[s] for s in ground.subject_ids]
    K = min(trace.omega_mean.shape[0], ground.omega.shape[0])
    if trace.omega_mean.shape[-1] != ground.omega.shape[-1]:
        raise UsageError("dimension mismatch between trace and truth")
    d_om = np.array([[dist(trace.omega_mean[k, index[i]], ground.omega[k, i]) for i in order] for k in range(K)])
    s2_hat = trace.sigma2_mean()
    d_s = np.array([[abs(s2_hat[k, index[i]] - ground.sigma2[k, i]) for i in order] for k in range(K)])
    out = {
        "d_omega": float(d_om.mean()),
        "d_omega_i": d_om[0].tolist(),
        "d_sigma": float(d_s.mean()),
    }
    if ground.c is not None and trace.cp_probs is not None:
        modes = trace.cp_modes()
        hits = [modes[index[i]] == ground.c[i] for i in order if ground.has_change[i]]
        out["cp_accuracy"] = float(np.mean(hits)) if hits else float("nan")
    ranks_ok = []
    for k in range(K):
        for i in order:
            est = estimate_rank(trace, regime=k, subject=index[i]).mode
            ranks_ok.append(est == ground.ranks[k, i])
    out["rank_accuracy"] = float(np.mean(ranks_ok))
    return out
