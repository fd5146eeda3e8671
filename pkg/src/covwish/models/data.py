"""Dataset, model configuration and chain trace containers."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from ..errors import ConfigError, DataError, UsageError
from ..linalg import as_spd
from ..shrinkage import IgHyper

MODELS = ("independence", "hierarchical", "changepoint", "dynamic")


class Dataset:
    """Covariance matrices ``S_it`` indexed by subject and time (1-based in text,
    0-based in arrays).

    Parameters
    ----------
    subject_ids : sequence of str
    matrices : sequence of arrays, one ``(T_i, p, p)`` stack per subject
    """

    def __init__(self, subject_ids, matrices, symmetrize: bool = True):
        ids = [str(s) for s in subject_ids]
        if len(ids) != len(matrices):
            raise DataError("one matrix stack per subject is required")
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject identifiers")
        if not ids:
            raise DataError("empty dataset")
        stacks = []
        p = None
        for sid, m in zip(ids, matrices):
            m = np.asarray(m, dtype=float)
            if m.ndim == 2:
                m = m[None]
            if m.ndim != 3 or m.shape[1] != m.shape[2] or m.shape[0] == 0:
                raise DataError(f"subject {sid}: expected a (T, p, p) stack, got {m.shape}")
            if p is None:
                p = m.shape[1]
            elif m.shape[1] != p:
                raise DataError(f"subject {sid}: dimension {m.shape[1]} differs from {p}")
            stacks.append(as_spd(m) if symmetrize else m)
        self.subject_ids = ids
        self.matrices = stacks
        self.p = int(p)

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def times(self) -> list[int]:
        return [m.shape[0] for m in self.matrices]

    def __len__(self):
        return self.n

    def all_matrices(self) -> np.ndarray:
        return np.concatenate(self.matrices, axis=0)

    def pooled(self, label: str = "pooled") -> "Dataset":
        """Single-group view holding every matrix."""
        return Dataset([label], [self.all_matrices()], symmetrize=False)

    def sorted(self) -> "Dataset":
        order = sorted(range(self.n), key=lambda i: self.subject_ids[i])
        return Dataset([self.subject_ids[i] for i in order], [self.matrices[i] for i in order], symmetrize=False)

    def subset(self, ids) -> "Dataset":
        index = {s: i for i, s in enumerate(self.subject_ids)}
        return Dataset(list(ids), [self.matrices[index[s]] for s in ids], symmetrize=False)

    def windows(self, spans: dict) -> "Dataset":
        """Pseudo-subjects ``{new_id: (subject_id, t0, t1)}`` with 0-based, end-exclusive spans."""
        index = {s: i for i, s in enumerate(self.subject_ids)}
        ids, mats = [], []
        for new_id, (sid, t0, t1) in spans.items():
            ids.append(new_id)
            mats.append(self.matrices[index[sid]][t0:t1])
        return Dataset(ids, mats, symmetrize=False)


@dataclass
class ModelConfig:
    model: str = "independence"
    r_star: int = 5
    phi: Optional[float] = None
    phi1: Optional[float] = None
    phi2: Optional[float] = None
    iterations: int = 2000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    step_sd: float = 0.1
    ig_hyper: Union[str, IgHyper] = "elicit"
    cp_interior_only: bool = False  # True restricts change points to 2..T-1
    nocp_factor: float = 2.0  # no change when the mode probability <= nocp_factor / T
    inner_sweeps: int = 1
    threads: int = 1
    store_v: bool = True
    dyn_step_sd: float = 0.1

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if isinstance(self.ig_hyper, dict):
            self.ig_hyper = IgHyper(**self.ig_hyper)
        if isinstance(self.ig_hyper, str) and self.ig_hyper != "elicit":
            raise ConfigError("ig_hyper must be 'elicit' or an IgHyper")
        if self.r_star < 1:
            raise ConfigError("r_star must be at least 1")
        if not self.iterations > self.burn_in >= 0:
            raise ConfigError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.step_sd < 0 or self.dyn_step_sd < 0:
            raise ConfigError("step sizes must be non-negative")

    def phis(self, p: int) -> tuple[float, float]:
        base = float(self.phi) if self.phi is not None else float(p + 1)
        p1 = float(self.phi1) if self.phi1 is not None else base
        p2 = float(self.phi2) if self.phi2 is not None else base
        for v in (base, p1, p2):
            if v <= p - 1:
                raise ConfigError(f"phi = {v} must exceed p - 1 = {p - 1}")
        return p1, p2

    def check(self, data: Dataset) -> None:
        if self.r_star > data.p:
            raise ConfigError(f"r_star = {self.r_star} exceeds p = {data.p}")
        self.phis(data.p)
        if self.model in ("changepoint", "dynamic"):
            need = 3 if (self.cp_interior_only or self.model == "dynamic") else 1
            short = [s for s, t in zip(data.subject_ids, data.times) if t < need]
            if short:
                raise ConfigError(f"subjects {short[:3]} have fewer than {need} time points")

    @property
    def kept(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.ig_hyper, IgHyper):
            d["ig_hyper"] = {"alpha_sigma": self.ig_hyper.alpha_sigma, "beta_sigma": self.ig_hyper.beta_sigma}
        d.pop("threads")  # results never depend on the thread count
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ChainTrace:
    """Kept posterior draws and per-cell log-likelihoods.

    ``params`` maps a parameter name to an array whose first axis indexes kept
    iterations.  ``loglik`` has one column per observation cell listed in
    ``cells`` as ``(subject_id, time)`` with 1-based time.
    """

    model: str
    subject_ids: list
    times: list
    p: int
    r_star: int
    phi: tuple
    params: dict
    loglik: np.ndarray
    cells: list
    accept: dict = field(default_factory=dict)
    omega_mean: Optional[np.ndarray] = None  # (regimes, n, p, p)
    cp_probs: Optional[list] = None  # per subject, length-T posterior of c
    extra: dict = field(default_factory=dict)

    @property
    def kept(self) -> int:
        return self.loglik.shape[0]

    @property
    def n_regimes(self) -> int:
        return self.params["sigma2"].shape[1]

    def d_samples(self, regime: int = 0, subject: int = 0) -> np.ndarray:
        """Scaled loadings ``d_h = sigma2 * dtilde_h`` per kept iteration."""
        return self.params["sigma2"][:, regime, subject, None] * self.params["dtilde"][:, regime, subject, :]

    def sigma2_mean(self) -> np.ndarray:
        return self.params["sigma2"].mean(axis=0)

    def cp_modes(self) -> list:
        """Posterior modes of the change points (1-based; ties to the smaller k)."""
        if self.cp_probs is None:
            raise UsageError("trace has no change-point posterior")
        return [int(np.argmax(pr)) + 1 for pr in self.cp_probs]

    def acceptance_rates(self) -> dict:
        return {k: (a / n if n else float("nan")) for k, (a, n) in self.accept.items()}


def check_dataset(obj) -> Dataset:
    if not isinstance(obj, Dataset):
        raise UsageError("expected a Dataset")
    return obj
