"""Compiled inner loops: vector Bingham transitions, the Stiefel column sweep
and truncated gamma / beta draws.

Special functions come from ``scipy.special.cython_special`` as named external
symbols so they can be called from ``numba`` code.  The double-precision specialization
is checked against ``scipy.special`` at import time.
"""
from __future__ import annotations

import ctypes

import llvmlite.binding as llvm
import numpy as np
import scipy.special as sc
from numba import njit, types
from numba.extending import get_cython_function_address

_MOD = "scipy.special.cython_special"
_SIG3 = types.float64(types.float64, types.float64, types.float64)
_SIG2 = types.float64(types.float64, types.float64)


def _bind_checked(base, nargs, args, ref):
    # fused specializations are ordered differently across scipy builds
    proto = ctypes.CFUNCTYPE(ctypes.c_double, *([ctypes.c_double] * nargs))
    for name in (f"__pyx_fuse_0{base}", f"__pyx_fuse_1{base}", base):
        try:
            addr = get_cython_function_address(_MOD, name)
        except ValueError:
            continue
        if abs(proto(addr)(*args) - ref) <= 1e-12 * max(1.0, abs(ref)):
            # a named symbol keeps the compiled kernels cacheable across processes
            symbol = f"covwish_{base}"
            llvm.add_symbol(symbol, addr)
            return types.ExternalFunction(symbol, _SIG3 if nargs == 3 else _SIG2)
    raise ImportError(f"no double specialization of {base} matches scipy.special")


_betainc = _bind_checked("betainc", 3, (0.5, 3.0, 0.2), float(sc.betainc(0.5, 3.0, 0.2)))
_betaincinv = _bind_checked("betaincinv", 3, (0.5, 3.0, 0.4), float(sc.betaincinv(0.5, 3.0, 0.4)))
_gammainc = _bind_checked("gammainc", 2, (2.5, 1.7), float(sc.gammainc(2.5, 1.7)))
_gammaincc = _bind_checked("gammaincc", 2, (2.5, 1.7), float(sc.gammaincc(2.5, 1.7)))
_gammaincinv = _bind_checked("gammaincinv", 2, (2.5, 0.3), float(sc.gammaincinv(2.5, 0.3)))
_gammainccinv = _bind_checked("gammainccinv", 2, (2.5, 0.3), float(sc.gammainccinv(2.5, 0.3)))


# ---------------------------------------------------------------- beta / gamma


@njit(cache=True)
def beta_below(rng, a, b, xmax):
    """Beta(a, b) restricted to (0, xmax]."""
    if xmax >= 1.0:
        return rng.beta(a, b)
    pmax = _betainc(a, b, xmax)
    u = rng.random()
    if pmax > 1e-300:
        x = _betaincinv(a, b, u * pmax)
        if x > 0.0 and x <= xmax:
            return x
    # deep left tail: density ~ x^(a-1) near zero
    return xmax * u ** (1.0 / a)


@njit(cache=True)
def _log_gamma_kernel(k, t):
    return (k - 1.0) * np.log(t) - t


@njit(cache=True)
def _trunc_exp(rng, rate, width):
    # density ~ exp(-rate * s) on [0, width]; rate may be any sign
    u = rng.random()
    if abs(rate * width) < 1e-12:
        return u * width
    if rate > 0:
        return -np.log1p(u * np.expm1(-rate * width)) / rate
    return width + np.log1p(u * np.expm1(rate * width)) / (-rate)


@njit(cache=True)
def _gamma_fallback(rng, k, tlo, thi):
    # rejection for a unit-rate gamma on [tlo, thi] when CDF differences underflow
    mode = max(k - 1.0, 0.0)
    for _ in range(100000):
        if k < 1.0:
            # proposal ~ t^(k-1) on [tlo, thi]; accept with exp(-(t - tlo))
            u = rng.random()
            lo_k = tlo ** k
            t = (lo_k + u * (thi ** k - lo_k)) ** (1.0 / k)
            if np.log(rng.random()) <= -(t - tlo):
                return t
        elif thi <= mode:
            s = (k - 1.0) / thi - 1.0  # tangent slope at the upper end (>= 0)
            t = thi - _trunc_exp(rng, s, thi - tlo)
            logacc = _log_gamma_kernel(k, t) - _log_gamma_kernel(k, thi) + s * (thi - t)
            if np.log(rng.random()) <= logacc:
                return t
        elif tlo >= mode:
            s = (k - 1.0) / tlo - 1.0  # tangent slope at the lower end (<= 0)
            t = tlo + _trunc_exp(rng, -s, thi - tlo)
            logacc = _log_gamma_kernel(k, t) - _log_gamma_kernel(k, tlo) - s * (t - tlo)
            if np.log(rng.random()) <= logacc:
                return t
        else:
            t = tlo + rng.random() * (thi - tlo)
            if np.log(rng.random()) <= _log_gamma_kernel(k, t) - _log_gamma_kernel(k, mode):
                return t
    return min(max(mode, tlo), thi)


@njit(cache=True)
def trunc_gamma(rng, shape, rate, lo, hi):
    """Gamma(shape, rate) restricted to [lo, hi] by inverse CDF on the better tail."""
    tlo = lo * rate
    thi = hi * rate
    if thi <= tlo:
        return lo
    u = rng.random()
    plo = _gammainc(shape, tlo)
    if plo < 0.5:
        phi_ = _gammainc(shape, thi)
        if phi_ - plo > 1e-280 and phi_ - plo > 1e-10 * phi_:
            t = _gammaincinv(shape, plo + u * (phi_ - plo))
            if t >= tlo and t <= thi:
                return t / rate
    else:
        qlo = _gammaincc(shape, tlo)
        qhi = _gammaincc(shape, thi)
        if qlo - qhi > 1e-280 and qlo - qhi > 1e-10 * qlo:
            t = _gammainccinv(shape, qhi + u * (qlo - qhi))
            if t >= tlo and t <= thi:
                return t / rate
    return _gamma_fallback(rng, shape, tlo, thi) / rate


# ---------------------------------------------------------------- shrinkage


@njit(cache=True)
def slice_locals(rng, lam, g, m_diag, n_eff, phi, sigma2):
    """In-place slice update of the local scales; see ``shrinkage``."""
    r = lam.shape[0]
    shape = n_eff * phi / 2.0 - 1.0
    for h in range(r):
        if n_eff == 0:
            lam[h] = np.tan(0.5 * np.pi * rng.random())
            continue
        d = g * lam[h]
        w = 1.0 / (1.0 + d)
        x = (1.0 - w) / w
        u = rng.random() / (g * g + x * x)
        slack = 1.0 / u - g * g
        lo = 1.0 / (1.0 + np.sqrt(slack)) if slack > 0.0 else 1.0
        rate = phi * m_diag[h] / (2.0 * sigma2)
        if lo >= 1.0:
            w_new = 1.0
        else:
            w_new = trunc_gamma(rng, shape, rate, lo, 1.0)
        lam[h] = (1.0 - w_new) / (w_new * g)
        if not lam[h] > 0.0:
            lam[h] = 1e-300
    return lam


# ---------------------------------------------------------------- Bingham


@njit(cache=True)
def _bingham_coords(rng, ev, y):
    """One random-scan sweep over the squared coordinates of ``y`` (unit norm)
    for the density exp(sum ev_i y_i^2) on the sphere."""
    m = y.shape[0]
    if m == 1:
        y[0] = 1.0 if rng.random() < 0.5 else -1.0
        return
    b = 0.5 * (m - 1)
    order = rng.permutation(m)
    for idx in range(m):
        i = order[idx]
        s_rest = 0.0
        wsum = 0.0
        for j in range(m):
            if j != i:
                s_rest += y[j] * y[j]
                wsum += ev[j] * y[j] * y[j]
        total = s_rest + y[i] * y[i]
        q_cur = y[i] * y[i] / total
        if s_rest > 1e-300:
            a = ev[i] - wsum / s_rest
        else:
            a = 0.0
        e = rng.exponential()
        if a < 0.0:
            hi = q_cur + e / (-a)
            q = beta_below(rng, 0.5, b, hi)
        elif a > 0.0:
            lo = q_cur - e / a
            if lo <= 0.0:
                q = rng.beta(0.5, b)
            else:
                q = 1.0 - beta_below(rng, b, 0.5, 1.0 - lo)
        else:
            q = rng.beta(0.5, b)
        q = min(max(q, 0.0), 1.0)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if s_rest > 1e-300:
            scale = np.sqrt((1.0 - q) / s_rest)
            for j in range(m):
                if j != i:
                    y[j] *= scale
        else:
            # rest direction undefined: draw it uniformly
            nrm = 0.0
            for j in range(m):
                if j != i:
                    y[j] = rng.standard_normal()
                    nrm += y[j] * y[j]
            scale = np.sqrt((1.0 - q) / nrm)
            for j in range(m):
                if j != i:
                    y[j] *= scale
        y[i] = sign * np.sqrt(q)
    nrm = np.sqrt(np.sum(y * y))
    for j in range(m):
        y[j] /= nrm


@njit(cache=True)
def vector_bingham_step(rng, h, z, sweeps):
    ev, vec = np.linalg.eigh(h)
    y = vec.T @ z
    for _ in range(sweeps):
        _bingham_coords(rng, ev, y)
    out = vec @ y
    return out / np.sqrt(np.sum(out * out))


@njit(cache=True)
def null_basis(v, j):
    """Orthonormal basis (p x (p - r + 1)) of the complement of V without column j."""
    p, r = v.shape
    x = np.zeros((p, r - 1 + p))
    k = 0
    for c in range(r):
        if c != j:
            x[:, k] = v[:, c]
            k += 1
    for i in range(p):
        x[i, r - 1 + i] = 1.0
    q, _ = np.linalg.qr(x)
    return np.ascontiguousarray(q[:, r - 1:])


@njit(cache=True)
def column_sweep(rng, hs, v, order, inner):
    """Gibbs sweep over columns: v_j | V_{-j} ~ exp(v_j' H_j v_j) on the null sphere."""
    r = v.shape[1]
    for idx in range(r):
        j = order[idx]
        n = null_basis(v, j)
        ht = n.T @ hs[j] @ n
        ht = 0.5 * (ht + ht.T)
        z = n.T @ np.ascontiguousarray(v[:, j])
        nz = np.sqrt(np.sum(z * z))
        if nz < 1e-8:
            z = rng.standard_normal(z.shape[0])
            nz = np.sqrt(np.sum(z * z))
        z = z / nz
        z = vector_bingham_step(rng, ht, z, inner)
        col = n @ z
        if rng.random() < 0.5:
            col = -col
        v[:, j] = col
    return v
