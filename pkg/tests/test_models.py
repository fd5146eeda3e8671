import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from covwish import simgen
from covwish.errors import ConfigError, DataError
from covwish.models import ModelConfig, fit
from covwish.models.data import Dataset
from covwish.models.dynamic import V_SCALE, V_SHAPE, _log_v_target, draw_rho, rho_conditional
from covwish.models.static import cp_conditional, cp_grid, cp_log_weights


@pytest.fixture(scope="module")
def small_cp():
    design = simgen.SimDesign(design="changepoint_41", n=4, n_change=2, T=10, p=5, r_star=2, seed=3)
    return simgen.generate(design)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(model="mixture")
    with pytest.raises(ConfigError):
        ModelConfig(iterations=10, burn_in=10)
    with pytest.raises(ConfigError):
        ModelConfig(phi=3.0).phis(5)
    data = Dataset(["a"], [np.eye(3)[None]])
    with pytest.raises(ConfigError):
        ModelConfig(r_star=4).check(data)


def test_config_digest_ignores_threads():
    a = ModelConfig(seed=3, threads=1)
    assert a.digest() == replace(a, threads=4).digest()
    assert a.digest() != replace(a, seed=4).digest()


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(["a", "a"], [np.eye(2), np.eye(2)])
    with pytest.raises(DataError):
        Dataset(["a", "b"], [np.eye(2), np.eye(3)])
    d = Dataset(["b", "a"], [np.eye(2)[None], 2 * np.eye(2)[None].repeat(3, 0)])
    assert d.sorted().subject_ids == ["a", "b"]
    assert d.times == [1, 3]
    w = d.windows({"a@0-2": ("a", 0, 2)})
    assert w.times == [2]


def test_cp_grid_and_conditional():
    np.testing.assert_array_equal(cp_grid(5, True), [2, 3, 4])
    np.testing.assert_array_equal(cp_grid(5, False), [1, 2, 3, 4, 5])
    pre = np.array([0.0, -1.0, -2.0])
    post = np.array([-3.0, 0.0, 0.0])
    grid = cp_grid(3, False)
    # A_1 = 0 + 0 + 0, A_2 = 0 - 1 + 0, A_3 = 0 - 1 - 2
    np.testing.assert_allclose(cp_log_weights(pre, post, grid), [0.0, -1.0, -3.0])
    pr = cp_conditional(pre, post, grid)
    np.testing.assert_allclose(pr, np.exp([0.0, -1.0, -3.0]) / np.exp([0.0, -1.0, -3.0]).sum())


def test_cp_conditional_survives_huge_loglik():
    pre = np.array([-1e6, -1e6 + 5.0])
    post = np.array([-1e6 + 1.0, -1e6])
    pr = cp_conditional(pre, post, np.array([1, 2]))
    assert np.all(np.isfinite(pr)) and pr.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("model", ["independence", "hierarchical", "changepoint", "dynamic"])
def test_fit_shapes_and_determinism(model, small_cp):
    data, _ = small_cp
    cfg = ModelConfig(model=model, r_star=2, iterations=60, burn_in=20, thin=2, seed=5)
    a = fit(data, cfg)
    b = fit(data, cfg)
    assert a.kept == 20
    assert np.all(np.isfinite(a.loglik))
    assert a.loglik.shape[1] == (sum(data.times))
    for key in a.params:
        np.testing.assert_array_equal(a.params[key], b.params[key])
    if model in ("changepoint", "dynamic"):
        for pr, T in zip(a.cp_probs, data.times):
            assert pr.shape == (T,) and pr.sum() == pytest.approx(1.0)
        assert np.all((a.params["c"] >= 1) & (a.params["c"] <= 10))
    if model == "dynamic":
        assert np.all(np.abs(a.params["rho"]) < 1)
    c = fit(data, replace(cfg, seed=6))
    assert not np.array_equal(a.loglik, c.loglik)


def test_thread_count_does_not_change_results(small_cp):
    data, _ = small_cp
    cfg = ModelConfig(model="changepoint", r_star=2, iterations=40, burn_in=10, seed=1)
    a = fit(data, cfg)
    b = fit(data, replace(cfg, threads=3))
    np.testing.assert_array_equal(a.loglik, b.loglik)
    np.testing.assert_array_equal(a.params["c"], b.params["c"])


def test_subject_order_does_not_change_results(small_cp):
    data, _ = small_cp
    cfg = ModelConfig(model="hierarchical", r_star=2, iterations=30, burn_in=10, seed=2)
    rev = Dataset(data.subject_ids[::-1], data.matrices[::-1])
    a, b = fit(data, cfg), fit(rev, cfg)
    np.testing.assert_array_equal(a.params["sigma2"], b.params["sigma2"])


def test_independence_recovers_noise_level():
    design = simgen.preset("indep-desk", seed=1, N=200)
    data, truth = simgen.generate(design)
    tr = fit(data, ModelConfig(model="independence", r_star=5, iterations=600, burn_in=300, seed=1))
    assert abs(tr.sigma2_mean()[0, 0] - truth.sigma2[0, 0]) < 0.03


def test_rho_conditional_matches_quadrature():
    rng = np.random.default_rng(7)
    v = 0.3
    x = [0.2]
    for _ in range(12):
        x.append(0.8 * x[-1] + math.sqrt(v) * rng.standard_normal())
    x = np.array(x)
    prev, nxt = x[:-1], x[1:]

    def logf(r):
        return -0.5 * np.sum((nxt[None, :] - r[:, None] * prev[None, :]) ** 2, axis=1) / v

    grid = np.linspace(-1, 1, 20001)
    f = np.exp(logf(grid) - logf(grid).max())
    cdf = integrate.cumulative_trapezoid(f, grid, initial=0)
    cdf /= cdf[-1]
    draws = np.array([draw_rho(rng, prev, nxt, v) for _ in range(3000)])
    assert np.all(np.abs(draws) < 1)
    assert stats.kstest(draws, lambda q: np.interp(q, grid, cdf)).pvalue > 0.001
    mean, sd = rho_conditional(prev, nxt, v)
    assert sd == pytest.approx(math.sqrt(v / np.sum(prev**2)))


def test_log_v_target_matches_gamma_prior_plus_normal_residuals():
    resid = np.array([0.3, -0.1, 0.5, 0.2])
    ss, n = float(np.sum(resid**2)), resid.size

    def ref(logv):
        v = math.exp(logv)
        return (
            stats.gamma.logpdf(v, V_SHAPE, scale=V_SCALE)
            + np.sum(stats.norm.logpdf(resid, scale=math.sqrt(v)))
            + logv
        )

    a, b = math.log(0.05), math.log(0.7)
    assert _log_v_target(a, ss, n) - _log_v_target(b, ss, n) == pytest.approx(ref(a) - ref(b), rel=1e-10)
