import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from covwish.linalg import uniform_stiefel, wishart_sample
from covwish.models.likelihood import (
    CellParams,
    cell_logliks,
    logdet_omega,
    loglik_cell,
    loglik_cell_dense,
    omega_from,
    projections,
)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_structured_loglik_matches_dense(seed):
    rng = np.random.default_rng(seed)
    p, r = 10, 5
    params = CellParams(uniform_stiefel(rng, p, r), rng.exponential(2.0, r), rng.uniform(0.1, 2.0), p + rng.uniform(0.5, 10))
    S = wishart_sample(rng, params.phi, params.omega() / params.phi)
    assert loglik_cell(S, params) == pytest.approx(loglik_cell_dense(S, params), abs=1e-8)


def test_dense_path_matches_scipy(rng):
    p, r = 4, 2
    params = CellParams(uniform_stiefel(rng, p, r), np.array([3.0, 0.5]), 0.7, 6.5)
    S = wishart_sample(rng, params.phi, params.omega() / params.phi)
    ref = stats.wishart.logpdf(S, df=params.phi, scale=params.omega() / params.phi)
    assert loglik_cell_dense(S, params) == pytest.approx(ref, rel=1e-12)


def test_log_determinant_identity(rng):
    p = 7
    v = uniform_stiefel(rng, p, 3)
    dt = np.array([0.3, 2.0, 5.0])
    om = omega_from(v, dt, 0.4)
    assert logdet_omega(dt, 0.4, p) == pytest.approx(np.linalg.slogdet(om)[1], rel=1e-12)


def test_vectorized_cells_agree_with_single_cell(rng):
    p, r = 5, 2
    params = CellParams(uniform_stiefel(rng, p, r), np.array([1.0, 0.2]), 0.5, 8.0)
    S = wishart_sample(rng, params.phi, params.omega() / params.phi, size=6)
    ll = cell_logliks(
        projections(S, params.V),
        np.trace(S, axis1=1, axis2=2),
        np.linalg.slogdet(S)[1],
        params.dtilde,
        params.sigma2,
        params.phi,
        p,
    )
    np.testing.assert_allclose(ll, [loglik_cell(s, params) for s in S], rtol=1e-12)


def test_zero_loadings_reduce_to_isotropic(rng):
    p = 3
    params = CellParams(uniform_stiefel(rng, p, 2), np.zeros(2), 0.25, 5.0)
    np.testing.assert_allclose(params.omega(), 0.25 * np.eye(p))
