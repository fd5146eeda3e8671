import numpy as np
import pytest
from scipy import integrate, special, stats

from covwish import stiefel
from covwish.errors import UsageError
from covwish.linalg import stiefel_error, uniform_stiefel


def _chisq_pvalue(samples, edges, probs):
    counts, _ = np.histogram(samples, bins=edges)
    expected = probs * len(samples)
    return stats.chisquare(counts, expected).pvalue


def test_vector_bingham_on_sphere_matches_bessel_marginal():
    # for H = diag(a1, a2, a3) on the 2-sphere, t = z1 has density
    # exp(a1 t^2 + (1 - t^2)(a2 + a3)/2) I0((1 - t^2)(a2 - a3)/2) on [-1, 1]
    a = np.array([2.0, 0.5, -1.0])
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((3, 3)))
    H = (q * a) @ q.T

    def dens(t):
        s = 1.0 - t * t
        return np.exp(a[0] * t * t + s * (a[1] + a[2]) / 2.0) * special.i0(s * (a[1] - a[2]) / 2.0)

    edges = np.linspace(0.0, 1.0, 11)
    mass = np.array([integrate.quad(dens, lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    probs = mass / mass.sum()
    rng = np.random.default_rng(2)
    z = np.array([1.0, 0.0, 0.0])
    out = []
    for _ in range(4000):
        z = stiefel.sample_vector_bingham(rng, H, z, sweeps=3)
        out.append(abs(q[:, 0] @ z))
    assert _chisq_pvalue(np.array(out), edges, probs) > 0.001


def test_rotate_pairs_exact_on_orthogonal_group():
    # p = r = 2: the column sweep can only flip signs; the rotation move alone
    # must reproduce the angle density exp(v1' H1 v1 + v2' H2 v2)
    A = np.array([[1.5, 0.7], [0.7, -0.5]])
    H = np.stack([2.0 * A, 0.5 * A])

    def logf(theta):
        v1 = np.array([np.cos(theta), np.sin(theta)])
        v2 = np.array([-np.sin(theta), np.cos(theta)])
        return v1 @ H[0] @ v1 + v2 @ H[1] @ v2

    edges = np.linspace(0.0, 2 * np.pi, 13)
    mass = np.array([integrate.quad(lambda t: np.exp(logf(t)), lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    rng = np.random.default_rng(3)
    v = np.eye(2)
    thetas = []
    for _ in range(5000):
        v = stiefel.rotate_pairs(rng, H, v)
        assert stiefel_error(v) < 1e-12
        thetas.append(np.arctan2(v[1, 0], v[0, 0]) % (2 * np.pi))
    assert _chisq_pvalue(np.array(thetas), edges, mass / mass.sum()) > 0.001


def test_column_field_keeps_orthonormality(rng):
    p, r = 8, 3
    hs = np.stack([np.diag(rng.uniform(0, 5, p)) for _ in range(r)])
    v = uniform_stiefel(rng, p, r)
    for _ in range(50):
        v = stiefel.sample_column_field(rng, hs, v)
        v = stiefel.rotate_pairs(rng, hs, v)
    assert stiefel_error(v) < 1e-10


def test_matrix_bingham_concentrates_on_top_eigenvectors(rng):
    p = 5
    A = np.diag([40.0, 30.0, 0.0, 0.0, 0.0])
    params = stiefel.BinghamParams(A, [2.0, 1.0])
    v = uniform_stiefel(rng, p, 2)
    kept = []
    for it in range(400):
        v = stiefel.sample_matrix_bingham(rng, params, v)
        if it >= 200:
            kept.append(np.abs(np.diag(v[:2, :2])))
    # column 1 carries the larger weight, so it aligns with e1, column 2 with e2
    assert np.all(np.mean(kept, axis=0) > 0.9)


def test_stiefel_chain_reorthonormalizes():
    v = np.eye(4)[:, :2] * (1 + 1e-6)
    ch = stiefel.StiefelChain(v)
    for _ in range(stiefel.REORTH_EVERY):
        ch.tick()
    assert ch.corrections == 1
    assert stiefel_error(ch.v) < 1e-14


def test_input_validation(rng):
    with pytest.raises(UsageError):
        stiefel.sample_vector_bingham(rng, np.eye(3), np.ones(3))
    with pytest.raises(UsageError):
        stiefel.sample_column_field(rng, np.zeros((2, 3, 3)), np.eye(3))
    with pytest.raises(UsageError):
        stiefel.BinghamParams(np.array([[0.0, 1.0], [0.0, 0.0]]), [1.0])
