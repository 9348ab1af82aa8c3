import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from nnoid.loops import stereographic
from nnoid.potential import (ConfigError, NecksizeError, NoidConfig, PoleProximityError,
                             apply_gauge, central_params, delaunay_eigenvalue_sq,
                             delaunay_residue_grid, g_infinity, g_infinity_dz, gauge_infinity,
                             omega, omega_values, regularity_H, regularity_H_grid, rs_split, xi,
                             xi_grid)
from nnoid.wiener import circle_grid, coeffs_from_samples

from helpers import small_trinoid


@st.composite
def balanced_ends(draw):
    """Four random directions with the (generically unique) balancing weights."""
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(4, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    tau = np.linalg.svd(u.T)[2][-1]
    assume(np.min(np.abs(tau)) > 0.05)
    assume(min(np.linalg.norm(u[i] - u[j]) for i in range(4) for j in range(i)) > 0.2)
    return u, tau / np.max(np.abs(tau))


@settings(max_examples=40, deadline=None)
@given(balanced_ends())
def test_config_geometry(ends):
    u, tau = ends
    cfg = NoidConfig.create(u, tau, N=4, K=16)
    R = cfg.rotation
    assert np.allclose(R @ R.T, np.eye(3)) and np.isclose(np.linalg.det(R), 1)
    assert np.allclose(cfg.u, u @ R.T)
    assert np.allclose(cfg.to_output(cfg.u), u)
    assert np.allclose(cfg.pi, [stereographic(v) for v in cfg.u])
    eps = cfg.epsilon
    assert eps > 0
    assert np.all(np.abs(cfg.pi) > 2 * eps)
    for i in range(4):
        for j in range(i):
            assert abs(cfg.pi[i] - cfg.pi[j]) > 4 * eps


@settings(max_examples=40, deadline=None)
@given(balanced_ends())
def test_central_parameters_are_regular(ends):
    u, tau = ends
    cfg = NoidConfig.create(u, tau, N=4, K=16)
    x = central_params(cfg)
    for H in regularity_H(x):
        assert np.max(np.abs(H.coeffs)) < 1e-12
    # in the limit each end is a round sphere: tau_i a_i with |b_i| fixed by pi_i
    assert np.allclose(x.a[:, 0], tau)


@pytest.mark.parametrize("u, tau, msg", [
    ([[1, 0, 0], [-1, 0, 0]], [1, 1], "three"),
    ([[1, 0, 0], [0, 1, 0], [0, 0, 1]], [1, 1, 1], "balancing"),
    ([[1, 0, 0], [-1, 0, 0], [1, 0, 0]], [1, 2, 1], "coincide"),
    ([[1, 0, 0], [-1, 0, 0], [0, 1, 0]], [1, 1, 0], "non-zero"),
    ([[2, 0, 0], [-1, 0, 0], [0, 1, 0]], [1, 1, 1], "unit"),
])
def test_config_rejections(u, tau, msg):
    with pytest.raises(ConfigError, match=msg):
        NoidConfig.create(u, tau)


def test_grid_must_resolve_products():
    u = [[1, 0, 0], [-0.5, np.sqrt(3) / 2, 0], [-0.5, -np.sqrt(3) / 2, 0]]
    with pytest.raises(ConfigError, match="grid"):
        NoidConfig.create(u, [1, 1, 1], N=24, K=64)


def test_omega_loop_matches_pointwise_values():
    cfg = small_trinoid(N=8, K=48)
    x = central_params(cfg)
    z = 0.3 + 0.1j
    om = omega(x, z, cfg.K)
    lam = circle_grid(cfg.K)
    a, b, p = x.values(lam)
    assert np.allclose(om.samples(cfg.K), omega_values(a, b, p, z))
    pot = xi(1e-3, x, z, cfg.K)
    assert np.allclose(pot.matrix.on_grid(cfg.K), xi_grid(1e-3, x, z, lam), atol=1e-12)
    with pytest.raises(PoleProximityError):
        omega(x, cfg.pi[0] + 0.1 * cfg.epsilon, cfg.K, eps=cfg.epsilon)


def test_regularity_grid_agrees_with_algebra():
    cfg = small_trinoid(N=8, K=48)
    rng = np.random.default_rng(1)
    x0 = central_params(cfg)
    x = x0.copy_with(a=x0.a + 0.01 * rng.normal(size=x0.a.shape),
                     p=x0.p + 0.01j * rng.normal(size=x0.p.shape))
    lam = circle_grid(cfg.K)
    grid = regularity_H_grid(*x.values(lam))
    for H, g in zip(regularity_H(x), grid):
        # degree-2 products of degree-8 loops need the untruncated coefficients
        assert np.allclose(H.nonneg()[:5], coeffs_from_samples(g, 8)[8:13], atol=1e-10)


def test_gauge_at_infinity_closed_form():
    cfg = small_trinoid(N=8, K=48)
    x = central_params(cfg)
    t = 2e-3
    lam = circle_grid(cfg.K)
    for z in (3.0 + 1j, -2.5j, 5.0):
        pot = xi(t, x, z, cfg.K)
        closed = gauge_infinity(pot).on_grid(cfg.K)
        field = lambda w: xi_grid(t, x, w, lam)
        numeric = apply_gauge(field, lambda w: g_infinity(w, lam), z, lambda w: g_infinity_dz(w, lam))
        assert np.allclose(closed, numeric, atol=1e-10)
        cauchy = apply_gauge(field, lambda w: g_infinity(w, lam), z)
        assert np.allclose(closed, cauchy, atol=1e-8)
    with pytest.raises(ValueError):
        apply_gauge(lambda w: xi_grid(t, x, w, lam), lambda w: 2 * g_infinity(w, lam), 3.0)


def test_delaunay_data():
    r, s = rs_split(3 / 64)
    assert np.isclose(r * s, 3 / 64) and np.isclose(r + s, 0.5) and r > s
    lam = circle_grid(32)
    A = delaunay_residue_grid(r, s, lam)
    ev = np.linalg.eigvals(A)
    assert np.allclose(np.sort_complex(ev ** 2)[:, 0], delaunay_eigenvalue_sq(r, s, lam))
    with pytest.raises(NecksizeError):
        rs_split(1 / 16)
