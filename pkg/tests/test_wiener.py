import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nnoid.wiener import (AliasingWarning, WienerFunction, circle_grid, coeffs_from_samples,
                          fft_bridge, to_samples)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def wiener_pairs(draw):
    N = draw(st.integers(0, 8))
    rho = draw(st.floats(1.01, 2.0))
    shape = 2 * N + 1
    re = draw(arrays(float, (2, shape), elements=finite))
    im = draw(arrays(float, (2, shape), elements=finite))
    c = re + 1j * im
    return WienerFunction(c[0], rho), WienerFunction(c[1], rho)


def _full_norm(full, rho):
    M = (len(full) - 1) // 2
    return float(np.sum(np.abs(full) * rho ** np.abs(np.arange(-M, M + 1))))


@settings(max_examples=1000, deadline=None)
@given(wiener_pairs())
def test_algebra_invariants(pair):
    f, g = pair
    scale = 1 + f.norm() * g.norm()
    # star is an involution and respects products
    assert np.array_equal(f.star().star().coeffs, f.coeffs)
    fg = f.full_product(g)
    star_fg = np.convolve(f.star().coeffs, g.star().coeffs)
    assert np.allclose(np.conj(fg[::-1]), star_fg, atol=1e-12 * scale)
    # the weighted norm is submultiplicative
    assert _full_norm(fg, f.rho) <= f.norm() * g.norm() * (1 + 1e-12) + 1e-300
    # truncation keeps track of every discarded coefficient
    h = f.mul(g)
    assert abs(h.norm() + h.debt - _full_norm(fg, f.rho)) <= 1e-12 * scale
    # projections partition the loop
    parts = f.project("minus") + f.project("zero") + f.project("plus")
    assert np.array_equal(parts.coeffs, f.coeffs)
    assert np.array_equal((f.project("geq0") + f.project("minus")).coeffs, f.coeffs)
    assert np.array_equal((f.project("leq0") + f.project("plus")).coeffs, f.coeffs)


@settings(max_examples=300, deadline=None)
@given(wiener_pairs(), st.integers(0, 5))
def test_fft_round_trip(pair, extra):
    f, _ = pair
    K = 2 * f.N + 1 + extra
    s = f.samples(K)
    assert np.allclose(s, f.eval(circle_grid(K)), atol=1e-10 * (1 + f.norm()))
    back = coeffs_from_samples(s, f.N)
    assert np.allclose(back, f.coeffs, atol=1e-12 * (1 + f.norm()))


@settings(max_examples=300, deadline=None)
@given(wiener_pairs())
def test_grid_product_matches_convolution(pair):
    f, g = pair
    K = 4 * f.N + 2
    full = f.full_product(g)
    prod = coeffs_from_samples(f.samples(K) * g.samples(K), 2 * f.N)
    assert np.allclose(prod, full, atol=1e-11 * (1 + f.norm() * g.norm()))


def test_half_offset_grid_avoids_one():
    for K in (3, 8, 128):
        assert np.min(np.abs(circle_grid(K) - 1)) > 0


def test_constructors_and_indexing():
    f = WienerFunction.from_dict({-2: 1, 0: 3, 1: 2j}, N=3)
    assert f[-2] == 1 and f[0] == 3 and f[1] == 2j and f[7] == 0
    assert np.allclose(WienerFunction.monomial(2, 5, N=3).eval(1.01), 5 * 1.01 ** 2)
    assert np.allclose(f.derivative().eval(1.02), -2 * 1.02 ** -3 + 2j)
    assert WienerFunction.from_nonneg([1, 2], N=2)[1] == 2
    with pytest.raises(ValueError):
        WienerFunction.monomial(4, N=3)
    with pytest.raises(ValueError):
        WienerFunction(np.ones(4))
    with pytest.raises(ValueError):
        WienerFunction(np.ones(3), rho=1.0)


def test_eval_rejects_points_outside_annulus():
    f = WienerFunction.constant(1.0, N=2, rho=1.1)
    with pytest.raises(ValueError):
        f.eval(1.2)
    assert f.eval(1.05) == 1


def test_mismatched_operands():
    f = WienerFunction.constant(1.0, N=2)
    with pytest.raises(ValueError):
        f + WienerFunction.constant(1.0, N=3)
    with pytest.raises(ValueError):
        f + WienerFunction.constant(1.0, N=2, rho=1.2)
    with pytest.raises(ValueError):
        f.project("upper")


def test_fft_bridge_warns_on_heavy_tail():
    lam = circle_grid(64)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fft_bridge(1 + lam / 2, N=8)
    with pytest.warns(AliasingWarning):
        fft_bridge(1 / (1 - 0.9 * lam), N=8)


def test_to_samples_requires_enough_nodes():
    with pytest.raises(ValueError):
        to_samples(np.ones(9), 8)
