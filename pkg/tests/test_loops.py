import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnoid.loops import (IwasawaError, LoopMatrix, NotUnitaryError, adjugate, det2, inner,
                         inverse_stereographic, iwasawa, nor, sphere_frame, sphere_iwasawa,
                         stereographic, su2_to_vec, sym, vec_to_su2)

coord = st.floats(-3, 3, allow_nan=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)
disk_point = st.tuples(st.floats(0, 3), st.floats(0, 2 * np.pi)).map(lambda r: r[0] * np.exp(1j * r[1]))


@settings(max_examples=200, deadline=None)
@given(vec3, vec3)
def test_su2_identification(x, y):
    X = vec_to_su2(x)
    assert np.allclose(X + X.conj().T, 0) and abs(np.trace(X)) < 1e-14
    assert np.allclose(su2_to_vec(X), x)
    assert np.isclose(inner(x, y), x @ y, atol=1e-12 * (1 + np.abs(x).sum() * np.abs(y).sum()))


def test_su2_to_vec_rejects_non_su2():
    with pytest.raises(ValueError):
        su2_to_vec(np.eye(2))


@settings(max_examples=60, deadline=None)
@given(disk_point)
def test_sphere_iwasawa_matches_closed_form(z):
    pair = iwasawa(sphere_frame(z, 12))
    F, B = sphere_iwasawa(z, 12)
    assert pair.check() == []
    assert pair.F.max_diff(F) < 1e-10
    assert pair.B.max_diff(B) < 1e-10
    pos = sym(pair.F) + np.array([0, 0, 1])
    assert np.allclose(pos, inverse_stereographic(z), atol=1e-10)
    assert np.allclose(nor(pair.F), -inverse_stereographic(z), atol=1e-10)


def test_normal_of_identity_frame():
    assert np.allclose(nor(LoopMatrix.identity(4)), [0, 0, -1])
    assert np.allclose(sym(LoopMatrix.identity(4)), 0)


def test_sym_requires_unitary_frame():
    with pytest.raises(NotUnitaryError):
        sym(sphere_frame(0.5, 4))


def _random_loop(rng, N=6):
    """A product of a unitary-ish and a positive loop with det 1 and mild decay."""
    terms = {}
    for k in range(0, 3):
        terms[k] = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))) * 0.2 ** k
    terms[0] = np.eye(2) + 0.1 * terms[0]
    return LoopMatrix.from_terms(terms, N)


def test_iwasawa_generic_loop_reproduces_input():
    rng = np.random.default_rng(3)
    for _ in range(5):
        Phi = _random_loop(rng, N=24)
        pair = iwasawa(Phi)
        F, B = pair.F.on_grid(64), pair.B.on_grid(64)
        assert np.allclose(F @ B, Phi.on_grid(64), atol=1e-9)
        assert np.allclose(F @ F.conj().transpose(0, 2, 1), np.eye(2), atol=1e-9)
        assert pair.residual < 1e-9


def test_iwasawa_fails_on_singular_loop():
    Phi = LoopMatrix.from_terms({0: [[1, 0], [0, 0]]}, 4)
    with pytest.raises(IwasawaError):
        iwasawa(Phi)


def test_loop_matrix_algebra():
    rng = np.random.default_rng(0)
    A, B = _random_loop(rng, 8), _random_loop(rng, 8)
    K = 64
    assert np.allclose((A @ B).on_grid(K), A.on_grid(K) @ B.on_grid(K), atol=1e-10)
    assert np.allclose(A.adjugate().on_grid(K), adjugate(A.on_grid(K)))
    assert np.allclose(A.det().samples(K), det2(A.on_grid(K)), atol=1e-10)
    lam = 1.01 * np.exp(0.3j)
    h = 1e-6
    fd = (A(lam + h) - A(lam - h)) / (2 * h)
    assert np.allclose(A.dlam(lam), fd, atol=1e-7)


@settings(max_examples=200, deadline=None)
@given(disk_point)
def test_stereographic_round_trip(z):
    u = inverse_stereographic(z)
    assert np.isclose(np.linalg.norm(u), 1)
    assert abs(stereographic(u) - z) < 1e-9 * (1 + abs(z))
