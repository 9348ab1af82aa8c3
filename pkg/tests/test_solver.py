import numpy as np
import pytest

from nnoid.potential import NoidConfig, central_params
from nnoid.solver import (SolverError, StepUnderflowError, UnknownLayout, continue_in_t, jacobian,
                          normalize, params_from_t0_data, residual, residual_vector, solve_at,
                          t0_residual_closed_form, verify_t0_characterization)
from nnoid.transport import monodromy

from helpers import small_trinoid

CFG = small_trinoid(N=8, K=48)
X0 = central_params(CFG)


def tetra_config(N=8, K=48):
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float) / np.sqrt(3)
    return NoidConfig.create(v, [1, 1, 1, 1], N=N, K=K)


def perturbed(x, rng, scale):
    sh = x.a.shape
    decay = 0.5 ** np.arange(sh[1])
    noise = lambda: scale * (rng.normal(size=sh) + 1j * rng.normal(size=sh)) * decay
    return x.copy_with(a=x.a + noise(), b=x.b + noise(), p=x.p + 0.1 * noise())


# -- layout -------------------------------------------------------------------

@pytest.mark.parametrize("n", [3, 4, 5, 7])
@pytest.mark.parametrize("N", [1, 4, 24])
def test_system_is_square(n, N):
    lay = UnknownLayout(n, N)
    assert lay.audit() == (n - 1) * (6 * N + 3) + 6 * N + 6
    assert len(lay.directions()) == lay.size


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(0)
    x = normalize(perturbed(X0, rng, 0.1), CFG)
    lay = UnknownLayout(CFG.n, CFG.N)
    y = lay.unpack(lay.pack(x), CFG)
    for name in "abp":
        assert np.array_equal(getattr(x, name), getattr(y, name))
    # the normalization fixes Re a_i(0) and p_i(0) for i <= n-1
    assert np.allclose(x.a[:2, 0].real, CFG.tau[:2])
    assert np.allclose(x.p[:2, 0], CFG.pi[:2])


# -- t = 0 --------------------------------------------------------------------

def test_central_parameters_solve_t0():
    assert residual(CFG, 0.0, X0).norm() < 1e-12
    assert np.max(np.abs(t0_residual_closed_form(CFG, X0))) < 1e-12
    rep = verify_t0_characterization(X0)
    assert rep["ok"], rep
    y = params_from_t0_data(CFG.tau, CFG.pi, CFG.N, CFG.rho)
    assert np.array_equal(y.b, X0.b)


def test_t0_characterization_detects_violations():
    bad = X0.copy_with(a=X0.a + np.array([[0, 1e-3] + [0] * (CFG.N - 1)] * 3))
    rep = verify_t0_characterization(bad)
    assert not rep["passed"]["a_real_constant"]
    assert rep["passed"]["p_constant"]
    unbalanced = X0.copy_with(a=X0.a * np.array([[1.0], [1.0], [1.1]]))
    rep = verify_t0_characterization(unbalanced)
    assert not rep["passed"]["balance"] and not rep["passed"]["b_formula"]


def test_transported_t0_residual_matches_residue_formula():
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = normalize(perturbed(X0, rng, 0.05), CFG)
        assert np.max(np.abs(residual_vector(CFG, 0.0, x) - t0_residual_closed_form(CFG, x))) < 1e-10


def test_newton_recovers_t0_solution():
    rng = np.random.default_rng(2)
    x, nlog = solve_at(CFG, 0.0, perturbed(X0, rng, 1e-3))
    assert nlog.converged
    for name in "abp":
        assert np.max(np.abs(getattr(x, name) - getattr(X0, name))) < 1e-10
    _, nlog = solve_at(CFG, 0.0, X0)
    assert len(nlog.norms) == 1


# -- Jacobian structure at t = 0 --------------------------------------------------

def _claim_blocks(J, cfg, x, i, m):
    """Complex 3x3 blocks (F+, G+, (G-)*) x (a, b, p) and its i-rotated counterpart."""
    N = cfg.N
    B = 6 * N + 3
    r0, c0 = i * B, i * B
    rows = [r0 + 2 * (m - 1), r0 + 2 * N + 1 + 2 * (m - 1), r0 + 4 * N + 3 + 2 * (m - 1)]
    cols = [c0 + 2 * (m - 1), c0 + 2 * N + 2 * (m - 1), c0 + 4 * N + 2 * (m - 1)]
    re = np.array([[J[r, c] + 1j * J[r + 1, c] for c in cols] for r in rows])
    im = np.array([[J[r, c + 1] + 1j * J[r + 1, c + 1] for c in cols] for r in rows])
    return re, im


def _h_block(J, cfg, m):
    N = cfg.N
    r0 = c0 = (cfg.n - 1) * (6 * N + 3)
    rows = [r0 + k * 2 * (N + 1) + 2 * m for k in range(3)]
    cols = [c0 + k * 2 * (N + 1) + 2 * m for k in range(3)]
    return np.array([[J[r, c] + 1j * J[r + 1, c] for c in cols] for r in rows])


@pytest.mark.parametrize("closed_form", [True, False])
@pytest.mark.parametrize("make", [lambda: CFG, tetra_config])
def test_claim_blocks_at_t0(make, closed_form):
    cfg = make()
    x = central_params(cfg)
    J = jacobian(cfg, 0.0, x, closed_form_t0=closed_form)
    tau, b, p = x.a[:, 0].real, x.b[:, 0], x.p[:, 0]
    for i in range(cfg.n - 1):
        expected = 2j * np.pi * np.array([[1, p[i], b[i]],
                                          [-2 * p[i], -p[i] ** 2, -2 * (tau[i] + b[i] * p[i])],
                                          [0, 1, 0]])
        for m in (1, 2, cfg.N):
            re, im = _claim_blocks(J, cfg, x, i, m)
            assert np.max(np.abs(re - expected)) < 1e-9
            assert np.max(np.abs(im - 1j * expected)) < 1e-9
            assert abs(np.linalg.det(re / (2j * np.pi)) - 2 * tau[i]) < 1e-9
    j = cfg.n - 1
    for m in (0, 1, cfg.N):
        Hb = _h_block(J, cfg, m)
        assert abs(np.linalg.det(Hb) + 2 * tau[j]) < 1e-9


@pytest.mark.parametrize("closed_form", [True, False])
def test_jacobian_block_lower_triangular_at_t0(closed_form):
    cfg = tetra_config()
    J = jacobian(cfg, 0.0, central_params(cfg), closed_form_t0=closed_form)
    B = 6 * cfg.N + 3
    off = 0.0
    for i in range(cfg.n - 1):
        rows = J[i * B:(i + 1) * B]
        mask = np.ones(J.shape[1], bool)
        mask[i * B:(i + 1) * B] = False
        off = max(off, np.max(np.abs(rows[:, mask])))
    assert off <= 1e-12
    assert np.linalg.cond(J) < 1e8


# -- finite t ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_family():
    return continue_in_t(CFG, 2e-3, steps=2)


def test_continuation_reaches_target(small_family):
    t, x = small_family[-1]
    assert t == pytest.approx(2e-3)
    assert residual(CFG, t, x).norm() <= 1e-10
    for i in range(CFG.n):
        M = monodromy(CFG, t, x, i)
        assert M.unitarity_defect() < 1e-8


def test_jacobian_matches_finite_differences(small_family):
    rng = np.random.default_rng(4)
    lay = UnknownLayout(CFG.n, CFG.N)
    for t, x in small_family[1:]:
        J, r = jacobian(CFG, t, x, with_residual=True)
        assert np.allclose(r, residual_vector(CFG, t, x), atol=1e-13)
        v = lay.pack(x)
        for k in rng.choice(lay.size, 8, replace=False):
            h = 1e-6
            e = np.zeros(lay.size)
            e[k] = h
            fd = (residual_vector(CFG, t, lay.unpack(v + e, CFG))
                  - residual_vector(CFG, t, lay.unpack(v - e, CFG))) / (2 * h)
            assert np.max(np.abs(J[:, k] - fd)) < 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_solution_at_finite_t_keeps_t0_structure(small_family):
    t, x = small_family[-1]
    # the weights move by O(t) and stay real; poles stay inside their disks
    assert np.max(np.abs(x.a[:, 0].imag)) < 1e-12
    assert np.max(np.abs(x.p[:, 0] - CFG.pi)) < 0.5 * CFG.epsilon


def test_continuation_failure_reports_progress():
    with pytest.raises(StepUnderflowError) as info:
        continue_in_t(CFG, 0.3, steps=1, min_step=0.05)
    assert isinstance(info.value, SolverError)
    assert info.value.t_reached < 0.3
    assert info.value.family[0][0] == 0.0


def test_newton_failure_raises():
    with pytest.raises(SolverError):
        solve_at(CFG, 1e-3, X0, max_iter=0)
