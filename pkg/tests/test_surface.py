import numpy as np
import pytest

from nnoid.loops import inverse_stereographic
from nnoid.potential import central_params
from nnoid.solver import continue_in_t
from nnoid.surface import (axis_angle, build_mesh, chart_overlap, delaunay_profile,
                           discrete_mean_curvature, end_asymptotics, end_diagnostics,
                           evaluate_immersion, hopf_differential, limit_axis, loop_closure)

from helpers import ladder_family, noid_config, small_trinoid

CFG = small_trinoid(N=8, K=48)
X0 = central_params(CFG)


@pytest.fixture(scope="module")
def solved():
    t, x = continue_in_t(CFG, 2e-3, steps=2)[-1]
    return t, x


def test_t0_immersion_is_the_unit_sphere():
    for z in (0.2 + 0.1j, -0.5j, 1.7):
        pos, nrm = evaluate_immersion(CFG, 0.0, X0, z)
        assert np.allclose(pos, CFG.to_output(inverse_stereographic(z)), atol=1e-12)
        assert np.allclose(np.abs(nrm @ pos), 1, atol=1e-12)
    pos, _ = evaluate_immersion(CFG, 0.0, X0, complex(np.inf))
    assert np.allclose(pos, CFG.to_output([0, 0, -1]), atol=1e-12)


def test_loop_closure_and_chart_overlap(solved):
    t, x = solved
    for i in range(CFG.n):
        assert loop_closure(CFG, t, x, i) < 1e-8
        for phi in (0.3, 2.0):
            assert chart_overlap(CFG, t, x, i, phi) < 1e-8


def test_outer_chart_is_single_valued_near_infinity(solved):
    t, x = solved
    a, _ = evaluate_immersion(CFG, t, x, 40.0)
    b, _ = evaluate_immersion(CFG, t, x, complex(np.inf))
    assert np.linalg.norm(a - b) < 0.1


def test_flux_balance_and_axes(solved):
    t, x = solved
    diags = [end_diagnostics(CFG, t, x, i) for i in range(CFG.n)]
    total = sum(d.weight * d.axis_direction for d in diags)
    assert np.linalg.norm(total) < 1e-6 * t
    for d in diags:
        assert np.isclose(np.linalg.norm(d.axis_direction), 1)
        assert d.r > d.s > 0 and np.isclose(d.r + d.s, 0.5)
        assert np.isclose(d.flux_weight, d.weight, rtol=1e-6)
    for i in range(CFG.n):
        assert axis_angle(CFG, t, x, i) < 5


def test_limit_axis_points_along_end_direction():
    for i in range(CFG.n):
        point, direction = limit_axis(CFG, i)
        assert np.isclose(np.linalg.norm(point), 1, atol=1e-9)
        assert np.allclose(direction, CFG.u_input[i], atol=1e-9)
        assert np.allclose(point, CFG.u_input[i], atol=1e-9)


def test_umbilic_count(solved):
    t, x = solved
    hop = hopf_differential(CFG, t, x)
    assert hop.count == hop.expected == 2
    assert hop.h_residual < 1e-12


def test_mesh_topology_t0():
    mesh = build_mesh(CFG, 0.0, X0, resolution=8)
    assert mesh.check()
    assert np.allclose(np.linalg.norm(mesh.positions, axis=1), 1, atol=1e-12)
    V, F = len(mesh.positions), len(mesh.faces)
    edges = {tuple(sorted(e)) for f in mesh.faces for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))}
    # a sphere with n disks removed
    assert V - len(edges) + F == 2 - CFG.n
    inner, H = discrete_mean_curvature(mesh)
    assert abs(np.median(H) - 1) < 0.02


def test_obj_export(solved):
    t, x = solved
    mesh = build_mesh(CFG, t, x, resolution=8)
    text = mesh.to_obj()
    lines = text.splitlines()
    assert sum(ln.startswith("v ") for ln in lines) == len(mesh.positions)
    assert sum(ln.startswith("vn ") for ln in lines) == len(mesh.normals)
    assert sum(ln.startswith("f ") for ln in lines) == len(mesh.faces)
    groups = [ln for ln in lines if ln.startswith("g ")]
    assert groups == ["g outer"] + [f"g end_{i}" for i in range(CFG.n)]
    assert mesh.to_obj() == text


def test_unduloid_profile():
    r, s = 3 / 8, 1 / 8
    h, rho, period = delaunay_profile(r, s)
    assert np.isclose(rho.min(), 2 * s, rtol=1e-8) and np.isclose(rho.max(), 2 * r, rtol=1e-8)
    # the weight 8 pi r s equals the flux through a neck
    rmin = rho.min()
    assert np.isclose(8 * np.pi * r * s, 2 * np.pi * (rmin - rmin ** 2), rtol=1e-8)
    assert period > 0


@pytest.mark.slow
def test_mean_curvature_of_trinoid_mesh():
    fam, _ = ladder_family("trinoid")
    cfg = noid_config("trinoid")
    mesh = build_mesh(cfg, 1e-3, fam[1e-3], resolution=16)
    inner, H = discrete_mean_curvature(mesh)
    assert abs(np.mean(H) - 1) < 0.01


@pytest.mark.slow
def test_end_approaches_delaunay_surface():
    fam, _ = ladder_family("trinoid")
    cfg = noid_config("trinoid")
    dists, info = end_asymptotics(cfg, 1e-3, fam[1e-3], 0)
    assert all(b <= a for a, b in zip(dists, dists[1:]))
    assert info["fit_rms"] < 1e-4
    flux_dir = end_diagnostics(cfg, 1e-3, fam[1e-3], 0).axis_direction
    assert np.degrees(np.arccos(min(1.0, abs(info["axis_direction"] @ flux_dir)))) < 0.1
