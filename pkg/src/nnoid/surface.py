"""Immersion, end diagnostics, umbilics and meshes of a solved n-noid.

Positions are returned in the input frame and translated by (0, 0, 1), so the
t = 0 surface is the unit sphere and the ends point along the input
directions.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from .loops import LoopMatrix, inverse_stereographic, iwasawa, nor, su2_vec_loose, sym
from .potential import (
    NoidConfig,
    ParamVector,
    delaunay_chart_gauge,
    rs_split,
)
from .transport import (
    I2,
    Arc,
    Line,
    Path,
    RayToInfinity,
    monodromy_data,
    plan_path,
    rescaled_log,
    sweep,
)

SHIFT = np.array([0.0, 0.0, 1.0])


class MeshError(RuntimeError):
    pass


class BranchPointWarning(UserWarning):
    pass


# -- frames -------------------------------------------------------------------

def _sphere_part(z, lam, gauged):
    """Phi_0 = [[1, z/lambda], [0, 1]], or Phi_0 G_inf = [[0, 1/lambda], [-lambda, 1/z]]."""
    z = np.broadcast_to(np.asarray(z, complex), lam.shape)
    out = np.zeros(lam.shape + (2, 2), complex)
    if gauged:
        out[..., 0, 1] = 1 / lam
        out[..., 1, 0] = -lam
        out[..., 1, 1] = np.where(np.isinf(z), 0, 1 / np.where(np.isinf(z), 1, z))
    else:
        out[..., 0, 0] = 1
        out[..., 0, 1] = z / lam
        out[..., 1, 1] = 1
    return out


def _frame(cfg, t, V, z):
    lam = cfg.grid
    s = t * (lam - 1) ** 2 / lam
    U = I2 + s[:, None, None] * V
    zz = np.asarray(z, complex)
    gauged = bool(np.all(np.isinf(zz)) or np.min(np.abs(zz)) > 1)
    return U @ _sphere_part(z, lam, gauged)


def frame_to_point(cfg: NoidConfig, Phi_grid):
    """(position, normal) in the input frame from grid values of a holomorphic frame."""
    Phi = LoopMatrix.from_grid(Phi_grid, cfg.N, cfg.rho)
    F = iwasawa(Phi).F
    pos = sym(F) + SHIFT
    nrm = nor(F)
    return cfg.to_output(pos), cfg.to_output(nrm)


def _check_regular(beta):
    if abs(beta) < 1e-12:
        warnings.warn("branch point: dz coefficient of the potential vanishes", BranchPointWarning)


def outer_path(cfg: NoidConfig, z, centers):
    return plan_path(0j, z, centers, 1.5 * cfg.epsilon)


def _outer_V(cfg, t, x, z):
    if t == 0:
        return np.zeros((cfg.K, 2, 2), complex)
    if np.isinf(z):
        R = 2 * max(1.0, float(np.max(np.abs(x.p[:, 0])))) + 1
        z0 = R * np.exp(1j * np.angle(z)) if np.isfinite(np.angle(z)) else R
        V = sweep(cfg, t, x, outer_path(cfg, z0, x.p[:, 0])).V
        return sweep(cfg, t, x, Path([RayToInfinity(z0)]), V0=V).V
    return sweep(cfg, t, x, outer_path(cfg, z, x.p[:, 0])).V


def _end_path(cfg, x, i, w, center):
    """0 -> circle C(center, 2 eps) -> short arc to arg(w) -> per-node line to p_i(lambda) + w."""
    lam = cfg.grid
    r = 2 * cfg.epsilon
    base = center * (1 - r / abs(center))
    th_b = float(np.angle(base - center))
    dth = (float(np.angle(w)) - th_b + np.pi) % (2 * np.pi) - np.pi
    _, _, p = x.values(lam)
    start = center + r * np.exp(1j * (th_b + dth))
    common = Path([Line(0j, base), Arc(center, r, th_b, th_b + dth)])
    tail = Path([Line(np.full(lam.shape, start), p[i] + w)])
    return common, tail


def evaluate_immersion(cfg: NoidConfig, t, x: ParamVector, z, chart="outer"):
    """Position and unit normal at z (outer chart, z may be inf) or at w = z in end chart i."""
    lam = cfg.grid
    if chart == "outer":
        _check_regular(1.0)
        V = _outer_V(cfg, t, x, complex(z))
        return frame_to_point(cfg, _frame(cfg, t, V, z))
    i = int(chart)
    w = complex(z)
    if not 0 < abs(w) < 4 * cfg.epsilon:
        raise ValueError("end chart coordinate must satisfy 0 < |w| < 4 eps")
    _, _, p = x.values(lam)
    zz = p[i] + w
    if t == 0:
        V = np.zeros((cfg.K, 2, 2), complex)
    else:
        common, tail = _end_path(cfg, x, i, w, complex(x.p[i, 0]))
        V = sweep(cfg, t, x, common).V
        V = sweep(cfg, t, x, tail, V0=V, poles=p).V
    return frame_to_point(cfg, _frame(cfg, t, V, zz))


# -- diagnostics ----------------------------------------------------------------

@dataclass
class EndDiagnostics:
    index: int
    weight: float
    r: float
    s: float
    axis_direction: np.ndarray  # from the flux of the end at this t
    limit_axis_point: np.ndarray
    limit_axis_direction: np.ndarray
    flux_weight: float

    def as_dict(self):
        return {
            "index": self.index,
            "weight": self.weight,
            "r": self.r,
            "s": self.s,
            "axis_direction": list(map(float, self.axis_direction)),
            "limit_axis_point": list(map(float, self.limit_axis_point)),
            "limit_axis_direction": list(map(float, self.limit_axis_direction)),
            "flux_weight": self.flux_weight,
        }


def flux_vector(cfg, t, x, i):
    """su(2) vector of M~_i(lambda = 1), internal frame; 4 pi a_i pi^{-1}(p_i) at t = 0."""
    md = monodromy_data(cfg, t, x, i)
    Mt, _ = rescaled_log(md.V, md.s)
    M1 = LoopMatrix.from_grid(Mt, cfg.N, cfg.rho)(1.0)
    return su2_vec_loose(M1)


def limit_axis(cfg: NoidConfig, i):
    """Axis through Sym(Q) directed by -Nor(Q), Q = Uni(Phi_hat(1) G(1) H) at t = 0."""
    lam = cfg.grid
    pi = cfg.pi[i]
    Phi_hat = _sphere_part(pi + 1, lam, False)
    G = delaunay_chart_gauge(1.0, lam, 1 / np.sqrt(2))
    H = np.zeros(lam.shape + (2, 2), complex)
    H[:, 0, 0] = H[:, 1, 1] = 1 / np.sqrt(2)
    H[:, 0, 1] = -1 / (np.sqrt(2) * lam)
    H[:, 1, 0] = lam / np.sqrt(2)
    Q = iwasawa(LoopMatrix.from_grid(Phi_hat @ G @ H, cfg.N, cfg.rho)).F
    return cfg.to_output(sym(Q) + SHIFT), cfg.to_output(-nor(Q))


def end_diagnostics(cfg: NoidConfig, t, x: ParamVector, i) -> EndDiagnostics:
    a = float(x.a[i, 0].real)
    weight = 8 * np.pi * t * a
    r, s = rs_split(t * a)
    v = flux_vector(cfg, t, x, i)
    direction = np.sign(a) * v / np.linalg.norm(v)
    point, ldir = limit_axis(cfg, i)
    return EndDiagnostics(i, weight, r, s, cfg.to_output(direction), point, ldir,
                          float(2 * t * np.linalg.norm(v)))


def axis_angle(cfg, t, x, i):
    """Angle in degrees between the end axis at t and the input direction u_i."""
    d = end_diagnostics(cfg, t, x, i).axis_direction
    u = cfg.u_input[i]
    return float(np.degrees(np.arccos(np.clip(d @ u, -1, 1))))


def omega0_numerator(x: ParamVector):
    """Polynomial coefficients (increasing degree) of the numerator of omega(z, 0)."""
    a, b, p = x.at0()
    P = np.polynomial.polynomial
    n = len(a)
    num = np.zeros(2 * n, complex)
    for i in range(n):
        others = np.array([1.0 + 0j])
        for j in range(n):
            if j != i:
                others = P.polymul(others, P.polypow([-p[j], 1], 2))
        term = P.polyadd(a[i] * others, b[i] * P.polymul([-p[i], 1], others))
        num[: len(term)] += term
    return num


@dataclass
class HopfData:
    coefficients: np.ndarray  # Hopf differential numerator, increasing degree
    roots: np.ndarray
    count: int
    expected: int
    trimmed: np.ndarray
    h_residual: float
    min_separation: float

    def as_dict(self):
        return {
            "roots": [[float(z.real), float(z.imag)] for z in self.roots],
            "count": self.count,
            "expected": self.expected,
            "h_residual": self.h_residual,
            "min_root_separation": self.min_separation,
        }


def hopf_differential(cfg: NoidConfig, t, x: ParamVector, rel_tol=1e-9) -> HopfData:
    """Zeros of -2 t omega(z, 0) dz; the umbilics of the surface.

    The three leading numerator coefficients vanish when the regularity
    conditions hold at lambda = 0; they are trimmed against ``rel_tol``.
    """
    from .potential import regularity_H

    num = omega0_numerator(x)
    hop = -2 * t * num if t != 0 else num
    scale = np.max(np.abs(num))
    c = num.copy()
    trimmed = []
    while len(c) > 1 and abs(c[-1]) <= rel_tol * scale:
        trimmed.append(c[-1])
        c = c[:-1]
    roots = np.polynomial.polynomial.polyroots(c) if len(c) > 1 else np.array([], complex)
    H = regularity_H(x)
    hres = float(max(abs(h[0]) for h in H))
    sep = np.inf
    for k in range(len(roots)):
        for m in range(k + 1, len(roots)):
            sep = min(sep, abs(roots[k] - roots[m]))
    if sep < 1e-6:
        warnings.warn(f"clustered umbilics (separation {sep:.2e}); roots are ill-conditioned")
    return HopfData(hop, roots, len(roots), 2 * cfg.n - 4, np.array(trimmed), hres, float(sep))


def loop_closure(cfg: NoidConfig, t, x: ParamVector, i):
    """|f(z0) - f(gamma_i . z0)| for the base point z0 of the generator loop around end i."""
    from .transport import generator_path

    seg, loop = generator_path(cfg, i, x.p[i, 0])
    z0 = complex(seg.end())
    V1 = sweep(cfg, t, x, seg).V
    V2 = sweep(cfg, t, x, loop, V0=V1).V
    f1, _ = frame_to_point(cfg, _frame(cfg, t, V1, z0))
    f2, _ = frame_to_point(cfg, _frame(cfg, t, V2, z0))
    return float(np.linalg.norm(f1 - f2))


def chart_overlap(cfg, t, x, i, phi=0.3):
    """Outer chart at p_i(0) + 3 eps e^{i phi} versus end chart i at w = 3 eps e^{i phi}."""
    w = 3 * cfg.epsilon * np.exp(1j * phi)
    f_out, _ = evaluate_immersion(cfg, t, x, complex(x.p[i, 0]) + w)
    f_end, _ = evaluate_immersion(cfg, t, x, w, chart=i)
    return float(np.linalg.norm(f_out - f_end))


# -- meshes -------------------------------------------------------------------

@dataclass
class SurfaceMesh:
    z: np.ndarray
    chart: np.ndarray  # -1 for the outer chart, i for end i
    positions: np.ndarray
    normals: np.ndarray
    faces: np.ndarray
    face_group: np.ndarray
    ends: list = field(default_factory=list)

    def check(self):
        if not np.all(np.isfinite(self.positions)):
            bad = int(np.argmin(np.all(np.isfinite(self.positions), axis=1)))
            raise MeshError(f"non-finite vertex {bad} (chart {self.chart[bad]}, z={self.z[bad]})")
        nn = np.linalg.norm(self.normals, axis=1)
        if np.max(np.abs(nn - 1)) > 1e-8:
            raise MeshError("normals are not unit vectors")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.positions)):
            raise MeshError("face index out of range")
        return True

    def to_obj(self):
        out = ["# n-noid mesh"]
        out += [f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in self.positions]
        out += [f"vn {q[0]:.17g} {q[1]:.17g} {q[2]:.17g}" for q in self.normals]
        for g in np.unique(self.face_group):
            out.append("g outer" if g < 0 else f"g end_{g}")
            for f in self.faces[self.face_group == g] + 1:
                out.append(f"f {f[0]}//{f[0]} {f[1]}//{f[1]} {f[2]}//{f[2]}")
        return "\n".join(out) + "\n"

    def boundary_vertices(self):
        edges = {}
        for f in self.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        bnd = set()
        for (a, b), c in edges.items():
            if c == 1:
                bnd.update((a, b))
        return bnd


class _Builder:
    def __init__(self, cfg, t, x):
        self.cfg, self.t, self.x = cfg, t, x
        self.z, self.chart, self.pos, self.nrm = [], [], [], []

    def add(self, z, chart, V, zz=None):
        zz = z if zz is None else zz
        p, q = frame_to_point(self.cfg, _frame(self.cfg, self.t, V, zz))
        self.z.append(complex(z))
        self.chart.append(chart)
        self.pos.append(p)
        self.nrm.append(q)
        return len(self.z) - 1


def _march(cfg, t, x, segments_between, V, poles=None):
    """Continue V through the given path pieces; identity at t = 0."""
    if t == 0:
        return V
    return sweep(cfg, t, x, Path(segments_between), V0=V, poles=poles).V


def build_mesh(cfg: NoidConfig, t, x: ParamVector, resolution=32, end_truncation=None) -> SurfaceMesh:
    """Sphere-like grid on the outer chart plus annular grids on each end chart."""
    if resolution < 4:
        raise MeshError("resolution must be at least 4")
    eps = cfg.epsilon
    end_truncation = end_truncation or eps / 16
    if not 0 < end_truncation < 2 * eps:
        raise MeshError("end_truncation must lie in (0, 2 eps)")
    lam = cfg.grid
    K = cfg.K
    zeroV = np.zeros((K, 2, 2), complex)
    centers = centers_t = x.p[:, 0].copy()
    bld = _Builder(cfg, t, x)

    # outer chart: rays from 0 sampled at the latitudes of the pulled-back sphere grid
    n_lat, n_lon = resolution, 2 * resolution
    keep_out = 2.3 * eps
    bld.add(0j, -1, zeroV)
    radii = np.tan(np.linspace(0, np.pi, n_lat + 1)[1:-1] / 2)
    for phi in 2 * np.pi * np.arange(n_lon) / n_lon:
        V = zeroV
        prev = 0j
        for r in radii:
            z = r * np.exp(1j * phi)
            if np.min(np.abs(z - centers_t)) < keep_out:
                continue
            V = _march(cfg, t, x, plan_path(prev, z, centers, 1.5 * eps).segments, V)
            prev = z
            bld.add(z, -1, V)
    bld.add(complex(np.inf), -1, _outer_V(cfg, t, x, complex(np.inf)))

    # rings |z - p_i(0)| = 2 eps, shared with the end charts
    n_ring = max(16, resolution)
    n_lev = max(4, resolution // 4)
    levels = 2 * eps * (end_truncation / (2 * eps)) ** (np.arange(n_lev + 1) / n_lev)
    ring_ids, end_ids = [], []
    _, _, p = x.values(lam)
    for i in range(cfg.n):
        c = complex(centers_t[i])
        r = 2 * eps
        base = c * (1 - r / abs(c))
        th_b = float(np.angle(base - c))
        V_base = _march(cfg, t, x, [Line(0j, base)], zeroV)
        angles = th_b + 2 * np.pi * np.arange(n_ring) / n_ring
        Vring = [None] * n_ring
        Vring[0] = V_base
        half = n_ring // 2
        V = V_base
        for m in range(1, half + 1):
            V = _march(cfg, t, x, [Arc(c, r, angles[m - 1], angles[m])], V)
            Vring[m] = V
        V = V_base
        for m in range(n_ring - 1, half, -1):
            a_from = angles[(m + 1) % n_ring] - (2 * np.pi if m + 1 == n_ring else 0)
            V = _march(cfg, t, x, [Arc(c, r, a_from, angles[m] - 2 * np.pi)], V)
            Vring[m] = V
        ids = np.empty((n_lev + 1, n_ring), int)
        for m in range(n_ring):
            zr = c + r * np.exp(1j * angles[m])
            ids[0, m] = bld.add(zr, -1, Vring[m])
        # end chart: radial per-node march z = p_i(lambda) + w
        for m in range(n_ring):
            e = np.exp(1j * angles[m])
            V = Vring[m]
            prev = np.full(lam.shape, c + r * e)
            for lvl in range(1, n_lev + 1):
                w = levels[lvl] * e
                nxt = p[i] + w
                V = _march(cfg, t, x, [Line(prev, nxt)], V, poles=p)
                prev = nxt
                ids[lvl, m] = bld.add(w, i, V, zz=nxt)
        ring_ids.append(ids[0])
        end_ids.append(ids)

    z = np.array(bld.z)
    chart = np.array(bld.chart)
    pos = np.array(bld.pos)
    nrm = np.array(bld.nrm)

    # outer triangulation: convex hull of the sphere images of outer vertices
    outer = np.where(chart == -1)[0]
    sph = np.array([inverse_stereographic(zz) if np.isfinite(zz) else np.array([0.0, 0, -1]) for zz in z[outer]])
    hull = ConvexHull(sph)
    ring_of = -np.ones(len(z), int)
    for i, ids in enumerate(ring_ids):
        ring_of[ids] = i
    faces = []
    for simp, eq in zip(hull.simplices, hull.equations):
        f = outer[simp]
        rs = ring_of[f]
        if rs[0] >= 0 and rs[0] == rs[1] == rs[2]:
            continue  # cap over an end
        a, b, cc = sph[simp]
        if np.dot(np.cross(b - a, cc - a), eq[:3]) < 0:
            f = f[[0, 2, 1]]
        faces.append(f)
    groups = [-1] * len(faces)
    # orientation of annuli must agree with the outer part: compare on the sphere image
    for i, ids in enumerate(end_ids):
        for lvl in range(n_lev):
            for m in range(n_ring):
                m2 = (m + 1) % n_ring
                q = [ids[lvl, m], ids[lvl, m2], ids[lvl + 1, m2], ids[lvl + 1, m]]
                tri = [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
                for f in tri:
                    zz = [z[k] if chart[k] == -1 else centers_t[i] + z[k] for k in f]
                    P = np.array([inverse_stereographic(v) for v in zz])
                    if np.dot(np.cross(P[1] - P[0], P[2] - P[0]), P.mean(0)) < 0:
                        f = [f[0], f[2], f[1]]
                    faces.append(np.array(f))
                    groups.append(i)
    mesh = SurfaceMesh(z, chart, pos, nrm, np.array(faces, int), np.array(groups, int))
    mesh.ends = [end_diagnostics(cfg, t, x, i).as_dict() | {"chart_radius": 2 * eps,
                                                            "end_truncation": end_truncation}
                 for i in range(cfg.n)] if t != 0 else []
    mesh.check()
    return mesh


def discrete_mean_curvature(mesh: SurfaceMesh):
    """Cotangent-formula mean curvature at interior vertices, with mixed Voronoi areas."""
    P = mesh.positions
    nV = len(P)
    Hn = np.zeros((nV, 3))
    area = np.zeros(nV)
    for f in mesh.faces:
        X = P[f]
        A = 0.5 * np.linalg.norm(np.cross(X[1] - X[0], X[2] - X[0]))
        cots = np.empty(3)
        obtuse = -1
        for k in range(3):
            u = X[(k + 1) % 3] - X[k]
            v = X[(k + 2) % 3] - X[k]
            cots[k] = np.dot(u, v) / np.linalg.norm(np.cross(u, v))
            if np.dot(u, v) < 0:
                obtuse = k
        for k in range(3):
            j, l = (k + 1) % 3, (k + 2) % 3
            e = X[j] - X[l]
            Hn[f[j]] += cots[k] * e
            Hn[f[l]] -= cots[k] * e
        if obtuse < 0:
            for k in range(3):
                j, l = (k + 1) % 3, (k + 2) % 3
                # Voronoi share of vertex j and l across the edge opposite k
                d2 = np.sum((X[j] - X[l]) ** 2)
                area[f[j]] += cots[k] * d2 / 8
                area[f[l]] += cots[k] * d2 / 8
        else:
            for k in range(3):
                area[f[k]] += A / 2 if k == obtuse else A / 4
    bnd = mesh.boundary_vertices()
    inner = np.array([k for k in range(nV) if k not in bnd and area[k] > 0])
    H = np.linalg.norm(Hn[inner], axis=1) / (4 * area[inner])
    return inner, H


def diagnostics_json(cfg: NoidConfig, t, x: ParamVector, residual_norm=None, extra=None):
    ends = [end_diagnostics(cfg, t, x, i).as_dict() for i in range(cfg.n)] if t != 0 else []
    hop = hopf_differential(cfg, t, x)
    doc = {
        "t": t,
        "n": cfg.n,
        "epsilon": cfg.epsilon,
        "ends": ends,
        "umbilics": hop.as_dict(),
        "residual_norm": residual_norm,
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True)


# -- Delaunay comparison --------------------------------------------------------

def delaunay_profile(r, s, samples=4001):
    """Meridian of the H = 1 unduloid with neck radius 2s and bulge radius 2r.

    Returns (h, rho, period): one period starting at a neck at h = 0. The
    curve solves rho' = sin psi, h' = cos psi, psi' = cos(psi)/rho - 2.
    """
    from scipy.integrate import solve_ivp

    if not (r > s > 0):
        raise ValueError("closed-form profile implemented for unduloids (r > s > 0)")
    rmin = 2 * s

    def rhs(_, y):
        rho, h, psi = y
        return [np.sin(psi), np.cos(psi), np.cos(psi) / rho - 2]

    def next_neck(_, y):
        return np.sin(y[2]) if _ > 1e-6 else 1.0

    next_neck.direction = -1
    # psi decreases from 0 through -pi/2 ... the neck is reached again when psi returns to 0 mod 2 pi
    sol = solve_ivp(rhs, (0, 20), [rmin, 0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-14,
                    dense_output=True, events=None, max_step=0.01)
    rho = sol.y[0]
    # one period: between consecutive local minima of rho
    mins = np.where((rho[1:-1] < rho[:-2]) & (rho[1:-1] <= rho[2:]))[0] + 1
    end = sol.t[mins[0]] if len(mins) else sol.t[-1]
    sig = np.linspace(0, end, samples)
    y = sol.sol(sig)
    return y[1], y[0], float(y[1][-1])


def _meridian_distance(hx, rx, h, rho, period):
    """Distance from points (hx, rx) in the meridian half-plane to the periodic profile."""
    hx = np.mod(hx, period)
    H = np.concatenate([h[:-1] - period, h[:-1], h + period])
    R = np.concatenate([rho[:-1], rho[:-1], rho])
    a = np.stack([H[:-1], R[:-1]], -1)
    e = np.stack([np.diff(H), np.diff(R)], -1)
    q = np.stack([hx, rx], -1)
    rel = q[:, None, :] - a[None]
    u = np.clip(np.sum(rel * e[None], -1) / np.sum(e * e, -1)[None], 0, 1)
    d = rel - u[..., None] * e[None]
    return np.sqrt(np.min(np.sum(d * d, -1), axis=1))


def _to_meridian(P, point, direction, phase):
    d = direction / np.linalg.norm(direction)
    rel = P - point
    hx = rel @ d - phase
    rx = np.linalg.norm(rel - np.outer(rel @ d, d), axis=1)
    return hx, rx


def _end_radial_V(cfg, t, x, i, angle, radii):
    """V along the ray w = rho e^{i angle} of end chart i, for decreasing radii < 2 eps."""
    lam = cfg.grid
    _, _, p = x.values(lam)
    c = complex(x.p[i, 0])
    r = 2 * cfg.epsilon
    if t == 0:
        return [np.zeros((cfg.K, 2, 2), complex) for _ in radii]
    common, _ = _end_path(cfg, x, i, r * np.exp(1j * angle), c)
    V = sweep(cfg, t, x, common).V
    prev = np.full(lam.shape, c + r * np.exp(1j * angle))
    out = []
    for rr in radii:
        nxt = p[i] + rr * np.exp(1j * angle)
        V = sweep(cfg, t, x, Path([Line(prev, nxt)]), V0=V, poles=p).V
        prev = nxt
        out.append(V)
    return out


def end_rings(cfg, t, x, i, levels, n_angles=16):
    """Surface points on |w| = eps 2^-k in end chart i, one array per level."""
    lam = cfg.grid
    _, _, p = x.values(lam)
    radii = [cfg.epsilon * 2.0 ** (-k) for k in levels]
    order = np.argsort(radii)[::-1]
    rings = [[None] * n_angles for _ in levels]
    for m in range(n_angles):
        ang = 2 * np.pi * m / n_angles
        Vs = _end_radial_V(cfg, t, x, i, ang, [radii[j] for j in order])
        for j, V in zip(order, Vs):
            zz = p[i] + radii[j] * np.exp(1j * ang)
            rings[j][m] = frame_to_point(cfg, _frame(cfg, t, V, zz))[0]
    return [np.array(rg) for rg in rings]


def end_asymptotics(cfg: NoidConfig, t, x: ParamVector, i, levels=(1, 2, 3, 4), fit_levels=(5, 6, 7)):
    """RMS distance of the end rings to a closed-form Delaunay surface.

    The unduloid has the end's (r, s); its axis and phase are fitted to the
    deeper rings ``fit_levels`` starting from the flux axis through the limit
    axis point. Returns (distances per level, fit summary).
    """
    from scipy.optimize import least_squares

    diag = end_diagnostics(cfg, t, x, i)
    h, rho, period = delaunay_profile(diag.r, diag.s)
    fit_pts = np.vstack(end_rings(cfg, t, x, i, fit_levels))
    d0 = diag.axis_direction
    e1 = np.cross(d0, [1.0, 0, 0] if abs(d0[0]) < 0.9 else [0, 1.0, 0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d0, e1)
    # the end points outward along the axis, towards increasing h
    c0 = fit_pts.mean(axis=0)

    def unpack(q):
        point = c0 + q[0] * e1 + q[1] * e2
        direction = d0 + q[2] * e1 + q[3] * e2
        return point, direction / np.linalg.norm(direction), q[4]

    def resid(q):
        point, direction, phase = unpack(q)
        hx, rx = _to_meridian(fit_pts, point, direction, phase)
        return _meridian_distance(hx, rx, h, rho, period)

    best = None
    for ph in np.linspace(0, period, 9)[:-1]:
        sol = least_squares(resid, [0, 0, 0, 0, ph], x_scale=[1e-2, 1e-2, 1e-2, 1e-2, 1e-1])
        if best is None or sol.cost < best.cost:
            best = sol
    point, direction, phase = unpack(best.x)
    dists = []
    for P in end_rings(cfg, t, x, i, levels):
        hx, rx = _to_meridian(P, point, direction, phase)
        dists.append(float(np.sqrt(np.mean(_meridian_distance(hx, rx, h, rho, period) ** 2))))
    return dists, {"fit_rms": float(np.sqrt(2 * best.cost / len(fit_pts))), "axis_point": point,
                   "axis_direction": direction, "phase": phase, "period": period}
