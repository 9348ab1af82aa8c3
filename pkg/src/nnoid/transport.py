"""Transport of the loop-valued Cauchy problem dPhi = Phi xi along paths.

Every quantity is carried per node of the circle grid, so arrays have a
leading axis of length K. The n-noid frame is written Phi = U Phi_sphere with
U = I + s V and s = t (lambda - 1)^2 / lambda; V stays O(1) as t -> 0, which
keeps the rescaled monodromy at full relative precision and makes t = 0 an
ordinary evaluation.

Integration is fixed-step Gauss-Legendre collocation on meshes graded by the
distance to the poles, so results are smooth functions of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loops import LoopMatrix, adjugate, det2
from .potential import NoidConfig, ParamVector, PoleProximityError
from .wiener import coeffs_from_samples

STAGES = 5
KAPPA = 0.05
I2 = np.eye(2, dtype=complex)


class PathTooCloseError(RuntimeError):
    pass


class LogDomainError(RuntimeError):
    """Monodromy too far from the identity for the principal logarithm."""


def _gauss_tableau(s):
    x, w = np.polynomial.legendre.leggauss(s)
    c = (x + 1) / 2
    b = w / 2
    A = np.empty((s, s))
    for l in range(s):
        others = np.delete(c, l)
        poly = np.poly1d(np.poly(others)) / np.prod(c[l] - others)
        ipoly = np.polyint(poly)
        A[:, l] = ipoly(c) - ipoly(0.0)
    return A, b, c


GL_A, GL_B, GL_C = _gauss_tableau(STAGES)


# -- paths --------------------------------------------------------------------

class Line:
    """Straight segment; endpoints may be per-node arrays."""

    def __init__(self, z0, z1):
        self.z0 = np.asarray(z0, complex)
        self.z1 = np.asarray(z1, complex)

    def point(self, s):
        s = np.asarray(s)[..., None] if np.ndim(self.z0) else np.asarray(s)
        return self.z0 + s * (self.z1 - self.z0)

    def deriv(self, s):
        d = self.z1 - self.z0
        return np.broadcast_to(d, np.shape(self.point(s)))

    def end(self):
        return self.z1

    def mesh(self, poles, kappa):
        length = float(np.max(np.abs(self.z1 - self.z0)))
        if length == 0:
            return np.array([0.0, 1.0])
        pts = [0.0]
        s = 0.0
        while s < 1.0:
            z = self.point(s)
            d = _min_dist(z, poles)
            s = min(1.0, s + max(kappa * d / length, 1e-6))
            pts.append(s)
        return np.array(pts)


class Arc:
    """Arc of the circle center + radius * exp(i theta), theta0 -> theta1."""

    def __init__(self, center, radius, theta0, theta1):
        self.center = np.asarray(center, complex)
        self.radius = radius
        self.theta0 = theta0
        self.theta1 = theta1

    def _theta(self, s):
        return self.theta0 + np.asarray(s) * (self.theta1 - self.theta0)

    def point(self, s):
        e = self.radius * np.exp(1j * self._theta(s))
        if np.ndim(self.center):
            e = np.asarray(e)[..., None]
        return self.center + e

    def deriv(self, s):
        e = 1j * (self.theta1 - self.theta0) * self.radius * np.exp(1j * self._theta(s))
        if np.ndim(self.center):
            e = np.asarray(e)[..., None] * np.ones_like(self.center)
        return e

    def end(self):
        return self.point(1.0)

    def mesh(self, poles, kappa):
        ss = np.linspace(0, 1, 257)
        d = min(_min_dist(self.point(s), poles) for s in ss)
        arc_len = abs(self.theta1 - self.theta0) * self.radius
        n = max(4, int(np.ceil(arc_len / (kappa * d))))
        return np.linspace(0, 1, n + 1)


class RayToInfinity:
    """z(s) = z0 / (1 - s); reaches infinity at s = 1 (never a Gauss node)."""

    def __init__(self, z0, steps=24):
        self.z0 = complex(z0)
        self.steps = steps

    def point(self, s):
        return self.z0 / (1 - np.asarray(s))

    def deriv(self, s):
        return self.z0 / (1 - np.asarray(s)) ** 2

    def end(self):
        return complex(np.inf)

    def mesh(self, poles, kappa):
        return np.linspace(0, 1, self.steps + 1)


def _min_dist(z, poles):
    """Smallest distance from z to the poles; 2-d poles (n, K) are per node."""
    if poles is None or len(poles) == 0:
        return np.inf
    z = np.atleast_1d(z)
    poles = np.asarray(poles)
    if poles.ndim == 2:
        if z.size == poles.shape[1]:
            return float(np.min(np.abs(z[None, :] - poles)))
        return float(np.min(np.abs(z.ravel()[:, None] - poles.ravel()[None, :])))
    return float(np.min(np.abs(z[:, None] - poles[None, :])))


@dataclass
class Path:
    segments: list
    closed: bool = False
    encircles: int | None = None

    def start(self):
        return self.segments[0].point(0.0)

    def end(self):
        return self.segments[-1].end()

    def min_distance(self, poles):
        d = np.inf
        for seg in self.segments:
            for s in np.linspace(0, 1, 201):
                d = min(d, _min_dist(seg.point(s), poles))
        return d


def circle_path(center, radius, theta0=0.0, turns=1):
    return Path([Arc(center, radius, theta0, theta0 + 2 * np.pi * turns)], closed=True)


def generator_path(cfg: NoidConfig, i, center=None):
    """Segment from 0 to the circle C(center, 2 eps), once around it counterclockwise.

    ``center`` defaults to pi_i; callers pass the current p_i(0). The return
    leg is the reverse of the outgoing segment and is handled by conjugation,
    so only the first two pieces are stored.
    """
    pi = cfg.pi[i] if center is None else complex(center)
    r = 2 * cfg.epsilon
    base = pi * (1 - r / abs(pi))
    th0 = float(np.angle(base - pi))
    seg = Path([Line(0j, base)])
    loop = Path([Arc(pi, r, th0, th0 + 2 * np.pi)], closed=True, encircles=i)
    return seg, loop


def plan_path(z_from, z_to, centers, radius):
    """Polyline from z_from to z_to, replacing chords through disks by arcs."""
    segs = []
    cur = complex(z_from)
    d = complex(z_to) - cur
    if d == 0:
        return Path([Line(cur, cur)])
    hits = []
    for c in centers:
        # intersection of the segment with the circle |z - c| = radius
        f = cur - c
        A = abs(d) ** 2
        B = 2 * (f * np.conj(d)).real
        C = abs(f) ** 2 - radius ** 2
        disc = B * B - 4 * A * C
        if disc <= 0:
            continue
        r1 = (-B - np.sqrt(disc)) / (2 * A)
        r2 = (-B + np.sqrt(disc)) / (2 * A)
        if r1 > 1 or r2 < 0:
            continue
        if r1 < 0 or r2 > 1:
            raise PathTooCloseError("path endpoint inside an excluded disk")
        hits.append((r1, r2, c))
    hits.sort(key=lambda h: h[0])
    pos = 0.0
    for r1, r2, c in hits:
        a = cur + r1 * d
        b = cur + r2 * d
        if r1 > pos:
            segs.append(Line(cur + pos * d, a))
        th_a = np.angle(a - c)
        th_b = np.angle(b - c)
        dth = (th_b - th_a) % (2 * np.pi)
        if dth > np.pi:
            dth -= 2 * np.pi
        segs.append(Arc(c, radius, th_a, th_a + dth))
        pos = r2
    if pos < 1:
        segs.append(Line(cur + pos * d, complex(z_to)))
    return Path(segs)


# -- the stepper --------------------------------------------------------------

def _affine_step(Y0, h, C, B):
    """One Gauss-Legendre step of dY/ds = C(s) + Y B(s).

    Y0 (K,2,2); C, B (S,K,2,2) at the stage points (C may be None).
    Returns (Y1, stage values (S,K,2,2)).
    """
    S = STAGES
    K = Y0.shape[0]
    Cm = np.einsum("jl,lkab->klajb", h * GL_A, B).reshape(K, 2 * S, 2 * S)
    lhs = np.eye(2 * S) - Cm
    rhs = np.repeat(Y0[:, None, :, :], S, axis=1)  # (K, j, r, c)
    if C is not None:
        rhs = rhs + np.einsum("jl,lkrc->kjrc", h * GL_A, C)
    rhs = rhs.transpose(0, 1, 3, 2).reshape(K, 2 * S, 2)  # rows (j, c), columns r
    sol = np.linalg.solve(np.swapaxes(lhs, 1, 2), rhs)
    Ys = sol.reshape(K, S, 2, 2).transpose(1, 0, 3, 2)  # (j, k, r, c)
    incr = np.einsum("jkab,jkbc->jkac", Ys, B)
    if C is not None:
        incr = incr + C
    Y1 = Y0 + h * np.einsum("j,jkac->kac", GL_B, incr)
    return Y1, Ys


def integrate_grid(xi_field, path: Path, Phi0, poles=None, kappa=KAPPA, min_clearance=0.0):
    """Solve dPhi = Phi xi(z) dz along ``path``; returns grid values (K,2,2).

    ``xi_field(z)`` maps an array z of shape (S,) or (S, K) to (S, K, 2, 2).
    """
    Phi = np.array(Phi0, dtype=complex)
    if poles is not None and path.min_distance(poles) <= min_clearance:
        raise PathTooCloseError("path passes too close to a pole")
    for seg in path.segments:
        mesh = seg.mesh(poles, kappa)
        for s0, s1 in zip(mesh[:-1], mesh[1:]):
            h = s1 - s0
            ss = s0 + GL_C * h
            z = seg.point(ss)
            dz = seg.deriv(ss)
            X = np.asarray(xi_field(z), complex)
            dz = np.asarray(dz)
            if dz.ndim == 1:
                dz = dz[:, None]
            Bst = X * dz[..., None, None]
            Phi, _ = _affine_step(Phi, h, None, Bst)
    return Phi


def integrate(xi_field, path: Path, Phi0: LoopMatrix, poles=None, kappa=KAPPA, K=None) -> LoopMatrix:
    """Endpoint value of the solution as a LoopMatrix."""
    K = K or max(4 * Phi0.N + 8, 64)
    val = integrate_grid(xi_field, path, Phi0.on_grid(K), poles, kappa)
    return LoopMatrix.from_grid(val, Phi0.N, Phi0.rho)


# -- n-noid transport ---------------------------------------------------------

def s_factor(t, lam):
    return t * (lam - 1) ** 2 / lam


def _frame_part(z, lam):
    """[[z, -z^2/lambda], [lambda, -z]] with broadcasting over (S, K)."""
    out = np.empty(np.broadcast(z, lam).shape + (2, 2), complex)
    out[..., 0, 0] = z
    out[..., 0, 1] = -z * z / lam
    out[..., 1, 0] = lam
    out[..., 1, 1] = -z
    return out


@dataclass
class Sweep:
    V: np.ndarray  # (K,2,2), U = I + s V at the end of the path
    W: np.ndarray | None  # (Q,K,2,2) integrals of U dA_q U^{-1}
    s: np.ndarray  # (K,)

    @property
    def U(self):
        return I2 + self.s[:, None, None] * self.V


def check_params(cfg: NoidConfig, x: ParamVector):
    """Poles must stay well inside the circles C(p_i(0), 2 eps) and near pi_i."""
    _, _, p = x.values(cfg.grid)
    spread = np.max(np.abs(p - x.p[:, :1]))
    if spread >= cfg.epsilon:
        raise PoleProximityError(f"poles vary by {spread:.3e} in lambda (epsilon {cfg.epsilon:.3e})")
    shift = np.max(np.abs(x.p[:, 0] - cfg.pi))
    if shift >= 2 * cfg.epsilon:
        raise PoleProximityError(f"a pole moved {shift:.3e} from its end (epsilon {cfg.epsilon:.3e})")


def sweep(cfg: NoidConfig, t, x: ParamVector, path: Path, derivs=False, V0=None, kappa=KAPPA,
          poles=None):
    """Transport V along a path in the outer chart.

    With ``derivs`` the Appendix-type integrals of U (dA/dq) U^{-1} are
    accumulated for q in (a_j, b_j, p_j) over all ends j (pointwise in lambda),
    followed by q = t where dA/dt is A itself.
    """
    lam = cfg.grid
    K = lam.size
    a, b, p = x.values(lam)
    s = s_factor(t, lam)
    V = np.zeros((K, 2, 2), complex) if V0 is None else np.array(V0, complex)
    n = cfg.n
    W = np.zeros((3 * n + 1, K, 2, 2), complex) if derivs else None
    poles = p if poles is None else poles
    for seg in path.segments:
        mesh = seg.mesh(poles, kappa)
        for s0, s1 in zip(mesh[:-1], mesh[1:]):
            h = s1 - s0
            ss = s0 + GL_C * h
            z = np.asarray(seg.point(ss))
            dz = np.asarray(seg.deriv(ss))
            if z.ndim == 1:
                z = z[:, None]
                dz = dz[:, None]
            d = z[None, :, :] - p[:, None, :]  # (n, S, K)
            inv = 1 / d
            inv2 = inv * inv
            om = np.sum(a[:, None, :] * inv2 + b[:, None, :] * inv, axis=0)
            Mz = _frame_part(z, lam[None, :]) * dz[..., None, None]
            C = om[..., None, None] * Mz
            Bm = s[None, :, None, None] * C
            V_new, Vs = _affine_step(V, h, C, Bm)
            if derivs:
                Us = I2 + s[None, :, None, None] * Vs
                Ui = adjugate(Us)
                G = np.einsum("jkab,jkbc->jkac", Us, Mz)
                # conj-by-U of the frame part, weighted per stage
                core = np.einsum("jkab,jkbc->jkac", G, Ui) * GL_B[:, None, None, None]
                da = inv2
                db = inv
                dp = 2 * a[:, None, :] * inv2 * inv + b[:, None, :] * inv2
                coef = np.concatenate([da, db, dp, om[None]], axis=0)  # (3n+1, S, K)
                W += h * np.einsum("qjk,jkac->qkac", coef, core)
            V = V_new
    return Sweep(V, W, s)


@dataclass
class MonodromyData:
    i: int
    t: float
    V: np.ndarray  # (K,2,2), M = I + s V
    s: np.ndarray
    dV: np.ndarray | None  # (3n+1, K, 2, 2) pointwise derivatives of V

    @property
    def M(self):
        return I2 + self.s[:, None, None] * self.V


def monodromy_data(cfg: NoidConfig, t, x: ParamVector, i, derivs=False, kappa=KAPPA):
    check_params(cfg, x)
    seg, loop = generator_path(cfg, i, x.p[i, 0])
    sw_s = sweep(cfg, t, x, seg, derivs, kappa=kappa)
    sw_c = sweep(cfg, t, x, loop, derivs, kappa=kappa)
    s = sw_s.s
    Ts = sw_s.U
    Tsi = adjugate(Ts)
    Vm = Ts @ sw_c.V @ Tsi
    dV = None
    if derivs:
        M = I2 + s[:, None, None] * Vm
        Wc = Ts[None] @ sw_c.W @ Tsi[None]
        dV = sw_s.W @ M[None] - M[None] @ sw_s.W + Wc @ M[None]
        # the t-direction carries the factor ds/dt = s/t instead of s
    return MonodromyData(i, t, Vm, s, dV)


# -- rescaled logarithm -----------------------------------------------------------

def _h_and_dh(c):
    """h = mu/sinh(mu) and dh/dc, where cosh(mu) = 1 + c."""
    c = np.asarray(c, complex)
    mu = 2 * np.arcsinh(np.sqrt(c / 2))
    y = mu * mu
    small = np.abs(y) < 1e-2
    h = np.empty_like(c)
    dh = np.empty_like(c)
    ys = y[small]
    h[small] = 1 - ys / 6 + 7 * ys ** 2 / 360 - 31 * ys ** 3 / 15120 + 127 * ys ** 4 / 604800
    dhdy = -1 / 6 + 14 * ys / 360 - 93 * ys ** 2 / 15120 + 508 * ys ** 3 / 604800
    dcdy = 0.5 + ys / 12 + ys ** 2 / 240 + ys ** 3 / 10080
    dh[small] = dhdy / dcdy
    mb = mu[~small]
    sh = np.sinh(mb)
    h[~small] = mb / sh
    dh[~small] = (sh - mb * np.cosh(mb)) / sh ** 3
    return h, dh


def rescaled_log(V, s, dV=None):
    """M~ = log(I + s V) / s per node, with its derivative along dV.

    The principal logarithm of an SL(2) matrix near I is
    (mu / sinh mu) (M - cosh(mu) I).
    """
    V = np.asarray(V, complex)
    sM = np.abs(s)[:, None, None] * np.abs(V)
    if np.max(np.linalg.norm(sM, axis=(1, 2))) >= 1:
        raise LogDomainError("monodromy too far from identity; t too large")
    detV = det2(V)
    c = -(s * s) * detV / 2
    h, dh = _h_and_dh(c)
    half = (s * detV / 2)[:, None, None]
    Mt = h[:, None, None] * (V + half * I2)
    if dV is None:
        return Mt, None
    adjV = adjugate(V)
    tr = np.einsum("kab,qkba->qk", adjV, dV)  # d(det V)
    dc = -(s * s)[None] / 2 * tr
    dhalf = (s[None] / 2 * tr)[..., None, None]
    dMt = (dh[None] * dc)[..., None, None] * (V + half * I2)[None] + h[None, :, None, None] * (dV + dhalf * I2)
    return Mt, dMt


# -- public operations --------------------------------------------------------

def monodromy(cfg: NoidConfig, t, x: ParamVector, i) -> LoopMatrix:
    md = monodromy_data(cfg, t, x, i)
    return LoopMatrix.from_grid(md.M, cfg.N, cfg.rho)


def rescaled_monodromy_grid(cfg, t, x, i, derivs=False):
    md = monodromy_data(cfg, t, x, i, derivs)
    Mt, dMt = rescaled_log(md.V, md.s, md.dV[: 3 * cfg.n] if derivs else None)
    return Mt, dMt, md


def rescaled_monodromy(cfg: NoidConfig, t, x: ParamVector, i) -> LoopMatrix:
    Mt, _, _ = rescaled_monodromy_grid(cfg, t, x, i)
    return LoopMatrix.from_grid(Mt, cfg.N, cfg.rho)


def rescaled_monodromy_t0(x: ParamVector, i, lam):
    """Closed-form residue value of M~_i at t = 0, pointwise in lambda."""
    a, b, p = (v[i] for v in x.values(lam))
    out = np.empty((len(lam), 2, 2), complex)
    out[:, 0, 0] = a + b * p
    out[:, 0, 1] = -(2 * a * p + b * p * p) / lam
    out[:, 1, 0] = lam * b
    out[:, 1, 1] = -(a + b * p)
    return 2j * np.pi * out


def monodromy_derivative(cfg: NoidConfig, t, x: ParamVector, i, dx: ParamVector | None = None, dt=0.0) -> LoopMatrix:
    """Directional derivative of M_i from the integral of Phi (d xi) Phi^{-1}."""
    lam = cfg.grid
    md = monodromy_data(cfg, t, x, i, derivs=True)
    n = cfg.n
    dM = np.zeros_like(md.V)
    if dx is not None:
        da, db, dp = dx.values(lam)
        dirs = np.concatenate([da, db, dp], axis=0)  # (3n, K)
        dV = np.einsum("qk,qkab->kab", dirs, md.dV[: 3 * n])
        dM = dM + md.s[:, None, None] * dV
    if dt:
        dsdt = (lam - 1) ** 2 / lam
        dM = dM + dt * dsdt[:, None, None] * md.dV[3 * n]
    return LoopMatrix.from_grid(dM, cfg.N, cfg.rho)


def unitarity_residual(M: LoopMatrix, K=None):
    """(max grid defect of M M^H - I, |M(1) -/+ I|, |dM/dlambda(1)|)."""
    unit = M.unitarity_defect(K)
    M1 = M(1.0)
    at1 = min(np.max(np.abs(M1 - I2)), np.max(np.abs(M1 + I2)))
    d1 = float(np.max(np.abs(M.dlam(1.0))))
    return unit, float(at1), d1


def unitarity_defect_grid(M):
    E = M @ np.conj(np.swapaxes(M, -1, -2)) - I2
    return float(np.max(np.linalg.norm(E, axis=(-2, -1))))


def loop_coeffs(grid_vals, N):
    """Laurent coefficients (2,2,2N+1) from grid values (K,2,2)."""
    return coeffs_from_samples(np.moveaxis(grid_vals, 0, -1), N)
