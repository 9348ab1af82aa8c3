"""The n-noid DPW potential, its parameters, gauges and closed-form maps."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .loops import LoopMatrix, adjugate, stereographic
from .wiener import DEFAULT_N, DEFAULT_RHO, WienerFunction, circle_grid, coeffs_from_samples

DEFAULT_GRID = 128
MIN_TILT_DEG = 10.0


class ConfigError(ValueError):
    pass


class PoleProximityError(ValueError):
    pass


class NecksizeError(ValueError):
    pass


# -- configuration -----------------------------------------------------------

def _rotation_to_north(v):
    """Rotation matrix taking the unit vector v to e3."""
    v = np.asarray(v, float) / np.linalg.norm(v)
    e3 = np.array([0.0, 0.0, 1.0])
    c = float(v @ e3)
    if c > 1 - 1e-15:
        return np.eye(3)
    if c < -1 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    k = np.cross(v, e3)
    s = np.linalg.norm(k)
    k = k / s
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * Kx + (1 - c) * Kx @ Kx


def _segment_distance(a, b, p):
    d = b - a
    s = np.clip(((p - a) * np.conj(d)).real / abs(d) ** 2, 0, 1)
    return abs(a + s * d - p)


def _geometry(u):
    """(pi_i, admissible epsilon) for rotated directions u."""
    tilt = np.degrees(np.arccos(np.clip(np.abs(u[:, 2]), 0, 1)))
    if np.min(tilt) < MIN_TILT_DEG:
        return None, 0.0
    pis = np.array([stereographic(ui) for ui in u])
    n = len(pis)
    pair = min(abs(pis[i] - pis[j]) for i in range(n) for j in range(i + 1, n))
    clearance = np.inf
    for i in range(n):
        for j in range(n):
            if i != j:
                clearance = min(clearance, _segment_distance(0j, pis[i], pis[j]))
    eps = 0.9 * min(pair / 16, np.min(np.abs(pis)) / 8, clearance / 4)
    return pis, eps


def _fibonacci_sphere(m):
    k = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * k / m)
    theta = np.pi * (1 + 5 ** 0.5) * k
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def choose_rotation(u):
    """Rotation making every end non-vertical with a comfortable radius epsilon.

    The identity is kept whenever it is admissible and not much worse than the
    best candidate, so well-placed inputs are not moved.
    """
    u = np.asarray(u, float)

    def score(R):
        pis, eps = _geometry(u @ R.T)
        if pis is None:
            return 0.0
        return eps / max(1.0, float(np.max(np.abs(pis))))

    best_R, best = np.eye(3), score(np.eye(3))
    ident = best
    for v in _fibonacci_sphere(400):
        R = _rotation_to_north(v)
        sc = score(R)
        if sc > best * (1 + 1e-12):
            best_R, best = R, sc
    if ident > 0 and ident >= 0.5 * best:
        return np.eye(3)
    if best <= 0:
        raise ConfigError("no admissible rotation of the end directions")
    return best_R


@dataclass(frozen=True, eq=False)
class NoidConfig:
    """End data after the internal rotation; ``rotation @ u_input[i] == u[i]``."""

    u_input: np.ndarray
    tau: np.ndarray
    rotation: np.ndarray
    u: np.ndarray
    pi: np.ndarray
    epsilon: float
    t: float = 0.0
    N: int = DEFAULT_N
    rho: float = DEFAULT_RHO
    K: int = DEFAULT_GRID

    @property
    def n(self):
        return len(self.tau)

    @classmethod
    def create(cls, u, tau, t=0.0, N=DEFAULT_N, rho=DEFAULT_RHO, K=DEFAULT_GRID,
               epsilon=None, balance_tol=1e-12, rotation=None):
        u = np.array(u, float)
        tau = np.array(tau, float)
        if u.ndim != 2 or u.shape[1] != 3:
            raise ConfigError("directions must be an (n, 3) array")
        n = len(u)
        if n < 3:
            raise ConfigError("need at least three ends")
        if tau.shape != (n,):
            raise ConfigError("need one weight per end")
        if np.any(tau == 0):
            raise ConfigError("weights must be non-zero")
        norms = np.linalg.norm(u, axis=1)
        if np.any(np.abs(norms - 1) > 1e-9):
            raise ConfigError("directions must be unit vectors")
        u = u / norms[:, None]
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(u[i] - u[j]) < 1e-9:
                    raise ConfigError(f"directions {i} and {j} coincide")
        defect = tau @ u
        if np.linalg.norm(defect) > balance_tol:
            raise ConfigError(f"balancing defect {defect.tolist()} (norm {np.linalg.norm(defect):.3e})")
        if K < 3 * N + 1:
            raise ConfigError("grid size must be at least 3N+1")
        R = choose_rotation(u) if rotation is None else np.asarray(rotation, float)
        ur = u @ R.T
        pis, eps = _geometry(ur)
        if pis is None:
            raise ConfigError("rotated directions are too close to vertical")
        if epsilon is not None:
            eps = float(epsilon)
        return cls(u, tau, R, ur, pis, eps, float(t), int(N), float(rho), int(K))

    def with_t(self, t):
        return replace(self, t=float(t))

    @property
    def grid(self):
        return circle_grid(self.K)

    def to_output(self, v):
        """Map a vector from the internal (rotated) frame back to the input frame."""
        return np.asarray(v) @ self.rotation

    def to_internal(self, v):
        return np.asarray(v) @ self.rotation.T


# -- parameters -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ParamVector:
    """Non-negative Laurent coefficients (powers 0..N) of a_i, b_i, p_i.

    Each array has shape (n, N+1).
    """

    a: np.ndarray
    b: np.ndarray
    p: np.ndarray
    rho: float = DEFAULT_RHO

    def __post_init__(self):
        for name in ("a", "b", "p"):
            arr = np.array(getattr(self, name), complex)
            if arr.ndim != 2:
                raise ValueError(f"{name} must have shape (n, N+1)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def N(self):
        return self.a.shape[1] - 1

    def wiener(self, name, i) -> WienerFunction:
        return WienerFunction.from_nonneg(getattr(self, name)[i], self.N, self.rho)

    def values(self, lam):
        """(a, b, p) evaluated at the points ``lam``; each of shape (n, len(lam))."""
        lam = np.atleast_1d(np.asarray(lam, complex))
        V = lam[None, :] ** np.arange(self.N + 1)[:, None]
        return self.a @ V, self.b @ V, self.p @ V

    def at0(self):
        return self.a[:, 0], self.b[:, 0], self.p[:, 0]

    def copy_with(self, **kw):
        d = dict(a=self.a, b=self.b, p=self.p, rho=self.rho)
        d.update(kw)
        return ParamVector(**d)

    def __sub__(self, other):
        return ParamVector(self.a - other.a, self.b - other.b, self.p - other.p, self.rho)

    def norm(self):
        w = self.rho ** np.arange(self.N + 1)
        return float(sum(np.max(np.sum(np.abs(c) * w, axis=1)) for c in (self.a, self.b, self.p)))


def central_params(cfg: NoidConfig) -> ParamVector:
    n, N = cfg.n, cfg.N
    a = np.zeros((n, N + 1), complex)
    b = np.zeros((n, N + 1), complex)
    p = np.zeros((n, N + 1), complex)
    a[:, 0] = cfg.tau
    p[:, 0] = cfg.pi
    b[:, 0] = -2 * cfg.tau * np.conj(cfg.pi) / (1 + np.abs(cfg.pi) ** 2)
    return ParamVector(a, b, p, cfg.rho)


# -- the potential ------------------------------------------------------------

def omega_values(a, b, p, z):
    """sum a/(z-p)^2 + b/(z-p) for stacked parameter values of shape (n, ...)."""
    d = z - p
    return np.sum(a / d ** 2 + b / d, axis=0)


def _check_poles(x, z, eps, lam):
    _, _, p = x.values(lam)
    dist = np.min(np.abs(np.asarray(z) - p))
    if eps is not None and dist < eps / 2:
        raise PoleProximityError(f"z={z} is within {dist:.3e} of a pole")


def omega(x: ParamVector, z, K=DEFAULT_GRID, eps=None) -> WienerFunction:
    """omega_x(z, .) as a loop, by pointwise evaluation on the circle grid."""
    lam = circle_grid(K)
    _check_poles(x, z, eps, lam)
    a, b, p = x.values(lam)
    c = coeffs_from_samples(omega_values(a, b, p, z), x.N)
    return WienerFunction(c, x.rho)


@dataclass
class PotentialAtZ:
    z: complex
    t: float
    omega: WienerFunction
    matrix: LoopMatrix  # coefficient of dz


def _xi_matrix(t, om: WienerFunction):
    N, rho = om.N, om.rho
    lower = WienerFunction.from_dict({0: 1, 1: -2, 2: 1}, N, rho).mul(om).mul(t)
    upper = WienerFunction.monomial(-1, 1.0, N, rho)
    zero = WienerFunction.zeros(N, rho)
    return LoopMatrix.from_entries([[zero, upper], [lower, zero]])


def xi(t, x: ParamVector, z, K=DEFAULT_GRID, eps=None) -> PotentialAtZ:
    om = omega(x, z, K, eps)
    return PotentialAtZ(complex(z), float(t), om, _xi_matrix(t, om))


def xi_grid(t, x: ParamVector, z, lam):
    """Pointwise potential values of shape (len(lam), 2, 2)."""
    a, b, p = x.values(lam)
    om = omega_values(a, b, p, z)
    out = np.zeros((len(lam), 2, 2), complex)
    out[:, 0, 1] = 1 / lam
    out[:, 1, 0] = t * (lam - 1) ** 2 * om
    return out


def regularity_H(x: ParamVector):
    """(H1, H2, H3) computed in the truncated algebra."""
    H1 = WienerFunction.zeros(x.N, x.rho)
    H2 = WienerFunction.zeros(x.N, x.rho)
    H3 = WienerFunction.zeros(x.N, x.rho)
    for i in range(x.n):
        a, b, p = x.wiener("a", i), x.wiener("b", i), x.wiener("p", i)
        bp = b * p
        H1 = H1 + b
        H2 = H2 + a + bp
        H3 = H3 + (a * p).mul(2.0) + bp * p
    return H1, H2, H3


def regularity_H_grid(a, b, p):
    """Pointwise H values for stacked parameter values (n, K)."""
    return (np.sum(b, 0), np.sum(a + b * p, 0), np.sum(2 * a * p + b * p * p, 0))


# -- gauges -------------------------------------------------------------------

def _cauchy_derivative(G, z, r=1e-3, m=32):
    """dG/dz of a holomorphic matrix field from a small contour average."""
    th = 2 * np.pi * np.arange(m) / m
    acc = 0
    for e in np.exp(1j * th):
        acc = acc + np.asarray(G(z + r * e)) * np.conj(e)
    return acc / (m * r)


def apply_gauge(xi_field, G, z, dG=None):
    """Gauged potential G^{-1} xi G + G^{-1} dG/dz at z, on grid values.

    ``xi_field(z)`` and ``G(z)`` return arrays (K, 2, 2) (coefficients of dz);
    ``dG`` is the z-derivative of G if known in closed form.
    """
    Gz = np.asarray(G(z), complex)
    detG = Gz[..., 0, 0] * Gz[..., 1, 1] - Gz[..., 0, 1] * Gz[..., 1, 0]
    if np.max(np.abs(detG - 1)) > 1e-8:
        raise ValueError("gauge must take values in SL(2, C)")
    dGz = np.asarray(dG(z) if dG is not None else _cauchy_derivative(G, z), complex)
    Gi = adjugate(Gz)
    return Gi @ np.asarray(xi_field(z)) @ Gz + Gi @ dGz


def g_infinity(z, lam):
    lam = np.asarray(lam, complex)
    out = np.zeros(lam.shape + (2, 2), complex)
    out[..., 0, 0] = z
    out[..., 1, 0] = -lam
    out[..., 1, 1] = 1 / z
    return out


def g_infinity_dz(z, lam):
    lam = np.asarray(lam, complex)
    out = np.zeros(lam.shape + (2, 2), complex)
    out[..., 0, 0] = 1
    out[..., 1, 1] = -1 / z ** 2
    return out


def gauge_infinity(pot: PotentialAtZ) -> LoopMatrix:
    """Closed form of the potential gauged by G_inf = [[z, 0], [-lambda, 1/z]]."""
    z = pot.z
    if z == 0:
        raise ValueError("the gauge at infinity is singular at z = 0")
    N, rho = pot.omega.N, pot.omega.rho
    lower = WienerFunction.from_dict({0: 1, 1: -2, 2: 1}, N, rho).mul(pot.omega).mul(pot.t * z ** 2)
    upper = WienerFunction.monomial(-1, 1 / z ** 2, N, rho)
    zero = WienerFunction.zeros(N, rho)
    return LoopMatrix.from_entries([[zero, upper], [lower, zero]])


# -- Delaunay data ----------------------------------------------------------

def rs_split(tA):
    """Solve rs = tA, r + s = 1/2, r > s."""
    disc = 1 / 16 - tA
    if disc <= 0:
        raise NecksizeError(f"necksize too large: t*a = {tA} must be < 1/16")
    root = np.sqrt(disc)
    return 0.25 + root, 0.25 - root


def delaunay_gauge_residue(t, a, N=DEFAULT_N, rho=DEFAULT_RHO) -> LoopMatrix:
    """Standard Delaunay residue [[0, r/lambda + s], [r lambda + s, 0]]."""
    r, s = rs_split(t * a)
    return LoopMatrix.from_terms({-1: [[0, r], [0, 0]], 0: [[0, s], [s, 0]], 1: [[0, 0], [r, 0]]}, N, rho)


def delaunay_eigenvalue_sq(r, s, lam):
    lam = np.asarray(lam, complex)
    return r * s * (lam - 1) ** 2 / lam + 0.25


def delaunay_residue_grid(r, s, lam):
    lam = np.asarray(lam, complex)
    out = np.zeros(lam.shape + (2, 2), complex)
    out[..., 0, 1] = r / lam + s
    out[..., 1, 0] = r * lam + s
    return out


def delaunay_chart_gauge(w, lam, k):
    """[[sqrt(w)/k, 0], [-lambda/(2 k sqrt(w)), k/sqrt(w)]] with principal sqrt."""
    lam = np.asarray(lam, complex)
    k = np.broadcast_to(np.asarray(k, complex), lam.shape)
    sw = np.sqrt(complex(w))
    out = np.zeros(lam.shape + (2, 2), complex)
    out[..., 0, 0] = sw / k
    out[..., 1, 0] = -lam / (2 * k * sw)
    out[..., 1, 1] = k / sw
    return out


def end_potential_grid(t, x: ParamVector, i, w, lam):
    """Pull-back of the potential by z = p_i(lambda) + w, on grid values."""
    a, b, p = x.values(lam)
    z = p[i] + w
    om = omega_values(a, b, p, z)
    out = np.zeros((len(lam), 2, 2), complex)
    out[:, 0, 1] = 1 / lam
    out[:, 1, 0] = t * (lam - 1) ** 2 * om
    return out


def sphere_potential_grid(lam):
    lam = np.asarray(lam, complex)
    out = np.zeros(lam.shape + (2, 2), complex)
    out[..., 0, 1] = 1 / lam
    return out
