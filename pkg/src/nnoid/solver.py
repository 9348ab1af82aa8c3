"""Residual system for the n-noid parameters and its Newton continuation in t.

Unknowns are the free Laurent coefficients of (a_i, b_i, p_i); the residual
collects the unitarity conditions F_i, G_i of the rescaled monodromies for the
first n-1 ends and the regularity conditions H_1, H_2, H_3 at infinity. Both
are flattened to real vectors of equal length.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .potential import NoidConfig, ParamVector, central_params, regularity_H
from .transport import (
    LogDomainError,
    PathTooCloseError,
    rescaled_log,
    monodromy_data,
    rescaled_monodromy_t0,
)
from .wiener import coeffs_from_samples

log = logging.getLogger(__name__)

TOL = 1e-10
MAX_ITER = 25
ARMIJO = 1e-4


class SolverError(RuntimeError):
    pass


class StepUnderflowError(SolverError):
    def __init__(self, msg, t_reached, family):
        super().__init__(msg)
        self.t_reached = t_reached
        self.family = family


# -- layout -------------------------------------------------------------------

def _c2r(z):
    z = np.asarray(z, complex).ravel()
    return np.stack([z.real, z.imag], axis=-1).ravel()


def _r2c(v):
    v = np.asarray(v, float).reshape(-1, 2)
    return v[:, 0] + 1j * v[:, 1]


@dataclass(frozen=True)
class UnknownLayout:
    n: int
    N: int

    @property
    def block(self):
        return 6 * self.N + 3

    @property
    def size(self):
        return (self.n - 1) * self.block + 6 * (self.N + 1)

    @property
    def residual_size(self):
        # F+ (N complex), F0 (real), G+ (N), G0 (1), G- (N) complex; then H coefficients 0..N
        return (self.n - 1) * (2 * self.N + 1 + 2 * (2 * self.N + 1)) + 6 * (self.N + 1)

    def audit(self):
        if self.size != self.residual_size:
            raise AssertionError(f"system not square: {self.size} unknowns, {self.residual_size} equations")
        return self.size

    def pack(self, x: ParamVector) -> np.ndarray:
        n = self.n
        parts = []
        for i in range(n - 1):
            parts += [_c2r(x.a[i, 1:]), _c2r(x.b[i, 1:]), _c2r(x.p[i, 1:]),
                      [x.a[i, 0].imag], _c2r(x.b[i, :1])]
        parts += [_c2r(x.a[n - 1]), _c2r(x.b[n - 1]), _c2r(x.p[n - 1])]
        return np.concatenate([np.asarray(p, float) for p in parts])

    def unpack(self, v, cfg: NoidConfig) -> ParamVector:
        N, n = self.N, self.n
        a = np.zeros((n, N + 1), complex)
        b = np.zeros_like(a)
        p = np.zeros_like(a)
        pos = 0

        def take(m):
            nonlocal pos
            out = v[pos:pos + m]
            pos += m
            return out

        for i in range(n - 1):
            a[i, 1:] = _r2c(take(2 * N))
            b[i, 1:] = _r2c(take(2 * N))
            p[i, 1:] = _r2c(take(2 * N))
            a[i, 0] = cfg.tau[i] + 1j * take(1)[0]
            b[i, 0] = _r2c(take(2))[0]
            p[i, 0] = cfg.pi[i]
        a[n - 1] = _r2c(take(2 * N + 2))
        b[n - 1] = _r2c(take(2 * N + 2))
        p[n - 1] = _r2c(take(2 * N + 2))
        return ParamVector(a, b, p, cfg.rho)

    def directions(self):
        """For every real unknown: (end j, kind 0/1/2 for a/b/p, power m, is_imag)."""
        N, n = self.N, self.n
        out = []
        for i in range(n - 1):
            for kind in range(3):
                for m in range(1, N + 1):
                    out += [(i, kind, m, False), (i, kind, m, True)]
            out.append((i, 0, 0, True))
            out += [(i, 1, 0, False), (i, 1, 0, True)]
        for kind in range(3):
            for m in range(N + 1):
                out += [(n - 1, kind, m, False), (n - 1, kind, m, True)]
        return out


def normalize(x: ParamVector, cfg: NoidConfig) -> ParamVector:
    """Impose Re a_i^0 = tau_i and p_i^0 = pi_i for i <= n-1."""
    lay = UnknownLayout(cfg.n, cfg.N)
    return lay.unpack(lay.pack(x), cfg)


# -- residual -----------------------------------------------------------------

def _fg_coeffs(Mt, lam, N):
    """Coefficients -N..N of F = M11 + M11* and G = lambda (M12 + M21*) from grid values."""
    F = Mt[..., 0, 0] + np.conj(Mt[..., 0, 0])
    G = lam * (Mt[..., 0, 1] + np.conj(Mt[..., 1, 0]))
    Fc = coeffs_from_samples(F, N, axis=-1)
    Gc = coeffs_from_samples(G, N, axis=-1)
    return Fc, Gc


def _fg_flatten(Fc, Gc, N):
    """Real vector (F+, F0 real, G+, G0, (G-)*) for stacked coefficient arrays (..., 2N+1)."""
    Fp = Fc[..., N + 1:]
    F0 = Fc[..., N].real[..., None]
    Gp = Gc[..., N + 1:]
    G0 = Gc[..., N:N + 1]
    Gm = np.conj(Gc[..., :N][..., ::-1])  # (G-)* has powers 1..N
    cplx = np.concatenate([Fp, Gp, G0, Gm], axis=-1)
    re = np.stack([cplx.real, cplx.imag], axis=-1).reshape(cplx.shape[:-1] + (-1,))
    return np.concatenate([re[..., : 2 * N], F0, re[..., 2 * N:]], axis=-1)


def _h_flatten(H):
    return np.concatenate([_c2r(h.nonneg()) for h in H])


@dataclass
class ResidualVector:
    F: list
    G: list
    H: tuple
    flat: np.ndarray

    def norm(self):
        return float(np.max(np.abs(self.flat))) if self.flat.size else 0.0


def residual(cfg: NoidConfig, t, x: ParamVector) -> ResidualVector:
    lam = cfg.grid
    N = cfg.N
    Fs, Gs, pieces = [], [], []
    for i in range(cfg.n - 1):
        md = monodromy_data(cfg, t, x, i)
        Mt, _ = rescaled_log(md.V, md.s)
        Fc, Gc = _fg_coeffs(Mt, lam, N)
        Fs.append(Fc)
        Gs.append(Gc)
        pieces.append(_fg_flatten(Fc, Gc, N))
    H = regularity_H(x)
    pieces.append(_h_flatten(H))
    return ResidualVector(Fs, Gs, H, np.concatenate(pieces))


def residual_vector(cfg, t, x):
    return residual(cfg, t, x).flat


# -- Jacobian -----------------------------------------------------------------

def _mul0(f, g):
    return np.convolve(f, g)[: len(f)]


def _dMt_t0(x: ParamVector, lam):
    """Closed-form pointwise derivatives of M~_i(0) w.r.t. a_i, b_i, p_i values."""
    a, b, p = x.values(lam)
    n, K = a.shape
    out = np.zeros((n, 3, K, 2, 2), complex)
    c = 2j * np.pi
    out[:, 0, :, 0, 0] = c
    out[:, 0, :, 0, 1] = -c * 2 * p / lam
    out[:, 0, :, 1, 1] = -c
    out[:, 1, :, 0, 0] = c * p
    out[:, 1, :, 0, 1] = -c * p * p / lam
    out[:, 1, :, 1, 0] = c * lam
    out[:, 1, :, 1, 1] = -c * p
    out[:, 2, :, 0, 0] = c * b
    out[:, 2, :, 0, 1] = -c * (2 * a + 2 * b * p) / lam
    out[:, 2, :, 1, 1] = -c * b
    return out


def _h_jacobian(x: ParamVector, lay: UnknownLayout):
    N = lay.N
    a, b, p = x.a, x.b, x.p
    cols = []
    unit = np.zeros(N + 1, complex)
    for (j, kind, m, imag) in lay.directions():
        d = unit.copy()
        d[m] = 1j if imag else 1.0
        if kind == 0:
            dH = (np.zeros_like(d), d, 2 * _mul0(p[j], d))
        elif kind == 1:
            dH = (d, _mul0(p[j], d), _mul0(_mul0(p[j], p[j]), d))
        else:
            dH = (np.zeros_like(d), _mul0(b[j], d),
                  2 * _mul0(a[j], d) + 2 * _mul0(_mul0(b[j], p[j]), d))
        cols.append(np.concatenate([_c2r(h) for h in dH]))
    return np.array(cols).T


def jacobian(cfg: NoidConfig, t, x: ParamVector, with_residual=False, closed_form_t0=True):
    """Dense real Jacobian of :func:`residual_vector` in the unknown layout.

    At t = 0 the residue formula gives the monodromy block in closed form;
    ``closed_form_t0=False`` uses the transported derivative integrals instead.
    """
    lam = cfg.grid
    N, n = cfg.N, cfg.n
    lay = UnknownLayout(n, N)
    dirs = lay.directions()
    js = np.array([d[0] for d in dirs])
    kinds = np.array([d[1] for d in dirs])
    ms = np.array([d[2] for d in dirs])
    phase = np.where([d[3] for d in dirs], 1j, 1.0)
    # lambda^m (or i lambda^m) for every column: (ncol, K)
    basis = phase[:, None] * lam[None, :] ** ms[:, None]
    rows = []
    res = []
    use_closed = t == 0 and closed_form_t0
    closed = _dMt_t0(x, lam) if use_closed else None
    for i in range(n - 1):
        if use_closed:
            D = np.zeros((n, 3) + closed.shape[2:], complex)
            D[i] = closed[i]
            if with_residual:
                md = monodromy_data(cfg, t, x, i)
                Mt, _ = rescaled_log(md.V, md.s)
        else:
            md = monodromy_data(cfg, t, x, i, derivs=True)
            Mt, dMt = rescaled_log(md.V, md.s, md.dV[: 3 * n])
            # dV is ordered (a_0..a_{n-1}, b_..., p_...)
            D = dMt.reshape(3, n, *dMt.shape[1:]).swapaxes(0, 1)
        cols = D[js, kinds] * basis[:, :, None, None]  # (ncol, K, 2, 2)
        Fc, Gc = _fg_coeffs(cols, lam, N)
        rows.append(_fg_flatten(Fc, Gc, N).T)
        if with_residual:
            Fc0, Gc0 = _fg_coeffs(Mt, lam, N)
            res.append(_fg_flatten(Fc0, Gc0, N))
    rows.append(_h_jacobian(x, lay))
    J = np.vstack(rows)
    if with_residual:
        res.append(_h_flatten(regularity_H(x)))
        return J, np.concatenate(res)
    return J


# -- Newton and continuation ------------------------------------------------

@dataclass
class NewtonLog:
    t: float
    norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    converged: bool = False

    def as_dict(self):
        return {"t": self.t, "residual_norms": self.norms, "step_lengths": self.steps,
                "converged": self.converged}


def _safe_residual(cfg, t, x):
    try:
        return residual_vector(cfg, t, x)
    except (LogDomainError, PathTooCloseError, ValueError):
        return None


def solve_at(cfg: NoidConfig, t, x_guess: ParamVector, tol=TOL, max_iter=MAX_ITER, log_out=None):
    """Damped Newton iteration; returns (x, NewtonLog)."""
    lay = UnknownLayout(cfg.n, cfg.N)
    lay.audit()
    v = lay.pack(x_guess)
    x = lay.unpack(v, cfg)
    nlog = NewtonLog(float(t))
    for it in range(max_iter + 1):
        J, r = jacobian(cfg, t, x, with_residual=True)
        nr = float(np.max(np.abs(r)))
        nlog.norms.append(nr)
        log.debug("t=%g iter=%d residual=%.3e", t, it, nr)
        if nr <= tol:
            nlog.converged = True
            break
        if it == max_iter:
            break
        try:
            dv = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular Jacobian at t={t}") from exc
        step = 1.0
        f0 = float(r @ r)
        while step > 1e-4:
            x_try = lay.unpack(v + step * dv, cfg)
            r_try = _safe_residual(cfg, t, x_try)
            if r_try is not None and float(r_try @ r_try) <= (1 - 2 * ARMIJO * step) * f0:
                break
            step /= 2
        else:
            break
        v = v + step * dv
        x = x_try
        nlog.steps.append(step)
    if log_out is not None:
        log_out.append(nlog.as_dict())
    if not nlog.converged:
        raise SolverError(f"Newton failed at t={t} (residual {nlog.norms[-1]:.3e}); try a smaller t step")
    return x, nlog


def t_derivative(cfg, t, x, h=None):
    """Central difference of the residual in t (meshes do not depend on t)."""
    h = h or 1e-6 * max(abs(t), 1e-3)
    return (residual_vector(cfg, t + h, x) - residual_vector(cfg, t - h, x)) / (2 * h)


def continue_in_t(cfg: NoidConfig, t_target, steps=4, x0: ParamVector | None = None, tol=TOL,
                  min_step=None, log_out=None, t_start=0.0):
    """Predictor-corrector path from (t_start, x0) to t_target; returns [(t, x), ...].

    ``x0`` defaults to the central value, which is exact at t = 0.
    """
    lay = UnknownLayout(cfg.n, cfg.N)
    x = central_params(cfg) if x0 is None else x0
    x, _ = solve_at(cfg, t_start, x, tol, log_out=log_out)
    family = [(float(t_start), x)]
    if t_target == t_start:
        return family
    dt = (t_target - t_start) / max(1, steps)
    min_step = min_step or abs(t_target - t_start) * 1e-4
    t = float(t_start)
    direction = np.sign(t_target - t_start)
    while direction * (t_target - t) > abs(t_target - t_start) * 1e-12:
        dt = direction * min(abs(dt), abs(t_target - t))
        J = jacobian(cfg, t, x)
        tangent = np.linalg.solve(J, -t_derivative(cfg, t, x))
        guess = lay.unpack(lay.pack(x) + dt * tangent, cfg)
        try:
            x_new, _ = solve_at(cfg, t + dt, guess, tol, log_out=log_out)
        except (SolverError, LogDomainError, PathTooCloseError, ValueError) as exc:
            log.info("step %g failed at t=%g: %s", dt, t, exc)
            dt /= 2
            if abs(dt) < min_step:
                raise StepUnderflowError(f"step underflow; reached t={t}", t, family) from exc
            continue
        t = t + dt
        x = x_new
        family.append((t, x))
    return family


# -- t = 0 characterization -----------------------------------------------------

def _inv_stereo(p):
    p = np.asarray(p, complex)
    d = 1 + np.abs(p) ** 2
    return np.stack([2 * p.real / d, 2 * p.imag / d, (1 - np.abs(p) ** 2) / d], axis=-1)


def verify_t0_characterization(x: ParamVector, tol=1e-10):
    """Check the four t = 0 conditions: a real constant, p constant, b formula, balance."""
    a, b, p = x.a, x.b, x.p
    rep = {}
    rep["a_real_constant"] = float(max(np.max(np.abs(a[:, 1:])), np.max(np.abs(a[:, 0].imag))))
    rep["p_constant"] = float(np.max(np.abs(p[:, 1:])))
    bref = -2 * a[:, 0] * np.conj(p[:, 0]) / (1 + np.abs(p[:, 0]) ** 2)
    rep["b_formula"] = float(max(np.max(np.abs(b[:, 0] - bref)), np.max(np.abs(b[:, 1:]))))
    defect = np.sum(a[:, 0].real[:, None] * _inv_stereo(p[:, 0]), axis=0)
    rep["balance_defect"] = defect.tolist()
    rep["balance"] = float(np.linalg.norm(defect))
    rep["passed"] = {k: rep[k] <= tol for k in ("a_real_constant", "p_constant", "b_formula", "balance")}
    rep["ok"] = all(rep["passed"].values())
    return rep


def params_from_t0_data(tau, pi, N, rho) -> ParamVector:
    """Parameters built from data satisfying the four t = 0 conditions."""
    tau = np.asarray(tau, float)
    pi = np.asarray(pi, complex)
    n = len(tau)
    a = np.zeros((n, N + 1), complex)
    b = np.zeros_like(a)
    p = np.zeros_like(a)
    a[:, 0] = tau
    p[:, 0] = pi
    b[:, 0] = -2 * tau * np.conj(pi) / (1 + np.abs(pi) ** 2)
    return ParamVector(a, b, p, rho)


def t0_residual_closed_form(cfg, x):
    """Residual at t = 0 from the residue formula instead of transport."""
    lam = cfg.grid
    pieces = []
    for i in range(cfg.n - 1):
        Fc, Gc = _fg_coeffs(rescaled_monodromy_t0(x, i, lam), lam, cfg.N)
        pieces.append(_fg_flatten(Fc, Gc, cfg.N))
    pieces.append(_h_flatten(regularity_H(x)))
    return np.concatenate(pieces)
