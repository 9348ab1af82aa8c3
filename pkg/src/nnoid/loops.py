"""Loop-valued 2x2 matrices, Iwasawa splitting, and the Sym/Nor evaluators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .wiener import (
    DEFAULT_N,
    DEFAULT_RHO,
    WienerFunction,
    circle_grid,
    coeffs_from_samples,
    to_samples,
)

SIGMA3 = np.diag([1.0, -1.0]).astype(complex)


class IwasawaError(RuntimeError):
    """Raised when the positive-loop factorization breaks down."""

    def __init__(self, msg, condition=np.inf):
        super().__init__(f"{msg} (condition estimate {condition:.3e})")
        self.condition = condition


class NotUnitaryError(ValueError):
    pass


# -- R^3 <-> su(2) --------------------------------------------------------

def vec_to_su2(x) -> np.ndarray:
    x1, x2, x3 = np.asarray(x, float)
    return (-0.5j) * np.array([[-x3, x1 + 1j * x2], [x1 - 1j * x2, x3]])


def su2_to_vec(X, tol=1e-10) -> np.ndarray:
    X = np.asarray(X, complex)
    scale = max(1.0, float(np.max(np.abs(X))))
    if np.max(np.abs(X + X.conj().T)) > tol * scale or abs(np.trace(X)) > tol * scale:
        raise ValueError("matrix is not anti-Hermitian and traceless")
    Y = 2j * X
    return np.array([Y[0, 1].real, Y[0, 1].imag, Y[1, 1].real])


def su2_vec_loose(X) -> np.ndarray:
    """Vector of the anti-Hermitian traceless part of X, no structure check."""
    X = np.asarray(X, complex)
    A = 0.5 * (X - X.conj().T)
    A = A - 0.5 * np.trace(A) * np.eye(2)
    Y = 2j * A
    return np.array([Y[0, 1].real, Y[0, 1].imag, Y[1, 1].real])


def inner(x, y) -> float:
    X, Y = vec_to_su2(x), vec_to_su2(y)
    return float((-2 * np.trace(X @ Y)).real)


# -- loop matrices -------------------------------------------------------

def adjugate(A):
    """Adjugate of (..., 2, 2) arrays; equals the inverse when det = 1."""
    A = np.asarray(A)
    out = np.empty_like(A)
    out[..., 0, 0] = A[..., 1, 1]
    out[..., 1, 1] = A[..., 0, 0]
    out[..., 0, 1] = -A[..., 0, 1]
    out[..., 1, 0] = -A[..., 1, 0]
    return out


def det2(A):
    A = np.asarray(A)
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def _conv_mat(a, b):
    """Matrix product of coefficient arrays (2,2,L1) x (2,2,L2) -> (2,2,L1+L2-1)."""
    L = a.shape[-1] + b.shape[-1] - 1
    out = np.zeros((2, 2, L), complex)
    for i in range(2):
        for j in range(2):
            for k in range(2):
                out[i, j] += np.convolve(a[i, k], b[k, j])
    return out


class LoopMatrix:
    """2x2 matrix of truncated Laurent series sharing ``rho`` and ``N``."""

    def __init__(self, coeffs, rho=DEFAULT_RHO, debt=0.0):
        c = np.array(coeffs, dtype=complex)
        if c.ndim != 3 or c.shape[:2] != (2, 2) or c.shape[2] % 2 != 1:
            raise ValueError("coefficients must have shape (2, 2, 2N+1)")
        c.setflags(write=False)
        self.coeffs = c
        self.rho = rho
        self.debt = debt

    @property
    def N(self):
        return (self.coeffs.shape[2] - 1) // 2

    @classmethod
    def identity(cls, N=DEFAULT_N, rho=DEFAULT_RHO):
        c = np.zeros((2, 2, 2 * N + 1), complex)
        c[0, 0, N] = c[1, 1, N] = 1
        return cls(c, rho)

    @classmethod
    def from_entries(cls, entries):
        """Build from a nested 2x2 list of WienerFunction."""
        e = [[entries[i][j] for j in range(2)] for i in range(2)]
        rho = e[0][0].rho
        c = np.array([[e[i][j].coeffs for j in range(2)] for i in range(2)])
        return cls(c, rho, sum(e[i][j].debt for i in range(2) for j in range(2)))

    @classmethod
    def from_terms(cls, terms, N=DEFAULT_N, rho=DEFAULT_RHO):
        """Build from ``{power: 2x2 array}``."""
        c = np.zeros((2, 2, 2 * N + 1), complex)
        for k, m in terms.items():
            c[:, :, N + k] += np.asarray(m, complex)
        return cls(c, rho)

    @classmethod
    def from_grid(cls, values, N=DEFAULT_N, rho=DEFAULT_RHO):
        """From values of shape (K, 2, 2) on :func:`circle_grid`."""
        v = np.asarray(values, complex)
        c = coeffs_from_samples(np.moveaxis(v, 0, -1), N)
        return cls(c, rho)

    def entry(self, i, j) -> WienerFunction:
        return WienerFunction(self.coeffs[i, j], self.rho)

    def on_grid(self, K) -> np.ndarray:
        """Values of shape (K, 2, 2) on :func:`circle_grid`."""
        return np.moveaxis(to_samples(self.coeffs, K), -1, 0)

    def __call__(self, lam):
        lam = complex(lam)
        idx = np.arange(-self.N, self.N + 1)
        return np.einsum("ijk,k->ij", self.coeffs, lam ** idx)

    def dlam(self, lam):
        """Exact lambda-derivative at ``lam`` from the Laurent coefficients."""
        lam = complex(lam)
        idx = np.arange(-self.N, self.N + 1)
        return np.einsum("ijk,k->ij", self.coeffs, idx * lam ** (idx - 1.0))

    def __matmul__(self, other):
        if other.rho != self.rho or other.N != self.N:
            raise ValueError("incompatible loops")
        N = self.N
        full = _conv_mat(self.coeffs, other.coeffs)
        idx = np.arange(-2 * N, 2 * N + 1)
        w = self.rho ** np.abs(idx)
        lost = np.abs(full) * w
        lost = float(lost[..., :N].sum() + lost[..., 3 * N + 1:].sum())
        return LoopMatrix(full[..., N:3 * N + 1], self.rho, self.debt + other.debt + lost)

    def __add__(self, other):
        return LoopMatrix(self.coeffs + other.coeffs, self.rho, self.debt + other.debt)

    def __sub__(self, other):
        return LoopMatrix(self.coeffs - other.coeffs, self.rho, self.debt + other.debt)

    def scale(self, c):
        return LoopMatrix(self.coeffs * c, self.rho, self.debt * abs(c))

    def star_h(self):
        """Entry-wise star followed by transposition; equals F^H on the circle."""
        c = np.conj(self.coeffs[:, :, ::-1]).transpose(1, 0, 2)
        return LoopMatrix(c, self.rho, self.debt)

    def adjugate(self):
        c = self.coeffs
        out = np.empty_like(c)
        out[0, 0], out[1, 1] = c[1, 1], c[0, 0]
        out[0, 1], out[1, 0] = -c[0, 1], -c[1, 0]
        return LoopMatrix(out, self.rho, self.debt)

    def det(self) -> WienerFunction:
        a, b, c, d = (self.entry(0, 0), self.entry(0, 1), self.entry(1, 0), self.entry(1, 1))
        return a * d - b * c

    def norm(self):
        idx = np.arange(-self.N, self.N + 1)
        return float(np.max(np.sum(np.abs(self.coeffs) * self.rho ** np.abs(idx), axis=-1)))

    def det_drift(self, K=None):
        K = K or 4 * self.N + 8
        return float(np.max(np.abs(det2(self.on_grid(K)) - 1)))

    def unitarity_defect(self, K=None):
        K = K or 4 * self.N + 8
        F = self.on_grid(K)
        E = F @ np.conj(np.swapaxes(F, -1, -2)) - np.eye(2)
        return float(np.max(np.linalg.norm(E, axis=(-2, -1))))

    def max_diff(self, other):
        return float(np.max(np.abs(self.coeffs - other.coeffs)))

    def __repr__(self):
        return f"LoopMatrix(N={self.N}, rho={self.rho}, value_at_1={self(1.0).round(6).tolist()})"


# -- Iwasawa ---------------------------------------------------------------

@dataclass
class IwasawaPair:
    F: LoopMatrix
    B: LoopMatrix
    residual: float
    condition: float

    def check(self, tol=1e-9):
        issues = []
        if self.F.unitarity_defect() > tol:
            issues.append("F not unitary")
        if np.max(np.abs(self.B.coeffs[..., : self.B.N])) > tol:
            issues.append("B has negative powers")
        B0 = self.B.coeffs[..., self.B.N]
        if abs(B0[1, 0]) > tol or abs(B0[0, 0].imag) > tol or abs(B0[1, 1].imag) > tol:
            issues.append("B(0) not upper triangular with real diagonal")
        if self.residual > tol:
            issues.append("F B does not reproduce the input")
        return issues


def _positive_part_coeffs(Phi: LoopMatrix):
    """Exact coefficients of P = Phi^{*H} Phi, indices -2N..2N."""
    return _conv_mat(Phi.star_h().coeffs, Phi.coeffs)


def positive_factor(P_coeffs, M):
    """Spectral factor of a positive loop from finite-section block Cholesky.

    ``P_coeffs`` has shape (2, 2, 2L+1) with P = B^{*H} B on the circle.
    Returns the coefficients B_0..B_{M-1} as an array (M, 2, 2) and a
    conditioning estimate.
    """
    L = (P_coeffs.shape[-1] - 1) // 2
    blocks = np.zeros((2 * M - 1, 2, 2), complex)
    # blocks[m + M - 1] = P_m
    lo = max(-L, -(M - 1))
    hi = min(L, M - 1)
    for m in range(lo, hi + 1):
        blocks[m + M - 1] = P_coeffs[:, :, L + m]
    a = np.arange(M)
    sel = a[None, :] - a[:, None] + M - 1  # T[a, b] = P_{b-a}
    T = blocks[sel].transpose(0, 2, 1, 3).reshape(2 * M, 2 * M)
    T = 0.5 * (T + T.conj().T)
    try:
        Lc = linalg.cholesky(T, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        w = np.linalg.eigvalsh(T)
        raise IwasawaError("positive loop is not positive definite", w[-1] / max(w[0], 1e-300)) from exc
    R = Lc.conj().T
    d = np.abs(np.diag(R))
    cond = float((d.max() / d.min()) ** 2)
    col = R[:, 2 * (M - 1):]
    B = np.empty((M, 2, 2), complex)
    for j in range(M):
        r = M - 1 - j
        B[j] = col[2 * r:2 * r + 2]
    return B, cond


def iwasawa(Phi: LoopMatrix, section=None, K=None) -> IwasawaPair:
    """Split Phi = F B with F unitary on the circle and B positive.

    The positive loop Phi^{*H} Phi is factored as B^{*H} B by block Cholesky
    of its Toeplitz section; then F = Phi adj(B) on a fine grid.
    """
    N = Phi.N
    M = section or max(4 * N, 16)
    P = _positive_part_coeffs(Phi)
    Bc, cond = positive_factor(P, M)
    if not np.all(np.isfinite(Bc)):
        raise IwasawaError("non-finite positive factor", cond)
    K = K or max(8 * N + 8, 2 * M + 8)
    lam = circle_grid(K)
    powers = lam[:, None] ** np.arange(M)[None, :]
    Bg = np.einsum("km,mij->kij", powers, Bc)
    Pg = Phi.on_grid(K)
    Fg = Pg @ adjugate(Bg) / det2(Bg)[:, None, None]
    F = LoopMatrix.from_grid(Fg, N, Phi.rho)
    Bcoef = np.zeros((2, 2, 2 * N + 1), complex)
    keep = min(M, N + 1)
    Bcoef[..., N:N + keep] = np.moveaxis(Bc[:keep], 0, -1)
    lost = float(np.sum(np.abs(Bc[keep:]) * Phi.rho ** np.arange(keep, M)[:, None, None]))
    B = LoopMatrix(Bcoef, Phi.rho, lost)
    resid = float(np.max(np.abs(Fg @ Bg - Pg)))
    if not np.isfinite(resid):
        raise IwasawaError("factorization produced non-finite values", cond)
    return IwasawaPair(F, B, resid, cond)


def uni(Phi: LoopMatrix) -> LoopMatrix:
    return iwasawa(Phi).F


def _require_unitary(F: LoopMatrix, tol):
    F1 = F(1.0)
    if np.max(np.abs(F1 @ F1.conj().T - np.eye(2))) > tol:
        raise NotUnitaryError("frame is not unitary at lambda = 1")
    return F1


def sym(F: LoopMatrix, tol=1e-8) -> np.ndarray:
    """i F'(1) F(1)^{-1} as a vector of R^3."""
    F1 = _require_unitary(F, tol)
    X = 1j * F.dlam(1.0) @ adjugate(F1)
    return su2_vec_loose(X)


def nor(F: LoopMatrix, tol=1e-8) -> np.ndarray:
    """Gauss map (-i/2) F(1) diag(1,-1) F(1)^{-1}."""
    F1 = _require_unitary(F, tol)
    X = -0.5j * F1 @ SIGMA3 @ adjugate(F1)
    v = su2_vec_loose(X)
    return v / np.linalg.norm(v)


# -- closed-form sphere fixtures ---------------------------------------------

def sphere_frame(z, N=DEFAULT_N, rho=DEFAULT_RHO) -> LoopMatrix:
    """[[1, z/lambda], [0, 1]]: the solution of the spherical Cauchy problem."""
    return LoopMatrix.from_terms({0: np.eye(2), -1: [[0, z], [0, 0]]}, N, rho)


def sphere_iwasawa(z, N=DEFAULT_N, rho=DEFAULT_RHO):
    """Closed-form unitary and positive factors of :func:`sphere_frame`."""
    s = 1 / np.sqrt(1 + abs(z) ** 2)
    zb = np.conj(z)
    F = LoopMatrix.from_terms({0: s * np.eye(2), -1: [[0, s * z], [0, 0]], 1: [[0, 0], [-s * zb, 0]]}, N, rho)
    B = LoopMatrix.from_terms({0: [[s, 0], [0, s * (1 + abs(z) ** 2)]], 1: [[0, 0], [s * zb, 0]]}, N, rho)
    return F, B


def inverse_stereographic(z) -> np.ndarray:
    z = complex(z)
    d = 1 + abs(z) ** 2
    return np.array([2 * z.real / d, 2 * z.imag / d, (1 - abs(z) ** 2) / d])


def stereographic(u) -> complex:
    """Projection from the south pole; u = (0, 0, -1) maps to infinity."""
    u = np.asarray(u, float)
    if u[2] <= -1 + 1e-15:
        return complex(np.inf)
    return complex(u[0], u[1]) / (1 + u[2])
