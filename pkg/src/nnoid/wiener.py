"""Truncated Laurent series in the spectral parameter with weighted l1 norm.

A :class:`WienerFunction` stores the coefficients ``f_i`` for ``-N <= i <= N``
of a loop ``f(lambda) = sum f_i lambda**i`` together with the norm weight
``rho > 1``. All operations return new objects.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_N = 24
DEFAULT_RHO = 1.05

PARTS = ("minus", "zero", "plus", "geq0", "leq0")


class AliasingWarning(UserWarning):
    pass


def circle_grid(K: int) -> np.ndarray:
    """Nodes exp(2 pi i (k + 1/2) / K); lambda = 1 is never a node."""
    k = np.arange(K)
    return np.exp(2j * np.pi * (k + 0.5) / K)


def _index_array(N):
    return np.arange(-N, N + 1)


@dataclass(frozen=True, eq=False)
class WienerFunction:
    coeffs: np.ndarray
    rho: float = DEFAULT_RHO
    debt: float = field(default=0.0)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError("coefficient array must have odd length 2N+1")
        if not self.rho > 1:
            raise ValueError(f"rho must be > 1, got {self.rho}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # -- construction -------------------------------------------------
    @classmethod
    def zeros(cls, N=DEFAULT_N, rho=DEFAULT_RHO):
        return cls(np.zeros(2 * N + 1, complex), rho)

    @classmethod
    def constant(cls, c, N=DEFAULT_N, rho=DEFAULT_RHO):
        a = np.zeros(2 * N + 1, complex)
        a[N] = c
        return cls(a, rho)

    @classmethod
    def monomial(cls, k, c=1.0, N=DEFAULT_N, rho=DEFAULT_RHO):
        if abs(k) > N:
            raise ValueError(f"degree {k} exceeds truncation {N}")
        a = np.zeros(2 * N + 1, complex)
        a[N + k] = c
        return cls(a, rho)

    @classmethod
    def from_dict(cls, terms, N=DEFAULT_N, rho=DEFAULT_RHO):
        """Build from ``{power: coefficient}``."""
        a = np.zeros(2 * N + 1, complex)
        for k, c in terms.items():
            a[N + k] += c
        return cls(a, rho)

    @classmethod
    def from_nonneg(cls, c, N=DEFAULT_N, rho=DEFAULT_RHO):
        """Build from coefficients of powers 0, 1, ..., len(c)-1."""
        c = np.asarray(c, complex)
        if c.size > N + 1:
            raise ValueError("too many coefficients for truncation degree")
        a = np.zeros(2 * N + 1, complex)
        a[N:N + c.size] = c
        return cls(a, rho)

    # -- basic attributes ---------------------------------------------
    @property
    def N(self) -> int:
        return (self.coeffs.size - 1) // 2

    @property
    def indices(self):
        return _index_array(self.N)

    def __getitem__(self, i):
        if abs(i) > self.N:
            return 0j
        return self.coeffs[self.N + i]

    def nonneg(self):
        """Coefficients of powers 0..N."""
        return self.coeffs[self.N:].copy()

    def _check(self, other):
        if not isinstance(other, WienerFunction):
            return WienerFunction.constant(other, self.N, self.rho)
        if other.rho != self.rho:
            raise ValueError("cannot combine loops with different rho")
        if other.N != self.N:
            raise ValueError("cannot combine loops with different truncation")
        return other

    # -- algebra ------------------------------------------------------
    def norm(self) -> float:
        return float(np.sum(np.abs(self.coeffs) * self.rho ** np.abs(self.indices)))

    def star(self) -> "WienerFunction":
        return WienerFunction(np.conj(self.coeffs[::-1]), self.rho, self.debt)

    def project(self, part: str) -> "WienerFunction":
        idx = self.indices
        masks = {
            "minus": idx < 0,
            "zero": idx == 0,
            "plus": idx > 0,
            "geq0": idx >= 0,
            "leq0": idx <= 0,
        }
        if part not in masks:
            raise ValueError(f"unknown part {part!r}; expected one of {PARTS}")
        return WienerFunction(np.where(masks[part], self.coeffs, 0), self.rho)

    def __add__(self, other):
        other = self._check(other)
        return WienerFunction(self.coeffs + other.coeffs, self.rho, self.debt + other.debt)

    __radd__ = __add__

    def __neg__(self):
        return WienerFunction(-self.coeffs, self.rho, self.debt)

    def __sub__(self, other):
        return self + (-self._check(other))

    def __rsub__(self, other):
        return (-self) + other

    def full_product(self, other) -> np.ndarray:
        """Exact convolution, indices -2N..2N."""
        other = self._check(other)
        return np.convolve(self.coeffs, other.coeffs)

    def mul(self, other) -> "WienerFunction":
        """Product truncated back to degree N; discarded mass goes to ``debt``."""
        if np.isscalar(other):
            return WienerFunction(self.coeffs * other, self.rho, self.debt * abs(other))
        other = self._check(other)
        N = self.N
        full = self.full_product(other)
        kept = full[N:3 * N + 1]
        idx = np.arange(-2 * N, 2 * N + 1)
        lost = np.abs(full) * self.rho ** np.abs(idx)
        lost = float(lost[:N].sum() + lost[3 * N + 1:].sum())
        debt = self.debt * other.norm() + self.norm() * other.debt + lost
        return WienerFunction(kept, self.rho, debt)

    __mul__ = mul

    def __rmul__(self, other):
        return self.mul(other)

    def __call__(self, lam):
        return self.eval(lam)

    def eval(self, lam, check=True):
        lam = np.asarray(lam, complex)
        if check:
            r = np.abs(lam)
            if np.any(r <= 1 / self.rho) or np.any(r >= self.rho):
                raise ValueError("lambda outside the annulus 1/rho < |lambda| < rho")
        N = self.N
        # Horner on the two halves keeps large negative powers well behaved
        pos = np.zeros_like(lam)
        for c in self.coeffs[N:][::-1]:
            pos = pos * lam + c
        neg = np.zeros_like(lam)
        inv = 1 / lam
        for c in self.coeffs[:N]:
            neg = neg * inv + c
        neg = neg * inv
        return pos + neg

    def derivative(self) -> "WienerFunction":
        """Term-wise lambda derivative, truncated to degree N."""
        idx = self.indices
        shifted = np.zeros_like(self.coeffs)
        d = idx * self.coeffs
        shifted[:-1] = d[1:]
        return WienerFunction(shifted, self.rho)

    def samples(self, K: int) -> np.ndarray:
        return to_samples(self.coeffs, K)

    def is_close(self, other, tol=1e-12) -> bool:
        other = self._check(other)
        return float(np.max(np.abs(self.coeffs - other.coeffs))) <= tol

    def __repr__(self):
        nz = [(int(i), c) for i, c in zip(self.indices, self.coeffs) if abs(c) > 1e-14]
        body = " + ".join(f"({c:.6g})l^{i}" for i, c in nz[:6]) or "0"
        if len(nz) > 6:
            body += " + ..."
        return f"WienerFunction({body}, N={self.N}, rho={self.rho})"


# -- spectral bridge --------------------------------------------------

def coeffs_from_samples(samples, N: int, axis=-1) -> np.ndarray:
    """Laurent coefficients -N..N from samples on :func:`circle_grid`.

    Works on the given axis of a stacked array; the coefficient axis
    replaces the sample axis.
    """
    s = np.moveaxis(np.asarray(samples, complex), axis, -1)
    K = s.shape[-1]
    if K < 2 * N + 1:
        raise ValueError(f"grid size {K} too small for degree {N}")
    spec = np.fft.fft(s, axis=-1) / K
    idx = _index_array(N)
    out = spec[..., idx % K] * np.exp(-1j * np.pi * idx / K)
    return np.moveaxis(out, -1, axis)


def full_spectrum(samples, axis=-1):
    """All K coefficients, indices -(K//2) .. K - K//2 - 1."""
    s = np.moveaxis(np.asarray(samples, complex), axis, -1)
    K = s.shape[-1]
    idx = np.arange(-(K // 2), K - K // 2)
    spec = np.fft.fft(s, axis=-1) / K
    out = spec[..., idx % K] * np.exp(-1j * np.pi * idx / K)
    return idx, np.moveaxis(out, -1, axis)


def to_samples(coeffs, K: int, axis=-1) -> np.ndarray:
    """Inverse of :func:`coeffs_from_samples`."""
    c = np.moveaxis(np.asarray(coeffs, complex), axis, -1)
    N = (c.shape[-1] - 1) // 2
    if K < 2 * N + 1:
        raise ValueError(f"grid size {K} too small for degree {N}")
    idx = _index_array(N)
    spec = np.zeros(c.shape[:-1] + (K,), complex)
    spec[..., idx % K] = c * np.exp(1j * np.pi * idx / K)
    out = np.fft.ifft(spec, axis=-1) * K
    return np.moveaxis(out, -1, axis)


def tail_mass(coeffs, rho, frac=0.75) -> float:
    """Weighted mass of the coefficients with |i| > frac*N."""
    c = np.asarray(coeffs)
    N = (c.shape[-1] - 1) // 2
    idx = _index_array(N)
    w = np.where(np.abs(idx) > frac * N, rho ** np.abs(idx), 0.0)
    return float(np.sum(np.abs(c) * w))


def fft_bridge(samples, N=DEFAULT_N, rho=DEFAULT_RHO, tail_tol=1e-10, warn=True):
    """Convert circle-grid samples into a WienerFunction.

    Returns ``(f, tail)``; ``tail`` is the weighted mass in the upper quarter
    of the retained band, a cheap truncation-health indicator.
    """
    c = coeffs_from_samples(samples, N)
    f = WienerFunction(c, rho)
    tail = tail_mass(c, rho)
    if warn and tail > tail_tol * max(1.0, f.norm()):
        warnings.warn(f"spectral tail mass {tail:.3e} exceeds tolerance", AliasingWarning, stacklevel=2)
    return f, tail
