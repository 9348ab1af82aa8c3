"""Shared configurations and cached solves for the test suite."""

import functools
import pathlib
import time

import numpy as np

from nnoid.cli import parse_config
from nnoid.potential import NoidConfig
from nnoid.solver import continue_in_t
from nnoid.transport import Path, plan_path

ROOT = pathlib.Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
LADDER = (5e-4, 1e-3, 2e-3, 4e-3)


def load_run_config(name):
    return parse_config((CONFIGS / f"{name}.json").read_text())


@functools.lru_cache(maxsize=None)
def noid_config(name):
    rc = load_run_config(name)
    return NoidConfig.create(rc.directions, rc.weights, N=rc.N, rho=rc.rho, K=rc.grid,
                             epsilon=rc.epsilon, balance_tol=1e-9)


def small_trinoid(N=8, K=48):
    """A coarse 3-noid for quick structural checks."""
    u = [[1, 0, 0], [-0.5, np.sqrt(3) / 2, 0], [-0.5, -np.sqrt(3) / 2, 0]]
    return NoidConfig.create(u, [1.0, 1.0, 1.0], N=N, K=K)


@functools.lru_cache(maxsize=None)
def ladder_family(name):
    """Solutions at every t in LADDER, continued from t = 0; also the wall time to 1e-3."""
    cfg = noid_config(name)
    start = time.perf_counter()
    out = {}
    t_prev, x_prev = 0.0, None
    elapsed = None
    for t in LADDER:
        fam = continue_in_t(cfg, t, steps=2, x0=x_prev, t_start=t_prev)
        t_prev, x_prev = fam[-1]
        out[t] = x_prev
        if t == 1e-3:
            elapsed = time.perf_counter() - start
    return out, elapsed


def perturbed_params(x, cfg, rng, scale=0.02):
    """Random decaying perturbation of every coefficient; poles move by O(scale * eps)."""
    sh = x.a.shape
    decay = 0.5 ** np.arange(sh[1])

    def noise():
        return scale * (rng.normal(size=sh) + 1j * rng.normal(size=sh)) * decay

    return x.copy_with(a=x.a + noise(), b=x.b + noise(), p=x.p + cfg.epsilon * noise())


def potential_field(cfg, t, x):
    """xi(z) on the circle grid for z of shape (S,) or (S, K)."""
    lam = cfg.grid
    a, b, p = x.values(lam)

    def field(z):
        z = np.asarray(z)
        if z.ndim == 1:
            z = z[:, None]
        d = z[None] - p[:, None, :]
        om = np.sum(a[:, None, :] / d ** 2 + b[:, None, :] / d, axis=0)
        out = np.zeros(om.shape + (2, 2), complex)
        out[..., 0, 1] = 1 / lam
        out[..., 1, 0] = t * (lam - 1) ** 2 * om
        return out
    return field


def _winding(points, pole):
    ang = np.unwrap(np.angle(points - pole))
    return (ang[-1] - ang[0]) / (2 * np.pi)


def _sample(path, m=400):
    return np.concatenate([np.atleast_1d(seg.point(np.linspace(0, 1, m))) for seg in path.segments])


def homotopic_pair(rng, cfg):
    """Two paths with common endpoints whose concatenation winds around no pole."""
    radius = 1.5 * cfg.epsilon
    while True:
        z0, z1, w = (2.5 * np.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random()) for _ in range(3))
        if min(np.min(np.abs(z - cfg.pi)) for z in (z0, z1, w)) < 3 * cfg.epsilon:
            continue
        A = plan_path(z0, z1, cfg.pi, radius)
        B = Path(plan_path(z0, w, cfg.pi, radius).segments + plan_path(w, z1, cfg.pi, radius).segments)
        loop = np.concatenate([_sample(A), _sample(B)[::-1]])
        loop = np.append(loop, loop[0])
        if all(abs(_winding(loop, p)) < 0.5 for p in cfg.pi):
            return A, B
