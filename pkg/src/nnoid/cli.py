"""Command-line entry point: validate -> seed -> continue -> mesh -> report.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure, 4 mesh failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .loops import IwasawaError, iwasawa, sphere_iwasawa, sphere_frame, sym
from .potential import ConfigError, NecksizeError, NoidConfig, PoleProximityError, delaunay_eigenvalue_sq, delaunay_residue_grid
from .solver import SolverError, StepUnderflowError, UnknownLayout, continue_in_t, residual_vector
from .surface import MeshError, build_mesh, end_diagnostics, hopf_differential, loop_closure
from .transport import LogDomainError, PathTooCloseError, circle_path, integrate_grid
from .wiener import DEFAULT_N, DEFAULT_RHO, circle_grid

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MESH = 0, 2, 3, 4
BALANCE_TOL = 1e-9

log = logging.getLogger("nnoid")


class ValidationError(ValueError):
    pass


# -- configuration --------------------------------------------------------------

@dataclass
class RunConfig:
    directions: np.ndarray
    weights: np.ndarray
    t: list
    N: int = DEFAULT_N
    rho: float = DEFAULT_RHO
    grid: int = 128
    epsilon: float | None = None
    tol: float = 1e-10
    steps: int = 4
    mesh: str | None = None
    report: str | None = None
    resolution: int = 24
    end_truncation: float | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config: expected a JSON object")
        ends = doc.get("ends")
        if not isinstance(ends, list) or not ends:
            raise ValidationError("ends: expected a non-empty list")
        dirs, ws = [], []
        for k, e in enumerate(ends):
            try:
                d = np.array(e["direction"], float)
            except (KeyError, TypeError, ValueError):
                raise ValidationError(f"ends[{k}].direction: expected three numbers") from None
            if d.shape != (3,) or not np.all(np.isfinite(d)):
                raise ValidationError(f"ends[{k}].direction: expected three finite numbers")
            norm = np.linalg.norm(d)
            if norm == 0:
                raise ValidationError(f"ends[{k}].direction: zero vector")
            w = e.get("weight")
            if not isinstance(w, (int, float)) or isinstance(w, bool) or not np.isfinite(w):
                raise ValidationError(f"ends[{k}].weight: expected a real number")
            if w == 0:
                raise ValidationError(f"ends[{k}].weight: must be non-zero")
            dirs.append(d / norm)
            ws.append(float(w))
        t = doc.get("t", 1e-3)
        ts = t if isinstance(t, list) else [t]
        for k, tv in enumerate(ts):
            if not isinstance(tv, (int, float)) or isinstance(tv, bool) or not np.isfinite(tv):
                raise ValidationError(f"t[{k}]: expected a real number" if isinstance(t, list) else "t: expected a real number")
        num = doc.get("numerics", {}) or {}
        out = doc.get("outputs", {}) or {}
        for sec, val in (("numerics", num), ("outputs", out)):
            if not isinstance(val, dict):
                raise ValidationError(f"{sec}: expected an object")
        known_num = {"N", "rho", "grid", "epsilon", "tol", "steps"}
        known_out = {"mesh", "report", "resolution", "end_truncation"}
        for key in num:
            if key not in known_num:
                raise ValidationError(f"numerics.{key}: unknown field")
        for key in out:
            if key not in known_out:
                raise ValidationError(f"outputs.{key}: unknown field")
        cfg = cls(np.array(dirs), np.array(ws), [float(v) for v in ts])
        for key, typ in (("N", int), ("grid", int), ("steps", int)):
            if key in num:
                if not isinstance(num[key], int) or num[key] <= 0:
                    raise ValidationError(f"numerics.{key}: expected a positive integer")
                setattr(cfg, key, num[key])
        for key in ("rho", "tol"):
            if key in num:
                if not isinstance(num[key], (int, float)) or num[key] <= 0:
                    raise ValidationError(f"numerics.{key}: expected a positive number")
                setattr(cfg, key, float(num[key]))
        if num.get("epsilon") is not None:
            cfg.epsilon = float(num["epsilon"])
        if cfg.rho <= 1:
            raise ValidationError("numerics.rho: must be > 1")
        cfg.mesh = out.get("mesh")
        cfg.report = out.get("report")
        if "resolution" in out:
            if not isinstance(out["resolution"], int) or out["resolution"] < 4:
                raise ValidationError("outputs.resolution: expected an integer >= 4")
            cfg.resolution = out["resolution"]
        if out.get("end_truncation") is not None:
            cfg.end_truncation = float(out["end_truncation"])
        return cfg

    def to_dict(self):
        return {
            "ends": [{"direction": [float(c) for c in d], "weight": float(w)}
                     for d, w in zip(self.directions, self.weights)],
            "t": self.t if len(self.t) > 1 else self.t[0],
            "numerics": {"N": self.N, "rho": self.rho, "grid": self.grid, "epsilon": self.epsilon,
                         "tol": self.tol, "steps": self.steps},
            "outputs": {"mesh": self.mesh, "report": self.report, "resolution": self.resolution,
                        "end_truncation": self.end_truncation},
        }

    def serialize(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def parse_config(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config: invalid JSON ({exc})") from None
    return RunConfig.parse(doc)


def project_balance(tau, u):
    """Smallest change of the weights making sum tau_i u_i = 0."""
    tau = np.asarray(tau, float)
    U = np.asarray(u, float)
    if np.linalg.matrix_rank(U, tol=1e-10) < 2:
        raise ValidationError("directions are collinear; balancing cannot be restored by reweighting")
    A = U.T  # 3 x n
    delta = -np.linalg.pinv(A) @ (A @ tau)
    new = tau + delta
    if np.linalg.norm(A @ new) > 1e-12 * max(1.0, np.linalg.norm(tau)):
        raise ValidationError("balancing could not be restored")
    if np.any(np.abs(new) < 1e-12):
        raise ValidationError("balanced projection produces a zero weight")
    return new


# -- fixtures -----------------------------------------------------------------

def fixture_sphere(count=100, N=16, seed=0):
    """Iwasawa of [[1, z/lambda], [0, 1]] against the closed form at random z, |z| <= 3."""
    rng = np.random.default_rng(seed)
    r = 3 * np.sqrt(rng.random(count))
    zs = r * np.exp(2j * np.pi * rng.random(count))
    t0 = time.perf_counter()
    err_f = err_b = err_sym = 0.0
    for z in zs:
        pair = iwasawa(sphere_frame(z, N))
        F, B = sphere_iwasawa(z, N)
        err_f = max(err_f, pair.F.max_diff(F))
        err_b = max(err_b, pair.B.max_diff(B))
        d = 1 + abs(z) ** 2
        ref = np.array([2 * z.real / d, 2 * z.imag / d, -2 * abs(z) ** 2 / d])
        err_sym = max(err_sym, float(np.max(np.abs(sym(pair.F) - ref))))
    return {"count": count, "N": N, "max_error_F": err_f, "max_error_B": err_b,
            "max_error_sym": err_sym, "seconds": time.perf_counter() - t0}


def delaunay_monodromy(r, s, K=128):
    """Grid values of the monodromy of A(lambda) dz/z once around z = 0, starting at z = 1."""
    lam = circle_grid(K)
    A = delaunay_residue_grid(r, s, lam)

    def field(z):
        z = np.asarray(z)
        return A[None] / z.reshape(z.shape[0], -1)[..., None, None]

    start = np.broadcast_to(np.eye(2, dtype=complex), (K, 2, 2))
    return lam, integrate_grid(field, circle_path(0j, 1.0), start, poles=np.array([0j]))


def fixture_delaunay(r=3 / 8, s=1 / 8, K=128):
    lam, M = delaunay_monodromy(r, s, K)
    Lam = np.sqrt(delaunay_eigenvalue_sq(r, s, lam))
    ref = np.stack([np.exp(2j * np.pi * Lam), np.exp(-2j * np.pi * Lam)], axis=-1)
    ev = np.linalg.eigvals(M)
    e1 = np.abs(ev - ref) / np.abs(ref)
    e2 = np.abs(ev - ref[:, ::-1]) / np.abs(ref)
    err = np.minimum(e1.max(axis=1), e2.max(axis=1))
    return {"r": r, "s": s, "grid": K, "max_relative_eigenvalue_error": float(err.max())}


# -- pipeline -------------------------------------------------------------------

def _angle_deg(a, b):
    return float(np.degrees(np.arccos(np.clip(np.dot(a, b), -1, 1))))


def build_report(rc: RunConfig, cfg: NoidConfig, family, logs, timings=None, mesh_info=None):
    t, x = family[-1]
    res = float(np.max(np.abs(residual_vector(cfg, t, x))))
    ends = []
    if t != 0:
        for i in range(cfg.n):
            d = end_diagnostics(cfg, t, x, i)
            ends.append({
                "index": i,
                "weight": d.weight,
                "weight_over_8pi_t": d.weight / (8 * np.pi * t),
                "axis_point": [float(c) for c in d.limit_axis_point],
                "axis_direction": [float(c) for c in d.axis_direction],
                "limit_axis_direction": [float(c) for c in d.limit_axis_direction],
                "angle_to_u_deg": _angle_deg(d.axis_direction, cfg.u_input[i]),
                "r": d.r,
                "s": d.s,
            })
    hop = hopf_differential(cfg, t, x)
    angles = [_angle_deg(cfg.u_input[i], cfg.u_input[j]) for i in range(cfg.n) for j in range(i + 1, cfg.n)]
    doc = {
        "config": rc.to_dict(),
        "weights_used": [float(w) for w in cfg.tau],
        "t": t,
        "family_t": [float(tt) for tt, _ in family],
        "residual_norm": res,
        "residual_history": logs,
        "loop_closure": [loop_closure(cfg, t, x, i) for i in range(cfg.n)],
        "a_n_minus_tau_n": float(abs(x.a[-1, 0] - cfg.tau[-1])),
        "ends": ends,
        "umbilics": hop.as_dict(),
        "embeddedness_angle_condition": bool(min(angles) > 60.0),
        "epsilon": cfg.epsilon,
    }
    if mesh_info is not None:
        doc["mesh"] = mesh_info
    if timings is not None:
        doc["timings"] = timings
    return doc


def _dumps(doc):
    return json.dumps(doc, indent=2, sort_keys=True, default=float)


def make_parser():
    p = argparse.ArgumentParser(prog="nnoid", description="Construct CMC-1 n-noids by the DPW method.")
    p.add_argument("config", nargs="?", help="JSON run configuration")
    p.add_argument("--t", type=float, help="override the deformation parameter")
    p.add_argument("--steps", type=int, help="initial number of continuation steps")
    p.add_argument("--resolution", type=int, help="mesh resolution (latitude rings)")
    p.add_argument("--project-balance", action="store_true", help="adjust weights to satisfy balancing")
    p.add_argument("--report-only", action="store_true", help="skip mesh generation")
    p.add_argument("--fixture", choices=["sphere", "delaunay"], help="run a golden fixture and exit")
    p.add_argument("--mesh", help="OBJ output path (overrides config)")
    p.add_argument("--report", help="JSON report path (overrides config); default stdout")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.fixture:
        doc = fixture_sphere() if args.fixture == "sphere" else fixture_delaunay()
        print(_dumps(doc))
        return EXIT_OK
    if not args.config:
        print("error: a config path is required unless --fixture is given", file=sys.stderr)
        return EXIT_CONFIG
    clock = {}
    t_all = time.perf_counter()
    try:
        with open(args.config) as fh:
            rc = parse_config(fh.read())
        if args.t is not None:
            rc.t = [args.t]
        if args.steps is not None:
            if args.steps <= 0:
                raise ValidationError("--steps: expected a positive integer")
            rc.steps = args.steps
        if args.resolution is not None:
            if args.resolution < 4:
                raise ValidationError("--resolution: expected an integer >= 4")
            rc.resolution = args.resolution
        if args.mesh:
            rc.mesh = args.mesh
        if args.report:
            rc.report = args.report
        tau = rc.weights
        defect = tau @ rc.directions
        if np.linalg.norm(defect) > BALANCE_TOL:
            if not args.project_balance:
                raise ValidationError(f"balancing defect sum(tau_i u_i) = {defect.tolist()} "
                                      f"(norm {np.linalg.norm(defect):.3e}); use --project-balance to correct")
            tau = project_balance(tau, rc.directions)
        cfg = NoidConfig.create(rc.directions, tau, N=rc.N, rho=rc.rho, K=rc.grid,
                                epsilon=rc.epsilon, balance_tol=BALANCE_TOL)
        UnknownLayout(cfg.n, cfg.N).audit()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    logs = []
    t0 = time.perf_counter()
    try:
        family = None
        schedule = sorted(rc.t, key=abs)
        for target in schedule:
            if family is None:
                family = continue_in_t(cfg, target, rc.steps, tol=rc.tol, log_out=logs)
            else:
                t_prev, x_prev = family[-1]
                family += continue_in_t(cfg, target, rc.steps, x0=x_prev, t_start=t_prev,
                                        tol=rc.tol, log_out=logs)[1:]
    except StepUnderflowError as exc:
        print(f"error: continuation failed; maximal t reached {exc.t_reached:g}", file=sys.stderr)
        return EXIT_SOLVER
    except (SolverError, LogDomainError, PathTooCloseError, PoleProximityError, NecksizeError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    clock["solve"] = time.perf_counter() - t0

    mesh_info = None
    if not args.report_only:
        t0 = time.perf_counter()
        t, x = family[-1]
        try:
            mesh = build_mesh(cfg, t, x, rc.resolution, rc.end_truncation)
        except (MeshError, IwasawaError, PathTooCloseError, ValueError) as exc:
            print(f"error: mesh failure: {exc}", file=sys.stderr)
            return EXIT_MESH
        mesh_info = {"vertices": int(len(mesh.positions)), "faces": int(len(mesh.faces)),
                     "resolution": rc.resolution}
        if rc.mesh:
            with open(rc.mesh, "w") as fh:
                fh.write(mesh.to_obj())
            mesh_info["path"] = rc.mesh
        clock["mesh"] = time.perf_counter() - t0
    try:
        doc = build_report(rc, cfg, family, logs, None, mesh_info)
    except (NecksizeError, LogDomainError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    clock["total"] = time.perf_counter() - t_all
    if args.timings:
        doc["timings"] = clock
    text = _dumps(doc)
    if rc.report:
        with open(rc.report, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
