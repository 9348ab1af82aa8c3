"""Solve the symmetric trinoid at t = 1e-3 and write an OBJ mesh.

Usage: python3 demos/trinoid_mesh.py [out.obj]
"""

import sys

import numpy as np

from nnoid.potential import NoidConfig
from nnoid.solver import continue_in_t
from nnoid.surface import build_mesh, discrete_mean_curvature, end_diagnostics

u = [[1, 0, 0], [-0.5, np.sqrt(3) / 2, 0], [-0.5, -np.sqrt(3) / 2, 0]]
cfg = NoidConfig.create(u, [1.0, 1.0, 1.0], N=16, K=96)
t, x = continue_in_t(cfg, 1e-3, steps=2)[-1]

for i in range(cfg.n):
    d = end_diagnostics(cfg, t, x, i)
    print(f"end {i}: weight/(8 pi t) = {d.weight / (8 * np.pi * t):.5f}, axis = {np.round(d.axis_direction, 4)}")

mesh = build_mesh(cfg, t, x, resolution=16)
_, H = discrete_mean_curvature(mesh)
print(f"{len(mesh.positions)} vertices, mean curvature at interior vertices {np.mean(H):.4f}")

out = sys.argv[1] if len(sys.argv) > 1 else "trinoid.obj"
with open(out, "w") as fh:
    fh.write(mesh.to_obj())
print(f"wrote {out}")
