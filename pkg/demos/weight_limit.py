"""Track end weights and axes of a tetranoid as t shrinks.

As t -> 0 the weight of end i approaches 8 pi t tau_i and its axis approaches u_i.
"""

import numpy as np

from nnoid.potential import NoidConfig
from nnoid.solver import continue_in_t
from nnoid.surface import end_diagnostics

u = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / np.sqrt(3)
cfg = NoidConfig.create(u, [1.0, 1.0, 1.0, 1.0], N=16, K=96)

t_prev, x = 0.0, None
print("      t   max|w/(8 pi t tau)-1|   max angle (deg)")
for t in (5e-4, 1e-3, 2e-3, 4e-3):
    t_prev, x = continue_in_t(cfg, t, steps=2, x0=x, t_start=t_prev)[-1]
    diags = [end_diagnostics(cfg, t, x, i) for i in range(cfg.n)]
    werr = max(abs(d.weight / (8 * np.pi * t * cfg.tau[i]) - 1) for i, d in enumerate(diags))
    ang = max(np.degrees(np.arccos(np.clip(d.axis_direction @ cfg.u_input[i], -1, 1)))
              for i, d in enumerate(diags))
    print(f"{t:8.1e}   {werr:20.2e}   {ang:15.3f}")
