"""Choosing subpopulation sizes: a coarse sweep over nested fractions.

Every (r2, r3) pair on a step-0.2 lattice gets its own optimal alpha
allocation. A thin-plate spline is fitted to the optimal powers and maximized
to locate the best design. Pass a smaller step (e.g. 0.1) for a finer map.
"""
import sys
import time

import numpy as np

from trialdesign import SCENARIOS, McConfig, RGrid, sweep

step = float(sys.argv[1]) if len(sys.argv) > 1 else 0.2
t0 = time.perf_counter()
res = sweep(SCENARIOS["b"], RGrid(step), McConfig(2048, 4096, seed=11), n3=200, grid_m=40, seed=11)
for row in res.rows:
    print(f"r={tuple(round(v, 2) for v in row.r)}  alpha={np.round(row.alpha, 4)}  "
          f"power={row.power:.4f}")
print(f"\nbest design r={np.round(res.r_opt, 3)}  alpha={np.round(res.alpha_at_r_opt.alpha, 4)}  "
      f"power={res.power_at_r_opt:.4f}  boundary={res.boundary}  dropped={res.dropped}  "
      f"({time.perf_counter() - t0:.0f}s)")
