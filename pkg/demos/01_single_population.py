"""Expected power of a single-population trial computed four independent ways.

With one population the expected power has a closed form: averaging the
rejection probability over a normal prior is itself a normal tail. The grid,
fine-grid and two-layer Monte Carlo routes should all land on it.
"""
import time

from trialdesign import (SCENARIOS, McConfig, SizingParams, build_prior, design_for,
                         information_units, power_convolution, power_fine_grid, power_grid_sum,
                         power_monte_carlo)

scenario = SCENARIOS["a"]
print(f"information units for delta=0.25: {information_units(SizingParams(0.025, 0.1, 0.25)):.3f}")
design = design_for((1.0,), scenario)
prior = build_prior(design, scenario)

routes = [
    ("closed form", lambda: power_convolution(design, prior, [0.025])),
    ("grid m=50", lambda: power_grid_sum(design, prior, [0.025])),
    ("fine grid m=500", lambda: power_fine_grid(design, prior, [0.025])),
    ("monte carlo", lambda: power_monte_carlo(design, prior, [0.025], McConfig(seed=1))),
]
for name, fn in routes:
    t0 = time.perf_counter()
    est = fn()
    print(f"{name:>16}: power={est.value:.6f}  ({time.perf_counter() - t0:.3f}s)")
