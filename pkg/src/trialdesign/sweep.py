"""Choosing subpopulation sizes: sweep ``r``, smooth optimal power over it, pick the best.

Also hosts the estimator comparison (relative alpha differences and the
precision statistic against the fine-grid reference).
"""
from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SweepError, TrialDesignError, ValidationError
from .model import ADJACENT_RATIO_GUARD, AlphaVector, Scenario, build_prior, design_for
from .optimize import (AlphaOptimum, BoxBounds, derive_seed, maximize_bounded, optimize_alpha,
                       optimize_alpha_gridsum)
from .power import GridConfig, McConfig, power_fine_grid, with_seed
from .tps import TpsSurface, fit_tps

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class RGrid:
    """All strictly decreasing ``(r_2, ..., r_n)`` on a lattice of multiples of ``step``."""

    step: float = 0.05
    n: int = 3
    pairs: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.step < 1:
            raise ValidationError("step must lie in (0, 1)")
        if self.n < 2:
            raise ValidationError("an r-grid needs at least two populations")
        k = int(round(1.0 / self.step))
        if abs(k * self.step - 1.0) > 1e-9:
            raise ValidationError("step must divide 1")
        values = [round(i * self.step, 12) for i in range(k - 1, 0, -1)]
        pairs = tuple(itertools.combinations(values, self.n - 1))
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass(frozen=True)
class SweepRow:
    r: tuple
    alpha: np.ndarray | None
    power: float
    method: str
    seconds: float
    error: str = ""


@dataclass(frozen=True)
class SweepResult:
    rows: list
    surface: TpsSurface | None
    r_opt: tuple
    alpha_at_r_opt: AlphaVector
    power_at_r_opt: float
    surface_value_at_r_opt: float
    boundary: bool
    dropped: int = 0

    @property
    def ok_rows(self):
        return [row for row in self.rows if not row.error]


def power_utility(power: float, r) -> float:
    return power


def _solve_one(args):
    r, scenario, alpha0, mc, n3, grid_m, seed = args
    t0 = time.perf_counter()
    try:
        design = design_for((1.0,) + tuple(r), scenario, alpha0=alpha0)
        res = optimize_alpha(design, build_prior(design, scenario), n3, grid_m, mc, seed)
        return SweepRow(tuple(r), np.array(res.alpha.alpha), res.power.value, "monte-carlo",
                        time.perf_counter() - t0)
    except TrialDesignError as exc:
        return SweepRow(tuple(r), None, float("nan"), "monte-carlo", time.perf_counter() - t0,
                        f"{type(exc).__name__}: {exc}")


def _valid_r(r) -> bool:
    full = np.concatenate([[1.0], r])
    return bool(np.all(full[1:] > 0) and np.all(full[1:] / full[:-1] <= 1.0 - ADJACENT_RATIO_GUARD))


def _pull_back_r(start, end, steps=60):
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if _valid_r(start + mid * (end - start)):
            lo = mid
        else:
            hi = mid
    return start + lo * (end - start)


def sweep(scenario: Scenario, rgrid: RGrid, mc: McConfig = McConfig(), n3: int = 2000,
          grid_m: int = 50, seed: int = 0, *, alpha0: float = 0.025, utility=power_utility,
          workers: int = 1, drop_boundary: bool = True) -> SweepResult:
    """Optimal power over a lattice of subpopulation sizes and the best design on its surface.

    Each lattice point gets its own seeds derived from ``(seed, index)``. The
    utility surface is maximized from the best lattice point inside the
    lattice's bounding box, and optimal levels are re-solved at the winner.
    When the winner sits on the lower edge of the lattice for the smallest
    subpopulations, the design with those subpopulations dropped is also
    solved and kept if it does at least as well.
    """
    jobs = [(r, scenario, alpha0, with_seed(mc, derive_seed(mc.seed, i)), n3, grid_m,
             derive_seed(seed, i)) for i, r in enumerate(rgrid.pairs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_solve_one, jobs))
    else:
        rows = [_solve_one(job) for job in jobs]
    failed = [row for row in rows if row.error]
    for row in failed:
        log.warning("r=%s failed: %s", row.r, row.error)
    if len(failed) > MAX_FAILURE_FRACTION * len(rows):
        raise SweepError(f"{len(failed)} of {len(rows)} sweep points failed")
    good = [row for row in rows if not row.error]
    sites = np.array([row.r for row in good], dtype=float)
    util = np.array([utility(row.power, row.r) for row in good])

    surface = fit_tps(sites, util, "auto")
    bounds = BoxBounds(sites.min(axis=0), sites.max(axis=0))
    start = sites[int(np.argmax(surface(sites)))]
    opt = maximize_bounded(lambda x: (float(surface(x[None, :])[0]), surface.gradient(x[None, :])[0]),
                           bounds, start)
    r_opt = opt.x_opt
    if not _valid_r(r_opt):
        r_opt = _pull_back_r(start, r_opt)
    boundary = bool(np.any(np.isclose(r_opt, bounds.lower)) or np.any(np.isclose(r_opt, bounds.upper)))
    s_val = float(surface(r_opt[None, :])[0])

    final_mc = with_seed(mc, derive_seed(mc.seed, len(rows)))
    final_seed = derive_seed(seed, len(rows))
    design = design_for((1.0,) + tuple(r_opt), scenario, alpha0=alpha0)
    best = optimize_alpha(design, build_prior(design, scenario), n3, grid_m, final_mc, final_seed)
    best_r, dropped = tuple(design.r), 0
    best_u = utility(best.power.value, best_r[1:])

    if drop_boundary:
        # trailing subpopulations pinned at the smallest lattice value may be dropped
        first = len(r_opt)
        while first > 0 and np.isclose(r_opt[first - 1], bounds.lower[first - 1]):
            first -= 1
        for k in range(len(r_opt) - 1, first - 1, -1):
            reduced = design_for((1.0,) + tuple(r_opt[:k]), scenario, alpha0=alpha0)
            # fewer free levels: refine the candidate grid so n3 points still exist
            grid_red = max(grid_m, int(np.ceil(2.0 * n3 ** (1.0 / max(k, 1)))))
            try:
                alt = optimize_alpha(reduced, build_prior(reduced, scenario), n3, grid_red,
                                     final_mc, final_seed)
            except TrialDesignError as exc:
                log.warning("reduced design %s failed: %s", tuple(reduced.r), exc)
                continue
            alt_u = utility(alt.power.value, tuple(reduced.r[1:]))
            if alt_u >= best_u:
                best, best_r, dropped, best_u = alt, tuple(reduced.r), len(r_opt) - k, alt_u

    return SweepResult(rows=rows, surface=surface, r_opt=best_r, alpha_at_r_opt=best.alpha,
                       power_at_r_opt=best.power.value, surface_value_at_r_opt=s_val,
                       boundary=boundary, dropped=dropped)


# --------------------------------------------------------------------------
# method comparison

@dataclass(frozen=True)
class ComparisonStats:
    r: tuple
    alpha_s: np.ndarray
    alpha_n: np.ndarray
    R: np.ndarray
    Q: float
    P_s: float
    P_n: float
    P_f_s: float
    P_f_n: float
    seconds_s: float = 0.0
    seconds_n: float = 0.0


def relative_difference(alpha_s, alpha_n) -> np.ndarray:
    """``(a_s - a_n) / ((a_s + a_n) / 2)``, defined as 0 where both are 0."""
    a_s = np.asarray(alpha_s, dtype=float)
    a_n = np.asarray(alpha_n, dtype=float)
    mean = (a_s + a_n) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(mean > 0, (a_s - a_n) / mean, 0.0)
    return out


def comparison_stats(r, alpha_s, alpha_n, P_s, P_n, P_f_s, P_f_n, seconds_s=0.0,
                     seconds_n=0.0) -> ComparisonStats:
    Q = abs(P_s - P_f_s) - abs(P_n - P_f_n)
    return ComparisonStats(tuple(r), np.asarray(alpha_s, dtype=float),
                           np.asarray(alpha_n, dtype=float), relative_difference(alpha_s, alpha_n),
                           float(Q), float(P_s), float(P_n), float(P_f_s), float(P_f_n),
                           seconds_s, seconds_n)


def compare_methods(problems, mc: McConfig = McConfig(), grid: GridConfig = GridConfig(),
                    n3: int = 2000, grid_m: int = 50, seed: int = 0) -> list[ComparisonStats]:
    """Run both optimizers on each ``(design, prior)`` and score them against the fine grid.

    The reference power is evaluated at each method's own optimum.
    """
    out = []
    for i, (design, prior) in enumerate(problems):
        novel: AlphaOptimum = optimize_alpha(design, prior, n3, grid_m,
                                             with_seed(mc, derive_seed(mc.seed, i)),
                                             derive_seed(seed, i))
        standard: AlphaOptimum = optimize_alpha_gridsum(design, prior, grid)
        pf_s = power_fine_grid(design, prior, standard.alpha).value
        pf_n = power_fine_grid(design, prior, novel.alpha).value
        out.append(comparison_stats(design.r[1:], standard.alpha.alpha, novel.alpha.alpha,
                                    standard.power.value, novel.power.value, pf_s, pf_n,
                                    standard.seconds, novel.seconds))
    return out
