"""Bound-constrained maximization and the optimal-alpha pipelines.

:func:`optimize_alpha` is the smoothed Monte Carlo route: noisy power at
many constraint-satisfying candidates, a thin-plate spline through them,
then quasi-Newton search on the spline. :func:`optimize_alpha_gridsum` is
the direct baseline, with quasi-Newton on grid-sum power and
finite-difference gradients.

Both search the ``n - 1`` free levels; the last level is always re-solved
from the FWER constraint.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import optimize as _sopt

from .constraint import CandidateSet, fwer_batch, generate_candidates, solve_alpha_n
from .errors import InfeasibleOptimumError, NonFiniteObjectiveError, ValidationError
from .model import AlphaVector, EffectPrior, NestedDesign
from .power import (GridConfig, McConfig, PowerEstimate, power_grid_sum, power_monte_carlo,
                    with_seed)
from .tps import TpsSurface, fit_tps

FD_STEP = 1e-5
SURFACE_DRIFT_FLAG = 1e-3


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValidationError("bounds need lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)


@dataclass(frozen=True)
class OptResult:
    x_opt: np.ndarray
    value: float
    iterations: int
    converged: bool
    gradient_norm: float
    message: str = ""


def projected_gradient_norm(x, grad, bounds: BoxBounds) -> float:
    """Infinity norm of the ascent gradient with blocked directions at active bounds removed."""
    g = np.array(grad, dtype=float)
    g[(x <= bounds.lower) & (g < 0)] = 0.0
    g[(x >= bounds.upper) & (g > 0)] = 0.0
    return float(np.max(np.abs(g))) if g.size else 0.0


def maximize_bounded(objective, bounds: BoxBounds, x0, *, pgtol: float = 1e-8,
                     ftol: float = 1e-12, maxiter: int = 500, memory: int = 10) -> OptResult:
    """Maximize ``objective(x) -> (value, gradient)`` over a box with L-BFGS-B."""
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < bounds.lower) or np.any(x0 > bounds.upper):
        raise ValidationError("x0 must lie within the bounds")

    def neg(x):
        f, g = objective(x)
        g = np.asarray(g, dtype=float)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise NonFiniteObjectiveError(x)
        return -float(f), -g

    res = _sopt.minimize(neg, x0, jac=True, method="L-BFGS-B",
                         bounds=list(zip(bounds.lower, bounds.upper)),
                         options={"maxcor": memory, "gtol": pgtol, "ftol": ftol,
                                  "maxiter": maxiter})
    x = bounds.clip(res.x)
    f, g = objective(x)
    return OptResult(x_opt=x, value=float(f), iterations=int(res.nit),
                     converged=bool(res.success), gradient_norm=projected_gradient_norm(x, g, bounds),
                     message=str(res.message))


def derive_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class AlphaOptimum:
    """Optimal levels for one design and the power reported for them."""

    alpha: AlphaVector
    power: PowerEstimate
    method: str
    surface_value: float = float("nan")
    surface: TpsSurface | None = None
    candidates: CandidateSet | None = None
    candidate_power: np.ndarray | None = None
    opt: OptResult | None = None
    projected: bool = False
    flagged: bool = False
    seconds: float = 0.0

    def __iter__(self):
        # unpacks as (alpha, power)
        yield self.alpha
        yield self.power


def _feasible(design, free) -> bool:
    return fwer_batch(design, np.append(free, 0.0)[None, :])[0] <= design.alpha0 + 1e-12


def _pull_back(design, start, end, steps=60):
    """Last feasible point on the segment from a feasible ``start`` towards ``end``."""
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if _feasible(design, start + mid * (end - start)):
            lo = mid
        else:
            hi = mid
    return start + lo * (end - start)


def candidate_powers(design, prior, candidates: CandidateSet, mc: McConfig) -> np.ndarray:
    """Monte Carlo power at every candidate.

    All candidates share the draws of ``mc.seed`` (common random numbers), so
    differences between candidates carry far less noise than the values.
    """
    return np.array([power_monte_carlo(design, prior, a, mc).value for a in candidates.alphas])


def optimize_alpha(design: NestedDesign, prior: EffectPrior, n3: int = 2000, grid_m: int = 50,
                   mc: McConfig = McConfig(), seed: int = 0, *, lam="auto") -> AlphaOptimum:
    """Optimal levels by Monte Carlo power at candidates and search on a fitted spline.

    The reported power is a fresh Monte Carlo estimate at the optimum. If the
    spline's maximizer leaves the feasible region (the first ``n - 1`` levels
    alone overspend the budget) it is pulled back along the segment from the
    starting candidate and ``projected`` is set.
    """
    t0 = time.perf_counter()
    final_cfg = with_seed(mc, derive_seed(mc.seed, 2 ** 31))
    if design.n == 1:
        alpha = AlphaVector([design.alpha0])
        est = power_monte_carlo(design, prior, alpha, final_cfg)
        return AlphaOptimum(alpha, est, "monte-carlo", surface_value=est.value,
                            seconds=time.perf_counter() - t0)
    cands = generate_candidates(design, n3, grid_m, seed)
    values = candidate_powers(design, prior, cands, mc)
    free = cands.free
    surface = fit_tps(free, values, lam)
    bounds = BoxBounds(free.min(axis=0), free.max(axis=0))
    smoothed = surface(free)
    x0 = free[int(np.argmax(smoothed))]
    opt = maximize_bounded(lambda x: (float(surface(x[None, :])[0]), surface.gradient(x[None, :])[0]),
                           bounds, x0)
    x = opt.x_opt
    projected = False
    if not _feasible(design, x):
        x = _pull_back(design, x0, x)
        projected = True
    last = solve_alpha_n(design, x)
    if last is None:
        raise InfeasibleOptimumError(f"no feasible last level at {x.tolist()}")
    alpha = AlphaVector(np.append(x, last))
    s_val = float(surface(x[None, :])[0])
    flagged = projected and abs(s_val - opt.value) > SURFACE_DRIFT_FLAG
    est = power_monte_carlo(design, prior, alpha, final_cfg)
    return AlphaOptimum(alpha, est, "monte-carlo", surface_value=s_val, surface=surface,
                        candidates=cands, candidate_power=values, opt=opt, projected=projected,
                        flagged=flagged, seconds=time.perf_counter() - t0)


def _gridsum_objective(design, prior, grid, penalty=100.0):
    a0 = design.alpha0

    def value(free):
        last = solve_alpha_n(design, free)
        if last is not None:
            return power_grid_sum(design, prior, np.append(free, last), grid).value
        # outside the feasible set: spend nothing on the last test, charge the overspend
        alpha = np.append(free, 0.0)
        over = fwer_batch(design, alpha[None, :])[0] - a0
        return power_grid_sum(design, prior, alpha, grid).value - penalty * over

    return value


def optimize_alpha_gridsum(design: NestedDesign, prior: EffectPrior,
                           grid: GridConfig = GridConfig(), *, x0=None,
                           step: float = FD_STEP) -> AlphaOptimum:
    """Optimal levels by quasi-Newton directly on grid-sum power (central differences)."""
    t0 = time.perf_counter()
    a0 = design.alpha0
    if design.n == 1:
        alpha = AlphaVector([a0])
        est = power_grid_sum(design, prior, alpha, grid)
        return AlphaOptimum(alpha, est, "grid", surface_value=est.value,
                            seconds=time.perf_counter() - t0)
    d = design.n - 1
    bounds = BoxBounds(np.zeros(d), np.full(d, a0))
    f = _gridsum_objective(design, prior, grid)

    def objective(x):
        fx = f(x)
        g = np.empty(d)
        for i in range(d):
            hi = x.copy()
            lo = x.copy()
            hi[i] = min(x[i] + step, a0)
            lo[i] = max(x[i] - step, 0.0)
            g[i] = (f(hi) - f(lo)) / (hi[i] - lo[i])
        return fx, g

    if x0 is None:
        x0 = np.full(d, a0 / design.n)
    opt = maximize_bounded(objective, bounds, x0)
    x = opt.x_opt
    if not _feasible(design, x):
        x = _pull_back(design, np.asarray(x0, dtype=float), x)
    last = solve_alpha_n(design, x)
    if last is None:
        raise InfeasibleOptimumError(f"no feasible last level at {x.tolist()}")
    alpha = AlphaVector(np.append(x, last))
    est = power_grid_sum(design, prior, alpha, grid)
    return AlphaOptimum(alpha, est, "grid", surface_value=est.value, opt=opt,
                        seconds=time.perf_counter() - t0)
