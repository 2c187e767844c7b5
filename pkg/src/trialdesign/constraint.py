"""Family-wise error rate control for nested tests.

The last level ``alpha_n`` is a function of the others through
``fwer(alpha) == alpha0``; FWER is strictly increasing in ``alpha_n``, so a
bisection on ``[0, alpha0]`` finds it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientCandidatesError, ValidationError
from .model import AlphaVector, NestedDesign, build_null_covariance, normal_quantile_upper
from .mvn import mvn_cdf, orthant_batch

BISECTION_STEPS = 48
_FEASIBLE_SLACK = 1e-12


def fwer(design: NestedDesign, alpha) -> float:
    """Probability that at least one test rejects under the global null."""
    if not isinstance(alpha, AlphaVector):
        alpha = AlphaVector(alpha)
    if alpha.n != design.n:
        raise ValidationError("alpha length must match the design")
    return 1.0 - mvn_cdf(alpha.z, build_null_covariance(design), 1e-8)


def fwer_batch(design: NestedDesign, alphas) -> np.ndarray:
    """FWER for each row of ``alphas`` (shape ``(B, n)``)."""
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    return 1.0 - orthant_batch(normal_quantile_upper(alphas), build_null_covariance(design))


def solve_last_batch(design: NestedDesign, partials) -> np.ndarray:
    """Vectorized :func:`solve_alpha_n`; infeasible rows come back as NaN."""
    a0 = design.alpha0
    partials = np.atleast_2d(np.asarray(partials, dtype=float))
    b = partials.shape[0]
    if design.n == 1:
        return np.full(b, a0)
    if partials.shape[1] != design.n - 1:
        raise ValidationError("partial alphas must have n - 1 entries")
    if np.any((partials < 0) | (partials > a0)):
        raise ValidationError("partial alphas must lie in [0, alpha0]")

    def excess(last):
        return fwer_batch(design, np.column_stack([partials, last])) - a0

    at_zero = excess(np.zeros(b))
    at_top = excess(np.full(b, a0))
    out = np.full(b, np.nan)
    exact_zero = np.abs(at_zero) <= _FEASIBLE_SLACK
    out[exact_zero] = 0.0
    todo = (at_zero < -_FEASIBLE_SLACK) & (at_top >= -_FEASIBLE_SLACK)
    if np.any(todo):
        lo = np.zeros(b)
        hi = np.full(b, a0)
        idx = np.flatnonzero(todo)
        sub = partials[idx]
        lo_s, hi_s = lo[idx], hi[idx]
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo_s + hi_s)
            e = fwer_batch(design, np.column_stack([sub, mid])) - a0
            up = e > 0
            hi_s = np.where(up, mid, hi_s)
            lo_s = np.where(up, lo_s, mid)
        out[idx] = 0.5 * (lo_s + hi_s)
    return out


def solve_alpha_n(design: NestedDesign, partial) -> float | None:
    """The level for the last test that spends exactly the FWER budget.

    Returns ``None`` when no ``alpha_n`` in ``[0, alpha0]`` works (the first
    ``n - 1`` tests already overspend).
    """
    partial = np.atleast_1d(np.asarray(partial, dtype=float))
    if design.n == 1:
        if partial.size:
            raise ValidationError("a single-population design has no free levels")
        return design.alpha0
    value = solve_last_batch(design, partial[None, :])[0]
    return None if np.isnan(value) else float(value)


def complete(design: NestedDesign, partial) -> AlphaVector | None:
    last = solve_alpha_n(design, partial)
    if last is None:
        return None
    return AlphaVector(np.append(np.asarray(partial, dtype=float), last))


@dataclass(frozen=True)
class CandidateSet:
    alphas: np.ndarray
    n3: int
    grid_m: int
    seed: int

    @property
    def points(self) -> list[AlphaVector]:
        return [AlphaVector(a) for a in self.alphas]

    @property
    def free(self) -> np.ndarray:
        """The ``n - 1`` free coordinates of every candidate."""
        return self.alphas[:, :-1]

    def __len__(self):
        return self.alphas.shape[0]


def spanning_grid(design: NestedDesign, grid_m: int) -> np.ndarray:
    """``grid_m ** (n-1)`` points, half a step in from the edges of ``(0, alpha0)``."""
    axis = design.alpha0 * (np.arange(grid_m) + 0.5) / grid_m
    mesh = np.meshgrid(*([axis] * (design.n - 1)), indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


def generate_candidates(design: NestedDesign, n3: int, grid_m: int, seed: int) -> CandidateSet:
    """Randomly chosen constraint-satisfying alpha vectors from a spanning grid."""
    if n3 < 1 or grid_m < 2:
        raise ValidationError("need n3 >= 1 and grid_m >= 2")
    if design.n == 1:
        return CandidateSet(np.array([[design.alpha0]]), 1, grid_m, seed)
    grid = spanning_grid(design, grid_m)
    last = solve_last_batch(design, grid)
    ok = ~np.isnan(last)
    valid = np.column_stack([grid[ok], last[ok]])
    if valid.shape[0] < n3:
        raise InsufficientCandidatesError(
            f"only {valid.shape[0]} valid grid points for n3={n3} (grid_m={grid_m})")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(valid.shape[0], size=n3, replace=False))
    alphas = valid[pick]
    alphas.flags.writeable = False
    return CandidateSet(alphas, n3, grid_m, seed)
