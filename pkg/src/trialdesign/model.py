"""Trial geometry, effect priors and the deterministic formulas built on them.

Populations are indexed from the entire population (``r[0] == 1``) down to
the smallest nested subset. Z-statistics of nested populations share
patients, which gives the null correlation ``sqrt(r_l / r_k)`` for ``k < l``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, SingularCovarianceError, ValidationError

#: smallest allowed gap between adjacent population fractions (as a ratio)
ADJACENT_RATIO_GUARD = 1e-6

#: sigma at or below this is treated as a point mass
SIGMA_FLOOR = 1e-12

#: prior precision per unit of population fraction (sigma_i = 1/sqrt(80 r_i / 4))
PRIOR_PRECISION = 80.0 / 4.0


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def normal_quantile_upper(alpha):
    """Threshold ``z`` with ``P(Z > z) = alpha``; ``alpha == 0`` maps to ``+inf``.

    Computed as ``-ndtri(alpha)`` so tiny levels (1e-6 and below) keep full
    relative precision.
    """
    return -special.ndtri(np.asarray(alpha, dtype=float))


@dataclass(frozen=True)
class NestedDesign:
    """Fixed trial geometry: population fractions, information units, FWER budget."""

    r: np.ndarray
    i3: float
    alpha0: float = 0.025

    def __post_init__(self):
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if r.ndim != 1 or r.size < 1:
            raise ValidationError("r must be a non-empty sequence of fractions")
        if r.size > 8:
            raise ValidationError("at most 8 nested populations are supported")
        if r[0] != 1.0:
            raise ValidationError("r[0] must equal 1 (the entire population)")
        if not np.all(np.isfinite(r)) or r[-1] <= 0:
            raise ValidationError("r must be strictly decreasing and positive: r[n-1] > 0")
        if np.any(np.diff(r) >= 0):
            raise ValidationError("r must be strictly decreasing: r[i] > r[i+1]")
        if np.any(r[1:] / r[:-1] > 1.0 - ADJACENT_RATIO_GUARD):
            raise ValidationError(
                "adjacent ratio r[i+1]/r[i] must not exceed 1 - 1e-6 (singular covariance)")
        if not 0.0 < self.alpha0 < 1.0:
            raise ValidationError("alpha0 must lie in (0, 1)")
        if not (np.isfinite(self.i3) and self.i3 > 0):
            raise ValidationError("i3 must be positive")
        object.__setattr__(self, "r", _frozen(r))
        object.__setattr__(self, "i3", float(self.i3))
        object.__setattr__(self, "alpha0", float(self.alpha0))

    @property
    def n(self) -> int:
        return int(self.r.size)

    def with_r(self, r) -> NestedDesign:
        return NestedDesign(r=r, i3=self.i3, alpha0=self.alpha0)

    def __eq__(self, other):
        if not isinstance(other, NestedDesign):
            return NotImplemented
        return (np.array_equal(self.r, other.r) and self.i3 == other.i3
                and self.alpha0 == other.alpha0)

    def __hash__(self):
        return hash((self.r.tobytes(), self.i3, self.alpha0))


@dataclass(frozen=True)
class SizingParams:
    """Error rates and entire-population hazard reduction used to size the trial."""

    alpha: float = 0.025
    beta: float = 0.1
    delta: float = 0.25

    def __post_init__(self):
        for name in ("alpha", "beta", "delta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {v!r}")


@dataclass(frozen=True)
class Scenario:
    """Point-estimate law of the hazard reduction: ``delta0(r) = intercept + slope * r``."""

    kind: str = "constant"
    intercept: float = 0.25
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear-in-r"):
            raise ValidationError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "constant" and self.slope != 0.0:
            raise ValidationError("a constant scenario must have slope 0")
        # delta0 is affine in r, so checking both ends of (0, 1] suffices
        ends = (self.intercept, self.intercept + self.slope)
        if not all(0.0 < v < 1.0 for v in ends):
            raise DomainError("scenario must give hazard reductions in (0, 1) for all r in (0, 1]")

    @classmethod
    def constant(cls, value: float) -> Scenario:
        return cls("constant", value, 0.0)

    @classmethod
    def linear(cls, intercept: float, slope: float) -> Scenario:
        return cls("linear-in-r", intercept, slope)

    def delta0(self, r) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(r, dtype=float)

    @property
    def entire_population_delta(self) -> float:
        return float(self.intercept + self.slope)


#: the three biomarker-effect laws used throughout the examples and tests
SCENARIOS = {
    "a": Scenario.constant(0.25),
    "b": Scenario.linear(0.3, -0.1),
    "c": Scenario.linear(0.8, -0.6),
}


@dataclass(frozen=True)
class EffectPrior:
    """Multivariate normal prior over the per-population effects."""

    theta: np.ndarray
    sigma: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = theta.size
        if sigma.shape != (n,) or cov.shape != (n, n):
            raise ValidationError("theta, sigma and cov dimensions disagree")
        if np.any(sigma < 0) or not np.all(np.isfinite(theta)):
            raise ValidationError("sigma must be non-negative and theta finite")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-14):
            raise ValidationError("prior covariance must be symmetric")
        object.__setattr__(self, "theta", _frozen(theta))
        object.__setattr__(self, "sigma", _frozen(sigma))
        object.__setattr__(self, "cov", _frozen(cov))

    @classmethod
    def from_parts(cls, theta, sigma, r) -> EffectPrior:
        """Prior with the nested correlation of ``r`` scaled by ``sigma``."""
        sigma = np.asarray(sigma, dtype=float)
        corr = build_null_covariance(r)
        return cls(theta, sigma, corr * np.outer(sigma, sigma))

    @classmethod
    def point_mass(cls, theta) -> EffectPrior:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        n = theta.size
        return cls(theta, np.zeros(n), np.zeros((n, n)))

    @property
    def n(self) -> int:
        return int(self.theta.size)

    @property
    def is_point_mass(self) -> bool:
        return bool(np.all(self.sigma <= SIGMA_FLOOR))


@dataclass(frozen=True)
class AlphaVector:
    """Per-population significance levels and their rejection thresholds."""

    alpha: np.ndarray
    z: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if a.ndim != 1 or not np.all((a >= 0) & (a < 1)):
            raise ValidationError("significance levels must lie in [0, 1)")
        object.__setattr__(self, "alpha", _frozen(a))
        object.__setattr__(self, "z", _frozen(normal_quantile_upper(a)))

    @property
    def n(self) -> int:
        return int(self.alpha.size)

    def check_budget(self, alpha0: float) -> None:
        if np.any(self.alpha > alpha0):
            raise ValidationError(f"significance levels must not exceed alpha0={alpha0}")

    def __eq__(self, other):
        if not isinstance(other, AlphaVector):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha)

    def __hash__(self):
        return hash(self.alpha.tobytes())


def _as_r(design_or_r) -> np.ndarray:
    if isinstance(design_or_r, NestedDesign):
        return design_or_r.r
    return np.atleast_1d(np.asarray(design_or_r, dtype=float))


def build_null_covariance(design) -> np.ndarray:
    """Correlation of the nested Z-statistics under the global null.

    ``Sigma[k, l] = sqrt(r_l / r_k)`` for ``k < l``; accepts a design or a raw
    fraction vector.
    """
    r = _as_r(design)
    sigma = np.sqrt(np.minimum.outer(r, r) / np.maximum.outer(r, r))
    np.fill_diagonal(sigma, 1.0)
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            "null covariance is not positive definite; adjacent fractions too close") from exc
    return sigma


def build_alternative_mean(design: NestedDesign, delta) -> np.ndarray:
    """Mean of the Z-statistics for effects ``delta``: ``sqrt(r_i * I3) * delta_i``."""
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ValidationError("delta must be finite")
    return np.sqrt(design.r * design.i3) * delta


def build_prior(design, scenario: Scenario) -> EffectPrior:
    r = _as_r(design)
    d0 = scenario.delta0(r)
    if np.any((d0 <= 0) | (d0 >= 1)):
        raise DomainError(f"hazard reductions {d0} fall outside (0, 1)")
    theta = -np.log1p(-d0)
    sigma = 1.0 / np.sqrt(PRIOR_PRECISION * r)
    return EffectPrior.from_parts(theta, sigma, r)


def information_units(p: SizingParams, *, rounded: bool = False) -> float:
    """Information units ``(z_{1-alpha} + z_{1-beta})^2 / log(1 - delta)^2``.

    The exact value is returned unless ``rounded`` is set (reporting only).
    """
    za = normal_quantile_upper(p.alpha)
    zb = normal_quantile_upper(p.beta)
    i3 = float((za + zb) ** 2 / np.log1p(-p.delta) ** 2)
    return float(round(i3)) if rounded else i3


def design_for(r, scenario: Scenario, *, alpha0: float = 0.025, alpha: float = 0.025,
               beta: float = 0.1) -> NestedDesign:
    """Design whose information units come from the scenario's entire-population effect."""
    i3 = information_units(SizingParams(alpha, beta, scenario.entire_population_delta))
    return NestedDesign(r=r, i3=i3, alpha0=alpha0)
