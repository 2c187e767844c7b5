"""Expected power of a nested design, averaged over the effect prior.

Three estimators share one contract (:class:`PowerEstimate`):

* :func:`power_monte_carlo` draws effects from the prior and null
  Z-statistic vectors, and counts how often no test rejects;
* :func:`power_grid_sum` is a midpoint-rule tensor grid over the prior with
  an MVN CDF at every node (the usual baseline);
* :func:`power_fine_grid` is the same grid at ``m = 500``, the reference.

:func:`power_convolution` is an exact closed form for Gaussian priors and
serves as an independent oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels import count_dominated
from .errors import ValidationError, WorkBudgetError
from .model import AlphaVector, EffectPrior, NestedDesign, build_null_covariance
from .mvn import (_GL_W, _GL_X, _X_HI, _X_LO, cholesky, mvn_cdf, ndtr, orthant_batch,
                  sample_mvn, trivariate_panels)


@dataclass(frozen=True)
class McConfig:
    n1: int = 10240
    n2: int = 20480
    seed: int = 0

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValidationError("n1 and n2 must be at least 1")

    @property
    def variance_bound(self) -> float:
        """``1 / (4 n1 n2)``, valid only if all ``n1 * n2`` indicators were independent."""
        return 1.0 / (4.0 * self.n1 * self.n2)

    @property
    def conservative_variance_bound(self) -> float:
        """Bound that accounts for indicators sharing an outer or inner draw.

        The estimator's variance is ``Var_delta / n1 + Var_x / n2`` plus a
        ``1 / (n1 n2)`` interaction term, and each variance is at most 1/4.
        """
        return 0.25 / self.n1 + 0.25 / self.n2 + 0.25 / (self.n1 * self.n2)


@dataclass(frozen=True)
class GridConfig:
    m: int = 50
    span: float = 5.0
    max_evaluations: int = 10 ** 9

    def __post_init__(self):
        if self.m < 2:
            raise ValidationError("grid needs m >= 2")
        if not self.span > 0:
            raise ValidationError("span must be positive")


FINE_GRID = GridConfig(m=500)


@dataclass(frozen=True)
class PowerEstimate:
    value: float
    method: str
    variance_bound: float = 0.0


def _as_alpha(alpha) -> AlphaVector:
    return alpha if isinstance(alpha, AlphaVector) else AlphaVector(alpha)


def _check(design: NestedDesign, prior: EffectPrior, alpha: AlphaVector):
    if prior.n != design.n or alpha.n != design.n:
        raise ValidationError(
            f"dimension mismatch: design n={design.n}, prior n={prior.n}, alpha n={alpha.n}")
    alpha.check_budget(design.alpha0)


def _streams(seed: int):
    outer, inner = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(outer), np.random.default_rng(inner)


def power_monte_carlo(design: NestedDesign, prior: EffectPrior, alpha,
                      cfg: McConfig = McConfig()) -> PowerEstimate:
    """Two-layer Monte Carlo estimate of expected power.

    ``n1`` effect vectors are drawn from the prior and ``n2`` null statistic
    vectors from the nested correlation; one shared inner sample serves all
    outer draws. The estimate is ``1 - (#dominated pairs) / (n1 * n2)``.
    """
    alpha = _as_alpha(alpha)
    _check(design, prior, alpha)
    outer_rng, inner_rng = _streams(cfg.seed)
    scale = np.sqrt(design.r * design.i3)
    if prior.is_point_mass:
        deltas = prior.theta[None, :]
        weight = cfg.n1
    else:
        deltas = sample_mvn(prior.theta, cholesky(prior.cov), cfg.n1, outer_rng)
        weight = 1
    x = sample_mvn(np.zeros(design.n), cholesky(build_null_covariance(design)), cfg.n2, inner_rng)
    thresholds = alpha.z[None, :] - scale[None, :] * deltas
    hits = count_dominated(x, thresholds) * weight
    value = 1.0 - hits / (cfg.n1 * cfg.n2)
    return PowerEstimate(float(value), "monte-carlo", cfg.variance_bound)


# --------------------------------------------------------------------------
# grid sums

def _grid_weights(prior: EffectPrior, cfg: GridConfig):
    """Standardized 1-D node offsets and the prior-weight function on the tensor grid."""
    m, span = cfg.m, cfg.span
    g = span * (2.0 * (np.arange(m) + 0.5) / m - 1.0)
    corr = prior.cov / np.outer(prior.sigma, prior.sigma)
    prec = np.linalg.inv(corr)
    _, logdet = np.linalg.slogdet(corr)
    n = prior.n
    log_norm = n * np.log(2.0 * span / m) - 0.5 * n * np.log(2.0 * np.pi) - 0.5 * logdet
    return g, prec, log_norm


def _nested_triplet(sigma) -> bool:
    return abs(sigma[0, 2] - sigma[0, 1] * sigma[1, 2]) < 1e-12


def _grid_sum_trivariate(u1, u2, u3, sigma, g, prec, log_norm, chunk=8):
    """Tensor-grid sums of prior weight times the nested trivariate CDF, and of the weight.

    With nested correlation the first and third statistics are independent
    given the second, so each CDF is a 1-D integral over the middle
    coordinate and the inner sums over the other two axes become matrix
    products.
    """
    m = g.size
    r12, r23 = sigma[0, 1], sigma[1, 2]
    s12, s23 = np.sqrt(1 - r12 * r12), np.sqrt(1 - r23 * r23)
    panels = trivariate_panels(sigma)
    offs = (np.arange(panels)[:, None] + (_GL_X[None, :] + 1.0) / 2.0).ravel()
    wts = np.tile(_GL_W / 2.0, panels)
    # prior weights factor as exp(-q/2) over (i, j, k); build per middle index j
    gi = g[:, None]
    gk = g[None, :]
    total = 0.0
    mass = 0.0
    for j0 in range(0, m, chunk):
        js = np.arange(j0, min(j0 + chunk, m))
        hi = np.minimum(u2[js], _X_HI)
        width = np.maximum(hi - _X_LO, 0.0) / panels
        x = _X_LO + width[:, None] * offs[None, :]                        # (J, Q)
        A = ndtr((u1[None, :, None] - r12 * x[:, None, :]) / s12)         # (J, m, Q)
        C = ndtr((u3[None, :, None] - r23 * x[:, None, :]) / s23)         # (J, m, Q)
        dens = np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi) * wts[None, :] * width[:, None]
        gj = g[js][:, None, None]
        q = (prec[0, 0] * gi * gi + prec[2, 2] * gk * gk + 2 * prec[0, 2] * gi * gk)[None]
        q = q + prec[1, 1] * gj * gj + 2 * prec[0, 1] * gi[None] * gj + 2 * prec[1, 2] * gk[None] * gj
        W = np.exp(log_norm - 0.5 * q)                                     # (J, m_i, m_k)
        WC = np.matmul(W, C)                                               # (J, m_i, Q)
        total += float(np.einsum("jiq,jiq,jq->", A, WC, dens))
        mass += float(W.sum())
    return total, mass


def power_grid_sum(design: NestedDesign, prior: EffectPrior, alpha,
                   cfg: GridConfig = GridConfig(), *, method: str = "grid") -> PowerEstimate:
    """Midpoint-rule estimate of expected power over ``theta +- span * sigma``.

    Prior weights are renormalized over the truncated box.
    """
    alpha = _as_alpha(alpha)
    _check(design, prior, alpha)
    n = design.n
    sigma = build_null_covariance(design)
    scale = np.sqrt(design.r * design.i3)
    if prior.is_point_mass:
        cdf = mvn_cdf(alpha.z - scale * prior.theta, sigma, 1e-10)
        return PowerEstimate(float(1.0 - cdf), method)
    if np.any(prior.sigma <= 0):
        raise ValidationError("grid sums need every prior sigma positive (or a point mass)")
    if float(cfg.m) ** n > cfg.max_evaluations:
        raise WorkBudgetError(f"grid of {cfg.m}^{n} nodes exceeds budget {cfg.max_evaluations:g}")
    g, prec, log_norm = _grid_weights(prior, cfg)
    # thresholds on each axis: z_i - sqrt(r_i I3) (theta_i + sigma_i g)
    u = alpha.z[:, None] - (scale * prior.theta)[:, None] - (scale * prior.sigma)[:, None] * g[None, :]
    if n == 1:
        w = np.exp(log_norm - 0.5 * prec[0, 0] * g * g)
        cdf_sum, mass = float(w @ ndtr(u[0])), float(w.sum())
    elif n == 3 and _nested_triplet(sigma):
        cdf_sum, mass = _grid_sum_trivariate(u[0], u[1], u[2], sigma, g, prec, log_norm)
    else:
        idx = np.indices((cfg.m,) * n).reshape(n, -1).T
        cdf_sum = mass = 0.0
        step = 100_000
        for s in range(0, idx.shape[0], step):
            block = idx[s:s + step]
            pts = g[block]
            w = np.exp(log_norm - 0.5 * np.einsum("ij,jk,ik->i", pts, prec, pts))
            uu = u[np.arange(n)[None, :], block]
            cdf_sum += float(w @ orthant_batch(uu, sigma))
            mass += float(w.sum())
    # weights renormalized to the truncated box, so a zero-power design sums to exactly 0
    return PowerEstimate(float(1.0 - cdf_sum / mass), method)


def power_fine_grid(design: NestedDesign, prior: EffectPrior, alpha) -> PowerEstimate:
    """Reference power on the ``m = 500`` grid."""
    return power_grid_sum(design, prior, alpha, FINE_GRID, method="fine-grid")


def power_convolution(design: NestedDesign, prior: EffectPrior, alpha,
                      tol: float = 1e-10) -> PowerEstimate:
    """Exact expected power for a Gaussian prior.

    Averaging ``N(D delta, Sigma)`` over ``delta ~ N(theta, C)`` gives
    ``N(D theta, Sigma + D C D)``, so the power is one MVN CDF. Independent
    of the sampling and grid code paths.
    """
    alpha = _as_alpha(alpha)
    _check(design, prior, alpha)
    scale = np.sqrt(design.r * design.i3)
    total = build_null_covariance(design) + np.outer(scale, scale) * prior.cov
    sd = np.sqrt(np.diag(total))
    upper = (alpha.z - scale * prior.theta) / sd
    cdf = mvn_cdf(upper, total / np.outer(sd, sd), tol)
    return PowerEstimate(float(1.0 - cdf), "closed-form")


def with_seed(cfg: McConfig, seed: int) -> McConfig:
    return replace(cfg, seed=int(seed))
