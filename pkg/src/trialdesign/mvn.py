"""Multivariate normal kernels: factorization, sampling and CDF evaluation.

The CDF is deterministic. Up to three dimensions it is computed by
quadrature (exact bivariate formula, and a one-dimensional conditioning
integral in 3-D); above that by separation of variables with randomized
quasi-Monte Carlo under a fixed scrambling seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import lapack
from scipy.stats import qmc

from .errors import NonConvergenceError, NotPositiveDefiniteError, ValidationError

_TWOPI = 2.0 * np.pi
_QMC_SEED = 20200501

ndtr = special.ndtr


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    dim: int


def cholesky(matrix) -> CholeskyFactor:
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("cholesky needs a square matrix")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14):
        raise ValidationError("cholesky needs a symmetric matrix")
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(int(info) - 1)
    if info < 0:
        raise ValidationError(f"invalid argument to dpotrf ({info})")
    lower = np.tril(c)
    lower.flags.writeable = False
    return CholeskyFactor(lower=lower, dim=a.shape[0])


def sample_mvn(mean, factor: CholeskyFactor, count: int, stream: np.random.Generator) -> np.ndarray:
    """``count`` rows of ``mean + L z`` with standard normal ``z`` drawn from ``stream``."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (factor.dim,))
    z = stream.standard_normal((int(count), factor.dim))
    return mean + z @ factor.lower.T


# --------------------------------------------------------------------------
# bivariate normal (Drezner-Wesolowsky with Genz's refinements), vectorized

def _half_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    keep = x < 0
    return x[keep], w[keep]


_BVN_RULES = [_half_legendre(6), _half_legendre(12), _half_legendre(20)]


def _bvnu(h, k, r):
    """Upper orthant ``P(X > h, Y > k)`` for standard bivariate normal with correlation ``r``."""
    h, k, r = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, k, r)))
    out = np.empty(h.shape)
    absr = np.abs(r)

    low = absr < 0.925
    if np.any(low):
        hl, kl, rl = h[low], k[low], r[low]
        hk = hl * kl
        hs = (hl * hl + kl * kl) / 2.0
        asr = np.arcsin(rl)
        acc = np.zeros(hl.shape)
        for band, (lo_r, hi_r) in enumerate(((0.0, 0.3), (0.3, 0.75), (0.75, 0.925))):
            sel = (np.abs(rl) >= lo_r) & (np.abs(rl) < hi_r)
            if not np.any(sel):
                continue
            xg, wg = _BVN_RULES[band]
            a, b, c = asr[sel], hk[sel], hs[sel]
            tot = np.zeros(a.shape)
            for xi, wi in zip(xg, wg):
                for sgn in (-1.0, 1.0):
                    sn = np.sin(a * (1.0 + sgn * xi) / 2.0)
                    tot += wi * np.exp((sn * b - c) / (1.0 - sn * sn))
            acc[sel] = tot
        out[low] = acc * asr / (2.0 * _TWOPI) + ndtr(-hl) * ndtr(-kl)

    high = ~low
    if np.any(high):
        hh, kh, rh = h[high], k[high].copy(), r[high]
        neg = rh < 0
        kh[neg] = -kh[neg]
        hk = hh * kh
        bvn = np.zeros(hh.shape)
        inner = np.abs(rh) < 1.0
        if np.any(inner):
            hi_, ki_, hki = hh[inner], kh[inner], hk[inner]
            ri = rh[inner]
            as_ = (1.0 - ri) * (1.0 + ri)
            a = np.sqrt(as_)
            bs = (hi_ - ki_) ** 2
            c = (4.0 - hki) / 8.0
            d = (12.0 - hki) / 16.0
            v = a * np.exp(-(bs / as_ + hki) / 2.0) * (
                1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0)
            b = np.sqrt(bs)
            tail = hki > -160.0
            with np.errstate(over="ignore", invalid="ignore"):
                corr = (np.exp(-hki / 2.0) * np.sqrt(_TWOPI) * ndtr(-b / a) * b
                        * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0))
            v = v - np.where(tail, corr, 0.0)
            a2 = a / 2.0
            xg, wg = _BVN_RULES[2]
            for xi, wi in zip(xg, wg):
                for sgn in (-1.0, 1.0):
                    xs = (a2 * (sgn * xi + 1.0)) ** 2
                    rs = np.sqrt(1.0 - xs)
                    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
                        term = (np.exp(-bs / (2.0 * xs) - hki / (1.0 + rs)) / rs
                                - np.exp(-(bs / xs + hki) / 2.0) * (1.0 + c * xs * (1.0 + d * xs)))
                    v = v + a2 * wi * np.nan_to_num(term)
            bvn[inner] = -v / _TWOPI
        pos = ~neg
        bvn[pos] = bvn[pos] + ndtr(-np.maximum(hh[pos], kh[pos]))
        if np.any(neg):
            hn, kn = hh[neg], kh[neg]
            bn = -bvn[neg]
            adj = np.where(hn < 0, ndtr(kn) - ndtr(hn), ndtr(-hn) - ndtr(-kn))
            bn = bn + np.where(kn > hn, adj, 0.0)
            bvn[neg] = bn
        out[high] = bvn
    return np.clip(out, 0.0, 1.0)


def bvn_cdf(a, b, rho):
    """``P(X <= a, Y <= b)`` for a standard bivariate normal; infinite limits allowed."""
    a, b, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, rho)))
    out = np.empty(a.shape)
    fin = np.isfinite(a) & np.isfinite(b)
    out[fin] = _bvnu(-a[fin], -b[fin], rho[fin])
    inf = ~fin
    if np.any(inf):
        ai, bi = a[inf], b[inf]
        val = np.where(np.isposinf(ai), ndtr(bi), np.where(np.isposinf(bi), ndtr(ai), 0.0))
        val = np.where(np.isneginf(ai) | np.isneginf(bi), 0.0, val)
        out[inf] = val
    return out


# --------------------------------------------------------------------------
# trivariate: condition on one coordinate, integrate it by composite Gauss-Legendre

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_X_LO, _X_HI = -10.0, 10.0


def _pivot(corr):
    """Coordinate whose conditioning leaves the weakest residual correlation."""
    best = None
    for j in range(3):
        a, b = [i for i in range(3) if i != j]
        ra, rb = corr[j, a], corr[j, b]
        partial = (corr[a, b] - ra * rb) / np.sqrt((1 - ra * ra) * (1 - rb * rb))
        key = (abs(partial), max(abs(ra), abs(rb)))
        if best is None or key < best[0]:
            best = (key, j, a, b, partial)
    return best[1:]


def trivariate_panels(corr, refine: int = 1) -> int:
    corr = np.asarray(corr, dtype=float)
    j, a, b, _ = _pivot(corr)
    s = np.sqrt(1.0 - np.array([corr[j, a], corr[j, b]]) ** 2).min()
    width = min(0.5, 0.75 * s) / refine
    return int(min(np.ceil((_X_HI - _X_LO) / width), 4000 * refine))


def trivariate_cdf(upper, corr, panels: int | None = None) -> np.ndarray:
    """Batched ``P(X <= u)`` for rows ``u`` of ``upper`` (shape ``(B, 3)``).

    Infinite entries are allowed. The conditioning integral runs over
    ``[-10, min(u_pivot, 10)]`` split into equal panels.
    """
    u = np.atleast_2d(np.asarray(upper, dtype=float))
    corr = np.asarray(corr, dtype=float)
    if panels is None:
        panels = trivariate_panels(corr)
    j, a, b, partial = _pivot(corr)
    ra, rb = corr[j, a], corr[j, b]
    sa, sb = np.sqrt(1 - ra * ra), np.sqrt(1 - rb * rb)

    lo = np.full(u.shape[0], _X_LO)
    hi = np.minimum(u[:, j], _X_HI)
    width = (hi - lo) / panels
    live = width > 0
    out = np.zeros(u.shape[0])
    if not np.any(live):
        return out
    # nodes: (rows, panels * order)
    offs = (np.arange(panels)[:, None] + (_GL_X[None, :] + 1.0) / 2.0).ravel()
    wts = np.tile(_GL_W / 2.0, panels)
    lw = width[live][:, None]
    x = lo[live][:, None] + lw * offs[None, :]
    ua = u[live, a][:, None]
    ub = u[live, b][:, None]
    pa = (ua - ra * x) / sa
    pb = (ub - rb * x) / sb
    if abs(partial) < 1e-14:
        inner = ndtr(pa) * ndtr(pb)
    else:
        inner = bvn_cdf(pa, pb, partial)
    dens = np.exp(-0.5 * x * x) / np.sqrt(_TWOPI)
    out[live] = (inner * dens) @ wts * width[live]
    return np.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# general dimension: separation of variables with randomized QMC

def _sov_factor(b, corr):
    """Cholesky factor with Genz-Bretz variable prioritization; returns (L, b_reordered)."""
    n = b.size
    sig = corr.copy()
    b = b.copy()
    L = np.zeros((n, n))
    y = np.zeros(n)
    for i in range(n):
        best, best_p = i, np.inf
        for jj in range(i, n):
            var = sig[jj, jj] - L[jj, :i] @ L[jj, :i]
            sd = np.sqrt(max(var, 1e-300))
            p = ndtr((b[jj] - L[jj, :i] @ y[:i]) / sd)
            if p < best_p:
                best, best_p = jj, p
        if best != i:
            sig[[i, best]] = sig[[best, i]]
            sig[:, [i, best]] = sig[:, [best, i]]
            L[[i, best]] = L[[best, i]]
            b[[i, best]] = b[[best, i]]
        var = sig[i, i] - L[i, :i] @ L[i, :i]
        if var <= 0:
            raise NotPositiveDefiniteError(i)
        L[i, i] = np.sqrt(var)
        for jj in range(i + 1, n):
            L[jj, i] = (sig[jj, i] - L[jj, :i] @ L[i, :i]) / L[i, i]
        t = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
        pt = max(ndtr(t), 1e-300)
        y[i] = -np.exp(-0.5 * t * t) / np.sqrt(_TWOPI) / pt
    return L, b


def _sov_integrand(w, L, b):
    n = b.size
    e = np.full(w.shape[0], ndtr(b[0] / L[0, 0]))
    f = e.copy()
    ys = np.empty((w.shape[0], n - 1))
    for i in range(1, n):
        ys[:, i - 1] = special.ndtri(np.clip(w[:, i - 1] * e, 1e-300, 1 - 1e-16))
        t = ys[:, :i] @ L[i, :i]
        e = ndtr((b[i] - t) / L[i, i])
        f *= e
    return f


def _qmc_cdf(b, corr, tol, max_points, replicates=8):
    L, bb = _sov_factor(b, corr)
    n = bb.size
    rng = np.random.default_rng(_QMC_SEED)
    engines = [qmc.Sobol(n - 1, scramble=True, seed=rng) for _ in range(replicates)]
    sums = np.zeros(replicates)
    count = 0
    m = 10
    while True:
        batch = 2 ** m if count == 0 else count
        for k, eng in enumerate(engines):
            sums[k] += _sov_integrand(eng.random(batch), L, bb).sum()
        count += batch
        est = sums / count
        err = 3.0 * est.std(ddof=1) / np.sqrt(replicates)
        if err <= tol:
            return float(est.mean())
        if count * replicates * 2 > max_points:
            raise NonConvergenceError(
                f"mvn_cdf reached {count * replicates} points with error {err:.3g} > tol {tol:.3g}")


def mvn_cdf(upper, correlation, tol: float = 1e-6, *, max_points: int = 2 ** 24) -> float:
    """``P(X_i <= upper_i for all i)`` for ``X ~ N(0, correlation)``.

    Coordinates with ``upper = +inf`` are dropped before integration and any
    ``-inf`` gives 0. Absolute error is at most ``tol``; a
    :class:`NonConvergenceError` is raised when the work budget runs out first.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    u = np.atleast_1d(np.asarray(upper, dtype=float))
    corr = np.atleast_2d(np.asarray(correlation, dtype=float))
    if corr.shape != (u.size, u.size):
        raise ValidationError("upper and correlation dimensions disagree")
    if np.any(np.isnan(u)):
        raise ValidationError("upper limits must not be NaN")
    if np.any(np.isneginf(u)):
        return 0.0
    keep = ~np.isposinf(u)
    u, corr = u[keep], corr[np.ix_(keep, keep)]
    n = u.size
    if n == 0:
        return 1.0
    if n == 1:
        return float(ndtr(u[0]))
    if n == 2:
        return float(bvn_cdf(u[0], u[1], corr[0, 1]))
    if n == 3:
        panels = trivariate_panels(corr)
        prev = trivariate_cdf(u[None, :], corr, panels)[0]
        while True:
            panels *= 2
            cur = trivariate_cdf(u[None, :], corr, panels)[0]
            if abs(cur - prev) <= tol / 10:
                return float(cur)
            if panels > 64000:
                raise NonConvergenceError("trivariate quadrature did not settle")
            prev = cur
    return _qmc_cdf(u, corr, tol, max_points)


def orthant_batch(upper, correlation) -> np.ndarray:
    """Vectorized ``mvn_cdf`` over rows of ``upper`` for dimensions up to 3.

    Uses the fixed default quadrature (no refinement loop); higher dimensions
    fall back to row-by-row :func:`mvn_cdf`.
    """
    u = np.atleast_2d(np.asarray(upper, dtype=float))
    corr = np.atleast_2d(np.asarray(correlation, dtype=float))
    n = u.shape[1]
    if n == 1:
        return ndtr(u[:, 0])
    if n == 2:
        return bvn_cdf(u[:, 0], u[:, 1], corr[0, 1])
    if n == 3:
        return trivariate_cdf(u, corr)
    return np.array([mvn_cdf(row, corr, 1e-8) for row in u])
