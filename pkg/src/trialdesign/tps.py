"""Thin-plate spline surfaces with an affine tail and optional smoothing.

Kernels are polyharmonic, ``rho**2 log rho`` in even dimension and ``rho**3``
in odd dimension, both conditionally positive definite of order 2 so an
affine polynomial tail is enough. Inputs are z-scored per coordinate before
distances are taken.

The smoothing parameter is picked by generalized cross-validation when
``lam="auto"``. The fit works in the null space of the polynomial block,
where the penalized system diagonalizes once and every candidate ``lam`` is
cheap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial import Delaunay

from .errors import ValidationError

_GCV_GRID = np.logspace(-12, 2, 141)


def _kernel(rho, d):
    if d % 2 == 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = rho * rho * np.log(rho)
        return np.where(rho > 0, out, 0.0)
    return rho ** 3


def _kernel_grad_factor(rho, d):
    """``phi'(rho) / rho``; the kernel gradient is this times the offset vector."""
    if d % 2 == 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 2.0 * np.log(rho) + 1.0
        return np.where(rho > 0, out, 0.0)
    return 3.0 * rho


@dataclass(frozen=True)
class TpsSurface:
    dim: int
    knots: np.ndarray
    weights: np.ndarray
    poly: np.ndarray
    lam: float
    center: np.ndarray
    scale: np.ndarray

    def _std(self, x):
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.center) / self.scale

    def __call__(self, x) -> np.ndarray:
        """Vectorized evaluation at rows of ``x``."""
        xs = self._std(x)
        zk = (self.knots - self.center) / self.scale
        rho = np.sqrt(((xs[:, None, :] - zk[None, :, :]) ** 2).sum(-1))
        return _kernel(rho, self.dim) @ self.weights + self.poly[0] + xs @ self.poly[1:]

    def gradient(self, x) -> np.ndarray:
        xs = self._std(x)
        zk = (self.knots - self.center) / self.scale
        diff = xs[:, None, :] - zk[None, :, :]
        rho = np.sqrt((diff ** 2).sum(-1))
        fac = _kernel_grad_factor(rho, self.dim) * self.weights[None, :]
        g = np.einsum("bk,bkd->bd", fac, diff) + self.poly[1:][None, :]
        return g / self.scale

    def inside_hull(self, x) -> np.ndarray:
        """True where ``x`` lies inside the convex hull of the knots (no extrapolation)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1:
            return (x[:, 0] >= self.knots[:, 0].min()) & (x[:, 0] <= self.knots[:, 0].max())
        return Delaunay(self._std(self.knots)).find_simplex(self._std(x)) >= 0

    def fitted(self) -> np.ndarray:
        return self(self.knots)


def _validate_sites(sites, values):
    sites = np.asarray(sites, dtype=float)
    if sites.ndim == 1:
        sites = sites[:, None]
    values = np.asarray(values, dtype=float).ravel()
    n, d = sites.shape
    if values.size != n:
        raise ValidationError("need one value per site")
    if n < d + 2:
        raise ValidationError(f"need at least d + 2 = {d + 2} sites, got {n}")
    if not (np.all(np.isfinite(sites)) and np.all(np.isfinite(values))):
        raise ValidationError("sites and values must be finite")
    if np.unique(sites, axis=0).shape[0] != n:
        raise ValidationError("duplicate sites")
    return sites, values


def _gcv_score(e, gy, nlam, n, resid_fixed):
    ratio = nlam / (e + nlam)
    rss = resid_fixed + np.sum((ratio * gy) ** 2)
    trace = np.sum(ratio)
    return n * rss / trace ** 2


def fit_tps(sites, values, lam="auto") -> TpsSurface:
    """Fit a (smoothing) thin-plate spline to ``values`` observed at ``sites``.

    ``lam=0`` interpolates; a positive ``lam`` penalizes bending energy
    (scaled by the number of sites); ``"auto"`` chooses by GCV.
    """
    sites, values = _validate_sites(sites, values)
    n, d = sites.shape
    center = sites.mean(axis=0)
    scale = sites.std(axis=0)
    if np.any(scale == 0):
        raise ValidationError("rank-deficient sites: a coordinate is constant")
    z = (sites - center) / scale
    P = np.column_stack([np.ones(n), z])
    Q, R = np.linalg.qr(P, mode="complete")
    if np.min(np.abs(np.diag(R[: d + 1]))) < 1e-10 * np.sqrt(n):
        raise ValidationError("rank-deficient sites: they lie on a lower-dimensional affine set")
    Q1, Q2 = Q[:, : d + 1], Q[:, d + 1:]
    rho = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(-1))
    K = _kernel(rho, d)
    M = Q2.T @ K @ Q2
    e, V = linalg.eigh(0.5 * (M + M.T))
    e = np.maximum(e, 0.0)
    gy = V.T @ (Q2.T @ values)

    if lam == "auto":
        escale = float(np.mean(e)) if np.mean(e) > 0 else 1.0
        grid = _GCV_GRID * escale
        # only well-conditioned systems are eligible
        floor = 1e-10 * max(e.max(), 1.0)
        grid = grid[e.min() + grid > 2.0 * floor]
        scores = [_gcv_score(e, gy, nl, n, 0.0) for nl in grid]
        nlam = float(grid[int(np.argmin(scores))])
        lam_value = nlam / n
    else:
        lam_value = float(lam)
        if lam_value < 0:
            raise ValidationError("lambda must be non-negative")
        nlam = n * lam_value

    denom = e + nlam
    if np.any(denom <= 1e-10 * max(e.max(), 1.0)):
        raise ValidationError("kernel system is singular; use lam > 0")
    w = Q2 @ (V @ (gy / denom))
    # affine part from the residual, which lies in span(P)
    c = linalg.solve_triangular(R[: d + 1], Q1.T @ (values - K @ w - nlam * w))
    return TpsSurface(dim=d, knots=sites.copy(), weights=w, poly=c, lam=lam_value,
                      center=center, scale=scale)


def eval_tps(surface: TpsSurface, x) -> float:
    return float(surface(np.asarray(x, dtype=float).reshape(1, -1))[0])


def grad_tps(surface: TpsSurface, x) -> np.ndarray:
    """Analytic gradient; the kernel term vanishes at a knot."""
    return surface.gradient(np.asarray(x, dtype=float).reshape(1, -1))[0]
