"""Isotropic Gaussian on SO(3): density, Riemannian score, and sampling.

The density with respect to the normalized Haar measure is the truncated
character series

    f(w; s2) = sum_{l=0}^{L} (2l+1) exp(-l(l+1) s2 / 2) sin((l+1/2) w) / sin(w/2)

which is the heat-kernel transition law of the rotational Brownian motion
with angle variance s2 under the <A,B> = trace(A^T B)/2 metric.  The induced
rotation-angle marginal is f(w) (1 - cos w) / pi on [0, pi]; because every
l >= 1 character integrates to zero against the Haar angle weight, the
truncated marginal still integrates to exactly 1 (up to quadrature).

For s2 below SMALL_SIGMA2 the series needs thousands of terms, so the module
switches to the single-image asymptotic form

    f(w; s2) ~ sqrt(2 pi) e^{s2/8} w e^{-w^2/(2 s2)} / (s2^{3/2} sin(w/2))

whose relative error is exponentially small in 1/s2 on [0, pi].

Scores are tangent coefficient vectors at the evaluated rotation (right
perturbation convention, see :mod:`scorefpe.so3`).  The radial slope
d/dw log f is computed by term-wise analytic differentiation of the series;
`score_scale` returns the smooth ratio h(w) = (d/dw log f) / w so callers
never divide by a vanishing angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import so3

# Crossover to the small-variance asymptotic branch.
SMALL_SIGMA2 = 1e-3
# Below this angle the series branch uses its Taylor coefficients.
_OMEGA_TAYLOR = 1e-3

_TABLE_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
_SERIES_CACHE: dict[tuple, tuple] = {}


def adaptive_l_max(sigma2: float) -> int:
    """Truncation order with a relative tail below ~1e-5, capped at 2000."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return int(min(2000, max(10, math.ceil(5.0 / math.sqrt(sigma2)))))


@dataclass(frozen=True)
class IgSo3Params:
    """Evaluated kernel parameters: variance, series order, angle grid size."""

    sigma2: float
    l_max: int
    grid_size: int = 2048

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")
        if self.grid_size < 64:
            raise ValueError("grid_size must be >= 64")

    @classmethod
    def from_sigma2(cls, sigma2: float, grid_size: int = 2048) -> "IgSo3Params":
        return cls(sigma2=float(sigma2), l_max=adaptive_l_max(sigma2), grid_size=grid_size)

    @property
    def small_variance(self) -> bool:
        return self.sigma2 < SMALL_SIGMA2


def _check_omega(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < -1e-12) or np.any(omega > np.pi + 1e-12):
        raise ValueError("omega must lie in [0, pi]")
    return np.clip(omega, 0.0, np.pi)


def _series_data(p: IgSo3Params):
    """(ls, weights, A, B, C) for the truncated series, cached per params.

    A, B, C are the Taylor coefficients of f ~ A + B w^2 + C w^4 near 0.
    """
    key = (p.sigma2, p.l_max)
    hit = _SERIES_CACHE.get(key)
    if hit is not None:
        return hit
    ls = np.arange(p.l_max + 1, dtype=float)
    weights = (2 * ls + 1) * np.exp(-ls * (ls + 1) * p.sigma2 / 2.0)
    a2 = (ls + 0.5) ** 2
    dim = 2 * ls + 1
    A = float(np.sum(weights * dim))
    B = float(np.sum(weights * dim * (1.0 / 24.0 - a2 / 6.0)))
    C = float(np.sum(weights * dim * (7.0 / 5760.0 - a2 / 144.0 + a2 * a2 / 120.0)))
    hit = (ls, weights, A, B, C)
    if len(_SERIES_CACHE) > 4096:
        _SERIES_CACHE.clear()
    _SERIES_CACHE[key] = hit
    return hit


def _f_series(omega: np.ndarray, p: IgSo3Params):
    """f, f', f'' of the truncated series, vectorized over omega."""
    ls, w, A, B, C = _series_data(p)
    om = np.atleast_1d(omega)
    f = np.empty_like(om)
    df = np.empty_like(om)
    d2f = np.empty_like(om)

    small = om < _OMEGA_TAYLOR
    if np.any(small):
        x = om[small]
        f[small] = A + B * x * x + C * x ** 4
        df[small] = 2 * B * x + 4 * C * x ** 3
        d2f[small] = 2 * B + 12 * C * x * x
    bulk = ~small
    if np.any(bulk):
        x = om[bulk][:, None]
        half = ls[None, :] + 0.5
        sin_half = np.sin(0.5 * x)
        one_m_cos = 1.0 - np.cos(x)
        u = np.sin(half * x) / sin_half
        du = (ls[None, :] * np.sin((ls[None, :] + 1.0) * x)
              - (ls[None, :] + 1.0) * np.sin(ls[None, :] * x)) / one_m_cos
        d2u = (ls[None, :] * (ls[None, :] + 1.0)
               * (np.cos((ls[None, :] + 1.0) * x) - np.cos(ls[None, :] * x))
               - du * np.sin(x)) / one_m_cos
        f[bulk] = u @ w
        df[bulk] = du @ w
        d2f[bulk] = d2u @ w
    return f, df, d2f


def _f_small_sigma(omega: np.ndarray, p: IgSo3Params) -> np.ndarray:
    s2 = p.sigma2
    om = np.atleast_1d(omega)
    const = math.sqrt(2 * math.pi) * math.exp(s2 / 8.0) / s2 ** 1.5
    # w / sin(w/2) -> 2 as w -> 0.
    ratio = np.where(om < 1e-8, 2.0, om / np.maximum(np.sin(om / 2.0), 1e-300))
    return const * ratio * np.exp(-om * om / (2.0 * s2))


def angle_density(omega, p: IgSo3Params):
    """Density f(w) with respect to normalized Haar measure, w in [0, pi]."""
    om = _check_omega(omega)
    scalar = np.ndim(omega) == 0
    if p.small_variance:
        out = _f_small_sigma(np.atleast_1d(om), p)
    else:
        out, _, _ = _f_series(np.atleast_1d(om), p)
    return float(out[0]) if scalar else out


def angle_marginal(omega, p: IgSo3Params):
    """Rotation-angle marginal pdf f(w) (1 - cos w) / pi on [0, pi]."""
    om = _check_omega(omega)
    f = angle_density(om, p)
    return f * (1.0 - np.cos(om)) / np.pi


def _slope_small_sigma(omega: np.ndarray, p: IgSo3Params):
    """h = g/w and h' for the asymptotic branch, g = dlog f/dw."""
    s2 = p.sigma2
    om = np.atleast_1d(omega)
    h = np.empty_like(om)
    dh = np.empty_like(om)
    small = om < 1e-3
    x = om[small]
    h[small] = -1.0 / s2 + 1.0 / 12.0 + x * x / 720.0
    dh[small] = x / 360.0
    rest = ~small
    if np.any(rest):
        x = om[rest]
        geom = 1.0 / x - 0.5 / np.tan(x / 2.0)
        g = geom - x / s2
        gp = -1.0 / s2 - 1.0 / (x * x) + 0.25 / np.sin(x / 2.0) ** 2
        h[rest] = g / x
        dh[rest] = (gp - h[rest]) / x
    return h, dh


def _slope_series(omega: np.ndarray, p: IgSo3Params):
    om = np.atleast_1d(omega)
    h = np.empty_like(om)
    dh = np.empty_like(om)
    _, _, A, B, C = _series_data(p)
    small = om < _OMEGA_TAYLOR
    if np.any(small):
        x = om[small]
        c0 = 2.0 * B / A
        c2 = 4.0 * C / A - 2.0 * B * B / (A * A)
        h[small] = c0 + c2 * x * x
        dh[small] = 2.0 * c2 * x
    rest = ~small
    if np.any(rest):
        x = om[rest]
        f, df, d2f = _f_series(x, p)
        # Far-tail guard: the truncated series can lose positivity where f is
        # negligible; fall back to the asymptotic slope there.
        floor = 1e-13 * max(A, 1.0)
        bad = f < floor
        g = df / np.where(bad, 1.0, f)
        gp = d2f / np.where(bad, 1.0, f) - g * g
        hr = g / x
        dhr = (gp - hr) / x
        if np.any(bad):
            hb, dhb = _slope_small_sigma(x[bad], p)
            hr[bad] = hb
            dhr[bad] = dhb
        h[rest] = hr
        dh[rest] = dhr
    return h, dh


def score_scale(omega, p: IgSo3Params):
    """Smooth radial factor h(w) = (d/dw log f) / w; score = h(w) * log(R0^T Rt)."""
    om = _check_omega(omega)
    scalar = np.ndim(omega) == 0
    if p.small_variance:
        h, _ = _slope_small_sigma(np.atleast_1d(om), p)
    else:
        h, _ = _slope_series(np.atleast_1d(om), p)
    return float(h[0]) if scalar else h


def score_scale_deriv(omega, p: IgSo3Params):
    """(h, h') with h as in :func:`score_scale`; needed for loss gradients."""
    om = _check_omega(omega)
    scalar = np.ndim(omega) == 0
    if p.small_variance:
        h, dh = _slope_small_sigma(np.atleast_1d(om), p)
    else:
        h, dh = _slope_series(np.atleast_1d(om), p)
    if scalar:
        return float(h[0]), float(dh[0])
    return h, dh


def log_density_slope(omega, p: IgSo3Params):
    """d/dw log f(w), the score magnitude along the geodesic axis."""
    om = _check_omega(omega)
    return score_scale(om, p) * om


def score(r0: np.ndarray, rt: np.ndarray, p: IgSo3Params) -> np.ndarray:
    """Riemannian gradient of log f(R0^T Rt) with respect to Rt.

    Returned as tangent coefficients at Rt (right perturbation convention).
    Zero at Rt = R0, the mode of the unimodal density.
    """
    v = so3.log_map(np.asarray(r0).T @ np.asarray(rt))
    omega = np.linalg.norm(v)
    return score_scale(omega, p) * v


def score_batch(r0s: np.ndarray, rts: np.ndarray, p: IgSo3Params) -> np.ndarray:
    """Vectorized :func:`score` over matched stacks (M, 3, 3) -> (M, 3)."""
    rel = np.swapaxes(np.asarray(r0s), -1, -2) @ np.asarray(rts)
    v = so3.log_map_batch(rel)
    omega = np.linalg.norm(v, axis=-1)
    return score_scale(omega, p)[:, None] * v


def angle_cdf_table(p: IgSo3Params) -> tuple[np.ndarray, np.ndarray]:
    """Monotone CDF of the angle marginal on a uniform grid, cached."""
    key = (round(p.sigma2, 15), p.l_max, p.grid_size)
    hit = _TABLE_CACHE.get(key)
    if hit is not None:
        return hit
    omegas = np.linspace(0.0, np.pi, p.grid_size)
    pdf = angle_marginal(omegas, p)
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * np.diff(omegas) / 2.0)])
    cdf /= cdf[-1]
    _TABLE_CACHE[key] = (omegas, cdf)
    return omegas, cdf


def sample_angles(p: IgSo3Params, rng: np.random.Generator, n: int) -> np.ndarray:
    """Angles from the marginal via inverse transform on the cached grid."""
    omegas, cdf = angle_cdf_table(p)
    u = rng.random(n)
    return np.interp(u, cdf, omegas)


def sample(r0: np.ndarray, p: IgSo3Params, rng: np.random.Generator,
           n: int | None = None) -> np.ndarray:
    """Draw rotation(s) from the kernel centered at r0.

    Series branch: inverse-CDF angle plus a uniform axis.  Small-variance
    branch: Gaussian tangent draw, exact for the angle marginal to O(sigma2)
    and numerically robust down to sigma2 ~ 1e-16.
    """
    m = 1 if n is None else n
    r0 = np.asarray(r0, dtype=float)
    if p.small_variance:
        v = math.sqrt(p.sigma2) * rng.standard_normal((m, 3))
    else:
        ang = sample_angles(p, rng, m)
        axis = rng.standard_normal((m, 3))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        v = ang[:, None] * axis
    out = r0 @ so3.exp_map(v)
    return out[0] if n is None else out
