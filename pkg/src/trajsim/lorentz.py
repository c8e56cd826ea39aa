"""Hyperboloid geometry: Lorentz inner product, distance, and the two lifts
from Euclidean embeddings onto H(beta), with their analytic gradients.

Every array function works on the last axis, so the same code serves single
vectors and ``(batch, dim)`` stacks. Index 0 of a hyperbolic vector is the
time-like coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError

SERIES_CUTOFF = 1e-4
MEMBERSHIP_TOL = 1e-6


@dataclass(frozen=True)
class ProjectionConfig:
    beta: float = 1.0
    c: float = 4.0
    norm_clamp: float = 50.0

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ConfigError(f"beta must be positive, got {self.beta!r}")
        if not (self.c >= 1 and math.isfinite(self.c)):
            raise ConfigError(f"c must be >= 1, got {self.c!r}")
        if not self.norm_clamp > 0:
            raise ConfigError(f"norm_clamp must be positive, got {self.norm_clamp!r}")


def membership_residual(h, beta):
    """``|<h,h> + beta|`` scaled by ``max(beta, h0**2)``.

    Rounding in the coordinates perturbs ``<h,h>`` in proportion to ``h0**2``,
    so the residual is measured on that scale.
    """
    h = np.asarray(h, dtype=np.float64)
    self_ip = lorentz_inner(h, h)
    return np.abs(self_ip + beta) / np.maximum(beta, h[..., 0] ** 2)


@dataclass(frozen=True, eq=False)
class HyperbolicPoint:
    coords: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim != 1 or coords.shape[0] < 2:
            raise DimensionError("a hyperbolic point needs at least 2 coordinates")
        if not np.all(np.isfinite(coords)):
            raise DataError("non-finite hyperbolic coordinate")
        if membership_residual(coords, self.beta) > MEMBERSHIP_TOL:
            raise DataError(f"point is not on H({self.beta}): <h,h> = {lorentz_inner(coords, coords)!r}")
        if coords[0] < math.sqrt(self.beta) * (1 - MEMBERSHIP_TOL):
            raise DataError("time-like coordinate below sqrt(beta): point is on the lower sheet")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    def __len__(self):
        return self.coords.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.coords if dtype is None else self.coords.astype(dtype)


def _check_dims(a, b, minimum=1):
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if a.shape[-1] < minimum:
        raise DimensionError(f"need at least {minimum} coordinates")


def lorentz_inner(a, b):
    """``-a0*b0 + sum_i a_i*b_i`` over the last axis."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a, b, minimum=2)
    return -a[..., 0] * b[..., 0] + np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def _unwrap_pair(a, b, beta):
    if isinstance(a, HyperbolicPoint) or isinstance(b, HyperbolicPoint):
        betas = {p.beta for p in (a, b) if isinstance(p, HyperbolicPoint)}
        if beta is not None:
            betas.add(beta)
        if len(betas) > 1:
            raise ConfigError(f"points live on hyperboloids with different beta: {sorted(betas)}")
        a = a.coords if isinstance(a, HyperbolicPoint) else a
        b = b.coords if isinstance(b, HyperbolicPoint) else b
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a, b, minimum=2)
    return a, b


def lorentz_distance(a, b, beta=None):
    """Lorentz distance ``|<a,b>| - beta`` between points of H(beta).

    Evaluated as ``<a-b, a-b> / 2``, which is the same quantity on the
    hyperboloid (``<a,a> = <b,b> = -beta`` and ``<a,b> <= -beta``) but does not
    lose precision to cancellation between the two large products.
    """
    a, b = _unwrap_pair(a, b, beta)
    diff = a - b
    return 0.5 * (np.sum(diff[..., 1:] ** 2, axis=-1) - diff[..., 0] ** 2)


def lorentz_distance_backward(a, b, upstream=1.0):
    """Gradients of ``upstream * lorentz_distance(a, b)`` w.r.t. ``a`` and ``b``."""
    a, b = _unwrap_pair(a, b, None)
    g = a - b
    g[..., 0] = -g[..., 0]
    g = g * np.asarray(upstream, dtype=np.float64)[..., None]
    return g, -g


def euclidean_distance(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(x, y)
    return np.sqrt(np.sum((x - y) ** 2, axis=-1))


def euclidean_distance_backward(x, y, upstream=1.0):
    """Gradients of ``upstream * |x - y|``; coincident points get the zero subgradient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    diff = x - y
    d = np.sqrt(np.sum(diff**2, axis=-1, keepdims=True))
    unit = np.divide(diff, d, out=np.zeros_like(diff), where=d > 0)
    g = unit * np.asarray(upstream, dtype=np.float64)[..., None]
    return g, -g


# ---------------------------------------------------------------------------
# projections


def vanilla_project(x, beta=1.0):
    """Copy ``x`` into dims 1..n and solve dim 0 for membership in H(beta)."""
    x = np.asarray(x, dtype=np.float64)
    h0 = np.sqrt(np.sum(x**2, axis=-1, keepdims=True) + beta)
    return np.concatenate([h0, x], axis=-1)


def vanilla_project_backward(x, beta, upstream):
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    h0 = np.sqrt(np.sum(x**2, axis=-1, keepdims=True) + beta)
    return upstream[..., 1:] + upstream[..., :1] * x / h0


def _sinhc(r):
    """``sinh(r)/r`` with a four-term Taylor series near the origin."""
    r = np.asarray(r, dtype=np.float64)
    small = r < SERIES_CUTOFF
    safe = np.where(small, 1.0, r)
    r2 = r * r
    series = 1.0 + r2 / 6.0 + r2 * r2 / 120.0 + r2 * r2 * r2 / 5040.0
    return np.where(small, series, np.sinh(safe) / safe)


def _sinhc_prime(r):
    """Derivative of ``sinh(r)/r``."""
    r = np.asarray(r, dtype=np.float64)
    small = r < 0.1
    safe = np.where(small, 1.0, r)
    r2 = r * r
    series = r * (1.0 / 3.0 + r2 / 30.0 + r2 * r2 / 840.0 + r2 * r2 * r2 / 45360.0)
    direct = (safe * np.cosh(safe) - np.sinh(safe)) / (safe * safe)
    return np.where(small, series, direct)


def _cosh_parts(x, cfg):
    s = np.sum(x**2, axis=-1, keepdims=True)
    norm = np.sqrt(s)
    if cfg.c == 2:
        r = norm.copy()
    else:
        r = s ** (1.0 / cfg.c)
    clamped = r > cfg.norm_clamp
    r = np.where(clamped, cfg.norm_clamp, r)
    zero = norm == 0
    # q = r / |x|: ratio between the hyperbolic angle and the Euclidean magnitude
    if cfg.c == 2:
        q = np.where(clamped, r / np.where(zero, 1.0, norm), 1.0)
    else:
        q = np.where(zero, 0.0, r / np.where(zero, 1.0, norm))
    return s, norm, r, clamped, zero, q


def cosh_project(x, cfg: ProjectionConfig = ProjectionConfig()):
    """Lift ``x`` onto H(beta) using the hyperbolic angle ``r = (sum x_i^2)^(1/c)``.

    Dim 0 is ``sqrt(beta) cosh(r)``; the spatial part points along ``x`` with
    Euclidean norm ``sqrt(beta) sinh(r)``, so membership holds for every ``c``.
    ``r`` is clamped to ``cfg.norm_clamp``.
    """
    x = np.asarray(x, dtype=np.float64)
    _, _, r, _, _, q = _cosh_parts(x, cfg)
    sb = math.sqrt(cfg.beta)
    h0 = sb * np.cosh(r)
    spatial = (sb * _sinhc(r) * q) * x
    return np.concatenate([h0, spatial], axis=-1)


def cosh_lorentz_distance(x, y, cfg: ProjectionConfig = ProjectionConfig()):
    """Lorentz distance between the cosh lifts of ``x`` and ``y``, from the angles.

    Equals ``lorentz_distance(cosh_project(x), cosh_project(y))`` but is computed
    as ``beta * (2 sinh^2((r_x - r_y)/2) + sinh r_x sinh r_y (1 - cos theta))``,
    so nothing cancels: it stays exact where the hyperbolic coordinates are
    far larger than the distance itself, and only overflows when the distance
    does.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(x, y)
    _, nx, rx, _, zx, _ = _cosh_parts(x, cfg)
    _, ny, ry, _, zy, _ = _cosh_parts(y, cfg)
    ux = np.where(zx, 0.0, x / np.where(zx, 1.0, nx))
    uy = np.where(zy, 0.0, y / np.where(zy, 1.0, ny))
    # 1 - cos(theta) from the chord between unit directions
    one_minus_cos = (0.5 * np.sum((ux - uy) ** 2, axis=-1))
    rx, ry = rx[..., 0], ry[..., 0]
    radial = 2.0 * np.sinh(0.5 * (rx - ry)) ** 2
    with np.errstate(over="ignore", invalid="ignore"):
        angular = np.where(one_minus_cos == 0, 0.0, np.sinh(rx) * np.sinh(ry) * one_minus_cos)
    return cfg.beta * (radial + angular)


def cosh_project_backward(x, cfg: ProjectionConfig, upstream):
    """Vector-Jacobian product of :func:`cosh_project` with ``upstream``.

    At the origin the gradient is taken as its limit for ``c == 2`` and as
    zero otherwise (the derivative does not exist there for ``c > 2``).
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    s, _, r, clamped, zero, q = _cosh_parts(x, cfg)
    sb = math.sqrt(cfg.beta)
    u0 = upstream[..., :1]
    us = upstream[..., 1:]
    g = _sinhc(r)

    s_safe = np.where(zero, 1.0, s)
    r_safe = np.where(r == 0, 1.0, r)
    dr_ds = np.where(clamped | zero, 0.0, r / (cfg.c * s_safe))
    dq_ds = np.where(zero, 0.0, q * (dr_ds / r_safe - 0.5 / s_safe))

    usx = np.sum(us * x, axis=-1, keepdims=True)
    radial = u0 * np.sinh(r) * dr_ds + usx * (_sinhc_prime(r) * dr_ds * q + g * dq_ds)
    grad = sb * (g * q * us + 2.0 * radial * x)
    return np.where(zero, sb * q * us, grad)
