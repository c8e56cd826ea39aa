"""Per-pair blending of Lorentz and Euclidean embedding distances.

Each trajectory carries two factor vectors. The Lorentz share of a pair is
``s(u) / (s(u) + s(v))`` where ``u`` and ``v`` are the dot products of the
Lorentz and Euclidean factors and ``s`` is softplus, which keeps the share
strictly inside (0, 1) whatever the signs of the dot products.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import DimensionError
from .lorentz import (
    ProjectionConfig,
    cosh_project,
    cosh_project_backward,
    euclidean_distance,
    euclidean_distance_backward,
    lorentz_distance,
    lorentz_distance_backward,
)


@dataclass(frozen=True, eq=False)
class FactorEmbedding:
    v_lo: np.ndarray
    v_eu: np.ndarray

    def __post_init__(self):
        v_lo = np.asarray(self.v_lo, dtype=np.float64)
        v_eu = np.asarray(self.v_eu, dtype=np.float64)
        if v_lo.shape != v_eu.shape:
            raise DimensionError(f"factor halves differ in shape: {v_lo.shape} vs {v_eu.shape}")
        object.__setattr__(self, "v_lo", v_lo)
        object.__setattr__(self, "v_eu", v_eu)

    @classmethod
    def from_vector(cls, v):
        """Split a ``2m`` vector into its Lorentz (first half) and Euclidean halves."""
        v = np.asarray(v, dtype=np.float64)
        m = v.shape[-1] // 2
        return cls(v[..., :m], v[..., m:2 * m])


class FusionPair(NamedTuple):
    alpha_lo: float
    d_lo: float
    d_eu: float
    d_fu: float


def softplus(t):
    return np.logaddexp(0.0, t)


def _dot(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"factor dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return np.sum(a * b, axis=-1)


# nearest doubles inside (0, 1): the ratio can round onto either endpoint
_ALPHA_MIN = np.finfo(np.float64).tiny
_ALPHA_MAX = np.nextafter(1.0, 0.0)
# below this, softplus(t) equals exp(t) to double precision
_TAIL = -30.0


def _log_softplus(t):
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(t < _TAIL, t, np.log(softplus(np.maximum(t, _TAIL))))


def _sigmoid_over_softplus(t):
    t = np.asarray(t, dtype=np.float64)
    safe = np.maximum(t, _TAIL)
    return np.where(t < _TAIL, 1.0, expit(safe) / softplus(safe))


def alpha_from_dots(u, v):
    """``s(u) / (s(u) + s(v))``, evaluated as a logistic of the log-ratio."""
    alpha = expit(_log_softplus(u) - _log_softplus(v))
    return np.clip(alpha, _ALPHA_MIN, _ALPHA_MAX)


def alpha_from_dots_backward(u, v):
    """``(d alpha/du, d alpha/dv)``."""
    a = expit(_log_softplus(u) - _log_softplus(v))
    w = a * (1.0 - a)
    return _sigmoid_over_softplus(u) * w, -_sigmoid_over_softplus(v) * w


def alpha_lo(a: FactorEmbedding, b: FactorEmbedding):
    """Lorentz share of the fused distance for the pair ``(a, b)``."""
    return alpha_from_dots(_dot(a.v_lo, b.v_lo), _dot(a.v_eu, b.v_eu))


def fuse(alpha, d_lo, d_eu):
    return alpha * d_lo + (1.0 - alpha) * d_eu


def fusion_distance(xa, xb, fa: FactorEmbedding, fb: FactorEmbedding,
                    cfg: ProjectionConfig = ProjectionConfig()) -> FusionPair:
    """Fused distance between two Euclidean embeddings, O(dim) per pair."""
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    d_eu = euclidean_distance(xa, xb)
    d_lo = lorentz_distance(cosh_project(xa, cfg), cosh_project(xb, cfg))
    alpha = alpha_lo(fa, fb)
    return FusionPair(float(alpha), float(d_lo), float(d_eu), float(fuse(alpha, d_lo, d_eu)))


class FusionGrads(NamedTuple):
    xa: np.ndarray
    xb: np.ndarray
    fa: FactorEmbedding
    fb: FactorEmbedding


def fused_backward_arrays(xa, xb, la, lb, ea, eb, cfg, upstream):
    """Batched forward + backward of the fused distance.

    Arrays carry pairs on the leading axis. Returns ``(d_fu, grads)`` with
    ``grads = (g_xa, g_xb, g_la, g_lb, g_ea, g_eb)``.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    ha = cosh_project(xa, cfg)
    hb = cosh_project(xb, cfg)
    d_lo = lorentz_distance(ha, hb)
    d_eu = euclidean_distance(xa, xb)
    u = _dot(la, lb)
    v = _dot(ea, eb)
    alpha = alpha_from_dots(u, v)
    d_fu = fuse(alpha, d_lo, d_eu)

    da_du, da_dv = alpha_from_dots_backward(u, v)
    g_alpha = upstream * (d_lo - d_eu)
    gu = (g_alpha * da_du)[..., None]
    gv = (g_alpha * da_dv)[..., None]
    gha, ghb = lorentz_distance_backward(ha, hb, upstream * alpha)
    gxa_e, gxb_e = euclidean_distance_backward(xa, xb, upstream * (1.0 - alpha))
    g_xa = cosh_project_backward(xa, cfg, gha) + gxa_e
    g_xb = cosh_project_backward(xb, cfg, ghb) + gxb_e
    return d_fu, (g_xa, g_xb, gu * lb, gu * la, gv * eb, gv * ea)


def fusion_backward(xa, xb, fa: FactorEmbedding, fb: FactorEmbedding,
                    cfg: ProjectionConfig = ProjectionConfig(), upstream=1.0) -> FusionGrads:
    """Gradients of ``upstream * d_fu`` w.r.t. both embeddings and both factor pairs."""
    _, (g_xa, g_xb, g_la, g_lb, g_ea, g_eb) = fused_backward_arrays(
        np.asarray(xa, dtype=np.float64), np.asarray(xb, dtype=np.float64),
        fa.v_lo, fb.v_lo, fa.v_eu, fb.v_eu, cfg, upstream)
    return FusionGrads(g_xa, g_xb, FactorEmbedding(g_la, g_ea), FactorEmbedding(g_lb, g_eb))
