"""Triangle-inequality violation statistics over a distance matrix.

For a triple with pairwise distances ``f_ij, f_ik, f_jk`` the excess of the
largest side over the sum of the other two says whether (and by how much)
the triangle inequality fails. ``rvs`` normalizes that excess by the sum of
the two shorter sides.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError, DatasetTooSmallError, DegenerateTripleError
from .metrics import DistanceMatrix

log = logging.getLogger(__name__)

HIST_RANGE = (-1.0, 2.0)
HIST_BINS = 60
_CHUNK = 1 << 16


class TripleDistances(NamedTuple):
    f_ij: float
    f_ik: float
    f_jk: float


def _check_triple(t):
    vals = (t.f_ij, t.f_ik, t.f_jk)
    if not all(math.isfinite(v) and v >= 0 for v in vals):
        raise DataError(f"triple distances must be finite and non-negative: {vals}")


def tvf(t: TripleDistances) -> bool:
    """True iff some side exceeds the sum of the other two."""
    t = TripleDistances(*t)
    _check_triple(t)
    sim_k = t.f_ij - t.f_ik - t.f_jk
    sim_i = t.f_jk - t.f_ij - t.f_ik
    sim_j = t.f_ik - t.f_ij - t.f_jk
    return max(sim_k, sim_i, sim_j) > 0


def rvs(t: TripleDistances) -> float:
    """Relative violation size: ``(longest - rest) / rest``.

    Positive exactly when :func:`tvf` is true. Ties for the longest side are
    resolved in the order ``f_ij``, ``f_jk``, ``f_ik``; the value does not
    depend on the choice.
    """
    t = TripleDistances(*t)
    _check_triple(t)
    if t.f_ij == 0 and t.f_ik == 0 and t.f_jk == 0:
        raise DegenerateTripleError("all three distances are zero")
    return float(rvs_array(np.array([t.f_ij]), np.array([t.f_ik]), np.array([t.f_jk]))[0])


def rvs_array(f_ij, f_ik, f_jk):
    """Vectorized :func:`rvs`; all-zero triples yield NaN, a zero denominator +inf."""
    f_ij = np.asarray(f_ij, dtype=np.float64)
    f_ik = np.asarray(f_ik, dtype=np.float64)
    f_jk = np.asarray(f_jk, dtype=np.float64)
    ij_max = (f_ij >= f_jk) & (f_ij >= f_ik)
    jk_max = ~ij_max & (f_jk >= f_ik)
    longest = np.where(ij_max, f_ij, np.where(jk_max, f_jk, f_ik))
    rest = np.where(ij_max, f_ik + f_jk, np.where(jk_max, f_ij + f_ik, f_ij + f_jk))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = (longest - rest) / rest
    out = np.where((rest == 0) & (longest > 0), np.inf, out)
    return np.where((rest == 0) & (longest == 0), np.nan, out)


@dataclass
class ViolationStats:
    sampled: int
    violating: int
    degenerate: int
    rv: float
    arvs: float
    hist_edges: np.ndarray = field(repr=False)
    hist_counts: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, ViolationStats):
            return NotImplemented
        same_float = lambda a, b: a == b or (math.isnan(a) and math.isnan(b))
        return (self.sampled == other.sampled and self.violating == other.violating
                and self.degenerate == other.degenerate and same_float(self.rv, other.rv)
                and same_float(self.arvs, other.arvs)
                and np.array_equal(self.hist_edges, other.hist_edges)
                and np.array_equal(self.hist_counts, other.hist_counts))


def rvs_histogram(values, bins=HIST_BINS, value_range=HIST_RANGE):
    """Counts over ``bins`` equal bins; out-of-range values land in the edge bins."""
    lo, hi = value_range
    edges = np.linspace(lo, hi, bins + 1)
    vals = np.asarray(values, dtype=np.float64)
    vals = vals[~np.isnan(vals)]
    idx = np.floor((np.clip(vals, lo, hi) - lo) / (hi - lo) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    return edges, np.bincount(idx, minlength=bins)


def _flat(i, j, n):
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def triple_distances(m: DistanceMatrix, triples):
    """Gather ``(f_ij, f_ik, f_jk)`` arrays for sorted index triples ``i < j < k``."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    i, j, k = t[:, 0], t[:, 1], t[:, 2]
    v = m.values
    n = m.n
    return v[_flat(i, j, n)], v[_flat(i, k, n)], v[_flat(j, k, n)]


def draw_triples(n, count, seed):
    """``count`` uniformly random sorted triples of distinct indices in ``[0, n)``."""
    if n < 3:
        raise DatasetTooSmallError(f"need at least 3 trajectories, got {n}")
    rng = np.random.default_rng(seed)
    a = rng.integers(0, n, size=count)
    b = rng.integers(0, n - 1, size=count)
    c = rng.integers(0, n - 2, size=count)
    b = b + (b >= a)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.sort(np.stack([a, b, c], axis=1), axis=1)


def all_triples(n):
    """Every sorted triple of ``range(n)`` in lexicographic order."""
    if n < 3:
        raise DatasetTooSmallError(f"need at least 3 trajectories, got {n}")
    blocks = []
    for i in range(n - 2):
        jj, kk = np.triu_indices(n - i - 1, k=1)
        blk = np.empty((jj.shape[0], 3), dtype=np.int64)
        blk[:, 0] = i
        blk[:, 1] = jj + i + 1
        blk[:, 2] = kk + i + 1
        blocks.append(blk)
    return np.concatenate(blocks)


def _triple_rvs(m, triples, threads):
    chunks = [triples[s:s + _CHUNK] for s in range(0, triples.shape[0], _CHUNK)]
    work = lambda ch: rvs_array(*triple_distances(m, ch))
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(ch) for ch in chunks]
    return np.concatenate(parts) if parts else np.empty(0)


def summarize(rvs_values) -> ViolationStats:
    values = np.asarray(rvs_values, dtype=np.float64)
    degenerate = int(np.count_nonzero(np.isnan(values)))
    if degenerate:
        log.warning("%d all-zero triples excluded from violation statistics", degenerate)
    valid = values[~np.isnan(values)]
    violating = valid[valid > 0]
    sampled = int(valid.shape[0])
    rv = violating.shape[0] / sampled if sampled else float("nan")
    arvs = float(np.sum(violating) / violating.shape[0]) if violating.shape[0] else 0.0
    edges, counts = rvs_histogram(valid)
    return ViolationStats(sampled, int(violating.shape[0]), degenerate, float(rv), arvs, edges, counts)


def sample_violations(m: DistanceMatrix, count=None, seed=0, exhaustive=False, threads=1) -> ViolationStats:
    """RV, ARVS and the RVS histogram over random (or all) index triples.

    Triples are drawn up front from a seeded generator, so the result depends
    only on ``seed`` and ``count``, never on ``threads``.
    """
    if m.n < 3:
        raise DatasetTooSmallError(f"need at least 3 trajectories, got {m.n}")
    if exhaustive:
        triples = all_triples(m.n)
    else:
        if count is None or count < 1:
            raise DataError("count must be >= 1 unless exhaustive")
        triples = draw_triples(m.n, int(count), seed)
    return summarize(_triple_rvs(m, triples, threads))


def violating_triples(m: DistanceMatrix, count=None, seed=0, exhaustive=False):
    """The subset of sampled (or all) triples whose distances violate the triangle inequality."""
    triples = all_triples(m.n) if exhaustive else draw_triples(m.n, int(count), seed)
    values = _triple_rvs(m, triples, 1)
    return triples[values > 0]


def _pairwise(d_pred, i, j):
    if isinstance(d_pred, DistanceMatrix):
        out = np.zeros(i.shape[0])
        ne = i != j
        lo, hi = np.minimum(i, j)[ne], np.maximum(i, j)[ne]
        out[ne] = d_pred.values[_flat(lo, hi, d_pred.n)]
        return out
    if isinstance(d_pred, np.ndarray):
        return d_pred[i, j]
    return np.asarray(d_pred(i, j), dtype=np.float64)


def rvs_of_predicted(m_true: DistanceMatrix, d_pred, triples):
    """Paired ``(true RVS, predicted RVS)`` arrays over violating ``triples``.

    ``d_pred`` is a :class:`DistanceMatrix`, a square array, or a callable
    taking two index arrays and returning the predicted distances.
    """
    t = np.sort(np.asarray(triples, dtype=np.int64).reshape(-1, 3), axis=1)
    true_rvs = rvs_array(*triple_distances(m_true, t))
    if not np.all(true_rvs > 0):
        raise DataError("rvs_of_predicted expects triples that violate the triangle inequality")
    i, j, k = t[:, 0], t[:, 1], t[:, 2]
    pred = rvs_array(_pairwise(d_pred, i, j), _pairwise(d_pred, i, k), _pairwise(d_pred, j, k))
    return true_rvs, pred
