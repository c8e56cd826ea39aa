"""Synthetic datasets with and without triangle-inequality violations.

The violating generator perturbs the three-trajectory comb of the classic
DTW counterexample: straight vertical runs next to zig-zags that touch them
at a single point. Seed 0 with ``n = 3`` returns that counterexample exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DatasetTooSmallError, GenerationError
from .metrics import MetricKind, distance_matrix
from .trajectory import Dataset, Trajectory
from .violation import sample_violations

EXAMPLE_TRAJECTORIES = (
    ((0.0, 0.0), (0.0, 1.0), (0.0, 3.0)),
    ((2.0, 0.0), (0.0, 1.0), (2.0, 3.0)),
    ((3.0, 0.0), (3.0, 1.0), (4.0, 3.0), (5.0, 3.0)),
)
MIN_RV = 0.05
MAX_RETRIES = 10
_EXHAUSTIVE_LIMIT = 2_000_000


def example_dataset() -> Dataset:
    return Dataset(Trajectory.from_points(i, pts) for i, pts in enumerate(EXAMPLE_TRAJECTORIES))


def _comb(rng, center):
    """One randomized comb: a vertical run whose points may swing sideways."""
    m = int(rng.integers(3, 7))
    scale = rng.uniform(0.6, 1.6)
    steps = rng.uniform(0.5, 2.0, size=m) * scale
    steps[0] = 0.0
    ys = center[1] + np.cumsum(steps)
    xs = np.full(m, center[0] + rng.normal(0.0, 0.3))
    kind = rng.integers(0, 3)
    if kind == 1:
        # zig-zag: alternate points swing out by a common amplitude
        amp = rng.choice((-1.0, 1.0)) * rng.uniform(1.0, 3.0) * scale
        xs[1 - int(rng.integers(0, 2))::2] += amp
    elif kind == 2:
        # drift: the tail bends away, as in the four-point member of the comb
        xs += np.concatenate([[0.0], np.cumsum(rng.uniform(0.0, 1.2, size=m - 1))]) * scale
    xs += rng.normal(0.0, 0.05, size=m)
    return np.column_stack([xs, ys])


def _motif(rng, center):
    """The three-comb counterexample, scaled, shifted and lightly jittered.

    DTW scales linearly and ignores translation, so the copy keeps its
    violation (excess 2 on distances 4, 9, 15) up to the jitter.
    """
    scale = rng.uniform(0.6, 1.6)
    out = []
    for pts in EXAMPLE_TRAJECTORIES:
        pts = np.asarray(pts) * scale + center
        out.append(pts + rng.normal(0.0, 0.02 * scale, size=pts.shape))
    return out


def _violating_candidate(n, seed):
    rng = np.random.default_rng(seed)
    trajs = []
    if seed == 0:
        trajs = [Trajectory.from_points(i, pts) for i, pts in enumerate(EXAMPLE_TRAJECTORIES[:n])]
    n_groups = max(1, int(round(math.sqrt(n) / 2)))
    centers = rng.uniform(0.0, 4.0 * n_groups, size=(n_groups, 2))
    if seed != 0:
        # each group opens with a copy of the motif
        for center in centers:
            for pts in _motif(rng, center):
                if len(trajs) < n:
                    trajs.append(Trajectory(len(trajs), pts))
    for tid in range(len(trajs), n):
        center = centers[int(rng.integers(0, n_groups))]
        trajs.append(Trajectory(tid, _comb(rng, center)))
    return Dataset(trajs)


def _dtw_rv(ds, seed):
    m = distance_matrix(ds, MetricKind("dtw"))
    if math.comb(len(ds), 3) <= _EXHAUSTIVE_LIMIT:
        return sample_violations(m, exhaustive=True).rv
    return sample_violations(m, count=200_000, seed=seed).rv


def gen_violating_dataset(n, seed) -> Dataset:
    """``n`` comb-like trajectories whose DTW matrix has RV >= 0.05.

    A candidate that misses the target is regenerated from ``seed + 1``,
    ``seed + 2``, ... up to ten times.
    """
    if n < 3:
        raise DatasetTooSmallError(f"need n >= 3, got {n}")
    best = 0.0
    for attempt in range(MAX_RETRIES + 1):
        ds = _violating_candidate(n, seed + attempt)
        rv = _dtw_rv(ds, seed)
        if rv >= MIN_RV:
            return ds
        best = max(best, rv)
    raise GenerationError(f"DTW violation ratio stayed below {MIN_RV} (best {best:.4f})")


def gen_metric_dataset(n, seed) -> Dataset:
    """``n`` single-point trajectories: every metric reduces to point distance."""
    if n < 3:
        raise DatasetTooSmallError(f"need n >= 3, got {n}")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 10.0, size=(n, 2))
    return Dataset(Trajectory(i, pts[i:i + 1]) for i in range(n))
