"""Ground-truth trajectory distances and the pairwise distance-matrix engine.

All point distances are planar Euclidean on raw coordinates. The dynamic
programming kernels keep a single rolling row sized by the shorter input.
"""

from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .errors import ConfigError, DataError, EmptyDatasetError, FormatError
from .trajectory import Dataset, Trajectory

METRIC_TAGS = ("dtw", "sspd", "edr", "hausdorff", "dfrechet")
DEFAULT_EDR_EPSILON = 0.005

_MAGIC = b"TDM1"
_HEADER = struct.Struct("<4sIBd")
_CHUNK = 2048


@dataclass(frozen=True)
class MetricKind:
    tag: str
    edr_epsilon: Optional[float] = None

    def __post_init__(self):
        if self.tag not in METRIC_TAGS:
            raise ConfigError(f"unknown metric {self.tag!r}; expected one of {METRIC_TAGS}")
        if self.tag == "edr":
            eps = DEFAULT_EDR_EPSILON if self.edr_epsilon is None else float(self.edr_epsilon)
            if not (eps > 0 and math.isfinite(eps)):
                raise ConfigError(f"edr_epsilon must be positive, got {eps!r}")
            object.__setattr__(self, "edr_epsilon", eps)
        elif self.edr_epsilon is not None:
            raise ConfigError("edr_epsilon only applies to the edr metric")

    @property
    def code(self):
        return METRIC_TAGS.index(self.tag)

    def __str__(self):
        return f"edr(eps={self.edr_epsilon!r})" if self.tag == "edr" else self.tag


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, nogil=True)
def _pdist(ax, ay, bx, by):
    # hypot avoids underflow of dx*dx for tiny offsets
    return math.hypot(ax - bx, ay - by)


@njit(cache=True, nogil=True)
def _dtw_kernel(a, b):
    # b is the rolling (shorter) axis; DTW is symmetric so the swap is exact
    if b.shape[0] > a.shape[0]:
        a, b = b, a
    n = a.shape[0]
    m = b.shape[0]
    row = np.empty(m)
    acc = 0.0
    for j in range(m):
        acc += _pdist(a[0, 0], a[0, 1], b[j, 0], b[j, 1])
        row[j] = acc
    for i in range(1, n):
        diag = row[0]
        row[0] = row[0] + _pdist(a[i, 0], a[i, 1], b[0, 0], b[0, 1])
        for j in range(1, m):
            up = row[j]
            best = diag
            if up < best:
                best = up
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = _pdist(a[i, 0], a[i, 1], b[j, 0], b[j, 1]) + best
            diag = up
    return row[m - 1]


@njit(cache=True, nogil=True)
def _edr_kernel(a, b, eps):
    if b.shape[0] > a.shape[0]:
        a, b = b, a
    n = a.shape[0]
    m = b.shape[0]
    row = np.empty(m + 1)
    for j in range(m + 1):
        row[j] = j
    for i in range(1, n + 1):
        diag = row[0]
        row[0] = i
        for j in range(1, m + 1):
            up = row[j]
            sub = 0.0 if _pdist(a[i - 1, 0], a[i - 1, 1], b[j - 1, 0], b[j - 1, 1]) <= eps else 1.0
            best = diag + sub
            if up + 1.0 < best:
                best = up + 1.0
            if row[j - 1] + 1.0 < best:
                best = row[j - 1] + 1.0
            row[j] = best
            diag = up
    return row[m]


@njit(cache=True, nogil=True)
def _dfrechet_kernel(a, b):
    if b.shape[0] > a.shape[0]:
        a, b = b, a
    n = a.shape[0]
    m = b.shape[0]
    row = np.empty(m)
    acc = 0.0
    for j in range(m):
        d = _pdist(a[0, 0], a[0, 1], b[j, 0], b[j, 1])
        if d > acc:
            acc = d
        row[j] = acc
    for i in range(1, n):
        diag = row[0]
        d = _pdist(a[i, 0], a[i, 1], b[0, 0], b[0, 1])
        row[0] = d if d > row[0] else row[0]
        for j in range(1, m):
            up = row[j]
            best = diag
            if up < best:
                best = up
            if row[j - 1] < best:
                best = row[j - 1]
            d = _pdist(a[i, 0], a[i, 1], b[j, 0], b[j, 1])
            row[j] = d if d > best else best
            diag = up
    return row[m - 1]


@njit(cache=True, nogil=True)
def _directed_hausdorff(a, b):
    worst = 0.0
    for i in range(a.shape[0]):
        best = np.inf
        for j in range(b.shape[0]):
            d = _pdist(a[i, 0], a[i, 1], b[j, 0], b[j, 1])
            if d < best:
                best = d
        if best > worst:
            worst = best
    return worst


@njit(cache=True, nogil=True)
def _hausdorff_kernel(a, b):
    return max(_directed_hausdorff(a, b), _directed_hausdorff(b, a))


@njit(cache=True, nogil=True)
def _point_segment(px, py, sx, sy, ex, ey):
    vx = ex - sx
    vy = ey - sy
    denom = vx * vx + vy * vy
    if denom == 0.0:
        return _pdist(px, py, sx, sy)
    t = ((px - sx) * vx + (py - sy) * vy) / denom
    if t <= 0.0:
        return _pdist(px, py, sx, sy)
    if t >= 1.0:
        return _pdist(px, py, ex, ey)
    return _pdist(px, py, sx + t * vx, sy + t * vy)


@njit(cache=True, nogil=True)
def _spd(a, b):
    total = 0.0
    for i in range(a.shape[0]):
        if b.shape[0] == 1:
            best = _pdist(a[i, 0], a[i, 1], b[0, 0], b[0, 1])
        else:
            best = np.inf
            for k in range(b.shape[0] - 1):
                d = _point_segment(a[i, 0], a[i, 1], b[k, 0], b[k, 1], b[k + 1, 0], b[k + 1, 1])
                if d < best:
                    best = d
        total += best
    return total / a.shape[0]


@njit(cache=True, nogil=True)
def _sspd_kernel(a, b):
    return 0.5 * (_spd(a, b) + _spd(b, a))


@njit(cache=True, nogil=True)
def _pair_kernel(code, a, b, eps):
    if code == 0:
        return _dtw_kernel(a, b)
    if code == 1:
        return _sspd_kernel(a, b)
    if code == 2:
        return _edr_kernel(a, b, eps)
    if code == 3:
        return _hausdorff_kernel(a, b)
    return _dfrechet_kernel(a, b)


@njit(cache=True, nogil=True)
def _fill_range(code, coords, offsets, n, eps, start, stop, out):
    # locate the (i, j) of flat upper-triangular index `start`
    i = 0
    row_start = 0
    while row_start + (n - 1 - i) <= start:
        row_start += n - 1 - i
        i += 1
    j = i + 1 + (start - row_start)
    for p in range(start, stop):
        a = coords[offsets[i]:offsets[i + 1]]
        b = coords[offsets[j]:offsets[j + 1]]
        out[p] = _pair_kernel(code, a, b, eps)
        j += 1
        if j == n:
            i += 1
            j = i + 1


# ---------------------------------------------------------------------------
# public per-pair functions


def _xy(t):
    arr = t.coords if isinstance(t, Trajectory) else np.asarray(t, dtype=np.float64)
    arr = np.ascontiguousarray(arr, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise DataError("trajectory has no points")
    return arr


def dtw(a, b) -> float:
    """Dynamic time warping with a prefix-accumulated first row and column."""
    return float(_dtw_kernel(_xy(a), _xy(b)))


def sspd(a, b) -> float:
    """Symmetrized segment-path distance."""
    return float(_sspd_kernel(_xy(a), _xy(b)))


def edr(a, b, epsilon=DEFAULT_EDR_EPSILON) -> float:
    """Edit distance on real sequences; two points match iff their distance <= ``epsilon``."""
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ConfigError(f"edr epsilon must be positive, got {epsilon!r}")
    return float(_edr_kernel(_xy(a), _xy(b), float(epsilon)))


def hausdorff(a, b) -> float:
    return float(_hausdorff_kernel(_xy(a), _xy(b)))


def discrete_frechet(a, b) -> float:
    return float(_dfrechet_kernel(_xy(a), _xy(b)))


def point_segment_distance(p, s, e) -> float:
    return float(_point_segment(float(p[0]), float(p[1]), float(s[0]), float(s[1]),
                                float(e[0]), float(e[1])))


def pair_distance(a, b, metric: MetricKind) -> float:
    eps = metric.edr_epsilon if metric.tag == "edr" else 0.0
    return float(_pair_kernel(metric.code, _xy(a), _xy(b), eps))


# ---------------------------------------------------------------------------
# distance matrix


def _pair_count(n):
    return n * (n - 1) // 2


class DistanceMatrix:
    """Symmetric distance store holding only the strict upper triangle.

    ``values`` is row-major: (0,1), (0,2), ..., (0,n-1), (1,2), ...
    """

    def __init__(self, values, metric: MetricKind, id_order):
        ids = np.asarray(id_order, dtype=np.uint64)
        vals = np.ascontiguousarray(values, dtype=np.float64)
        n = ids.shape[0]
        if vals.shape != (_pair_count(n),):
            raise FormatError(f"expected {_pair_count(n)} values for n={n}, got {vals.shape}")
        if vals.size and not (np.all(np.isfinite(vals)) and vals.min() >= 0):
            raise DataError("distance values must be finite and non-negative")
        vals.setflags(write=False)
        self.values = vals
        self.metric = metric
        self.id_order = [int(i) for i in ids]
        self._pos = {tid: k for k, tid in enumerate(self.id_order)}

    @property
    def n(self):
        return len(self.id_order)

    def flat_index(self, i, j):
        if i > j:
            i, j = j, i
        return i * self.n - i * (i + 1) // 2 + (j - i - 1)

    def lookup(self, i, j) -> float:
        """Distance between rows ``i`` and ``j`` (0 on the diagonal)."""
        if i == j:
            return 0.0
        return float(self.values[self.flat_index(i, j)])

    def lookup_ids(self, id_a, id_b) -> float:
        return self.lookup(self._pos[id_a], self._pos[id_b])

    def index_of(self, traj_id):
        return self._pos[traj_id]

    def to_square(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        iu = np.triu_indices(self.n, k=1)
        out[iu] = self.values
        out.T[iu] = self.values
        return out

    def __eq__(self, other):
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return (self.metric == other.metric and self.id_order == other.id_order
                and self.values.tobytes() == other.values.tobytes())

    __hash__ = None

    def __repr__(self):
        return f"DistanceMatrix(n={self.n}, metric={self.metric})"

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        eps = self.metric.edr_epsilon if self.metric.tag == "edr" else 0.0
        buf = io.BytesIO()
        buf.write(_HEADER.pack(_MAGIC, self.n, self.metric.code, eps))
        buf.write(np.asarray(self.id_order, dtype="<u8").tobytes())
        buf.write(self.values.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DistanceMatrix":
        if len(data) < _HEADER.size:
            raise FormatError("distance-matrix file is truncated")
        magic, n, code, eps = _HEADER.unpack_from(data, 0)
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        if code >= len(METRIC_TAGS):
            raise FormatError(f"unknown metric tag {code}")
        expected = _HEADER.size + 8 * n + 8 * _pair_count(n)
        if len(data) != expected:
            raise FormatError(f"distance-matrix file has {len(data)} bytes, expected {expected}")
        tag = METRIC_TAGS[code]
        metric = MetricKind(tag, eps if tag == "edr" else None)
        off = _HEADER.size
        ids = np.frombuffer(data, dtype="<u8", count=n, offset=off)
        values = np.frombuffer(data, dtype="<f8", count=_pair_count(n), offset=off + 8 * n)
        return cls(values.astype(np.float64), metric, ids)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DistanceMatrix":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def write_csv(self, out):
        """Write ``i,j,dist`` rows keyed by trajectory id."""
        out.write("i,j,dist\n")
        ids = self.id_order
        k = 0
        for i in range(self.n):
            for j in range(i + 1, self.n):
                out.write(f"{ids[i]},{ids[j]},{self.values[k]:.17g}\n")
                k += 1


def distance_matrix(ds: Dataset, metric: MetricKind, threads: int = 1) -> DistanceMatrix:
    """All pairwise distances of ``ds`` under ``metric``.

    Pairs are split into fixed-size chunks evaluated on a thread pool; each
    pair is written to its own slot, so the result does not depend on
    ``threads``.
    """
    if len(ds) == 0:
        raise EmptyDatasetError("dataset is empty")
    n = len(ds)
    lengths = np.array([len(t) for t in ds], dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    coords = np.ascontiguousarray(np.concatenate([t.coords for t in ds]))
    total = _pair_count(n)
    out = np.empty(total)
    eps = metric.edr_epsilon if metric.tag == "edr" else 0.0
    code = metric.code

    chunks = [(s, min(s + _CHUNK, total)) for s in range(0, total, _CHUNK)]
    if threads <= 1 or len(chunks) <= 1:
        for s, e in chunks:
            _fill_range(code, coords, offsets, n, eps, s, e, out)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda se: _fill_range(code, coords, offsets, n, eps, se[0], se[1], out),
                          chunks))

    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        iu, ju = np.triu_indices(n, k=1)
        k = int(bad[0])
        raise DataError(
            f"non-finite {metric} distance between trajectories "
            f"{ds[int(iu[k])].id} and {ds[int(ju[k])].id}"
        )
    return DistanceMatrix(out, metric, ds.ids)
