"""Trajectory records, CSV ingestion and the planar grid index.

Coordinates are kept as raw degrees and interpreted on the plane; no geodesic
correction is applied anywhere. A timestamp column is accepted and carried
along but none of the distance functions look at it.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import IO, Iterable, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DataError, DuplicatePointError, EmptyDatasetError, ParseError

HEADER = ("traj_id", "seq", "lon", "lat")


class Point(NamedTuple):
    lon: float
    lat: float
    t: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """An identified, ordered point sequence.

    ``coords`` is an ``(n, 2)`` float64 array of ``(lon, lat)``; ``times`` is
    ``None`` or a length-``n`` array.
    """

    id: int
    coords: np.ndarray
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DataError(f"trajectory {self.id}: coords must have shape (n, 2)")
        if coords.shape[0] == 0:
            raise DataError(f"trajectory {self.id}: no points")
        if not np.all(np.isfinite(coords)):
            raise DataError(f"trajectory {self.id}: non-finite coordinate")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        if self.times is not None:
            times = np.asarray(self.times, dtype=np.float64)
            if times.shape != (coords.shape[0],):
                raise DataError(f"trajectory {self.id}: times length mismatch")
            times.setflags(write=False)
            object.__setattr__(self, "times", times)

    @classmethod
    def from_points(cls, traj_id, points):
        pts = [p if isinstance(p, Point) else Point(*p) for p in points]
        coords = np.array([(p.lon, p.lat) for p in pts], dtype=np.float64).reshape(-1, 2)
        times = None
        if pts and all(p.t is not None for p in pts):
            times = np.array([p.t for p in pts], dtype=np.float64)
        return cls(int(traj_id), coords, times)

    @property
    def points(self):
        if self.times is None:
            return [Point(float(x), float(y)) for x, y in self.coords]
        return [Point(float(x), float(y), float(t)) for (x, y), t in zip(self.coords, self.times)]

    def __len__(self):
        return self.coords.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        if self.id != other.id or not np.array_equal(self.coords, other.coords):
            return False
        if self.times is None or other.times is None:
            return self.times is None and other.times is None
        return np.array_equal(self.times, other.times)

    __hash__ = None


class Dataset:
    """Immutable collection of trajectories with distinct ids.

    Trajectories are kept in ascending id order; that order is the row order
    of every distance matrix built from the dataset.
    """

    def __init__(self, trajectories: Iterable[Trajectory]):
        trajs = sorted(trajectories, key=lambda t: t.id)
        if not trajs:
            raise EmptyDatasetError("dataset contains no trajectories")
        ids = [t.id for t in trajs]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate trajectory id")
        self._trajs = tuple(trajs)
        self._index = {t.id: i for i, t in enumerate(trajs)}
        allc = np.concatenate([t.coords for t in trajs])
        lo = allc.min(axis=0)
        hi = allc.max(axis=0)
        self.bbox = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    @property
    def trajectories(self):
        return self._trajs

    @property
    def ids(self):
        return [t.id for t in self._trajs]

    def index_of(self, traj_id):
        return self._index[traj_id]

    def by_id(self, traj_id):
        return self._trajs[self._index[traj_id]]

    def __len__(self):
        return len(self._trajs)

    def __iter__(self):
        return iter(self._trajs)

    def __getitem__(self, i):
        return self._trajs[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    __hash__ = None


def _parse_number(text, line, name, kind):
    try:
        value = kind(text)
    except ValueError:
        raise ParseError(line, f"non-numeric {name} field {text!r}") from None
    if kind is float and not math.isfinite(value):
        raise ParseError(line, f"non-finite {name} field {text!r}")
    return value


def load_trajectories(source) -> Dataset:
    """Parse trajectory CSV into a :class:`Dataset`.

    ``source`` may be bytes, a binary or text stream, or a filesystem path.
    The header line ``traj_id,seq,lon,lat[,t]`` is optional; line numbers in
    errors count physical lines starting at 1.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            text = fh.read().decode("utf-8")
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data

    groups: dict[int, dict[int, tuple]] = {}
    width = None
    for lineno, row in enumerate(csv.reader(io.StringIO(text, newline="")), start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        row = [f.strip() for f in row]
        if lineno == 1 and tuple(row[:4]) == HEADER:
            if len(row) not in (4, 5) or (len(row) == 5 and row[4] != "t"):
                raise ParseError(lineno, f"unexpected header {','.join(row)!r}")
            width = len(row)
            continue
        if len(row) not in (4, 5) or (width is not None and len(row) != width):
            raise ParseError(lineno, f"expected {width or '4 or 5'} columns, got {len(row)}")
        if width is None:
            width = len(row)
        tid = _parse_number(row[0], lineno, "traj_id", int)
        seq = _parse_number(row[1], lineno, "seq", int)
        if tid < 0 or seq < 0:
            raise ParseError(lineno, "traj_id and seq must be non-negative")
        lon = _parse_number(row[2], lineno, "lon", float)
        lat = _parse_number(row[3], lineno, "lat", float)
        t = _parse_number(row[4], lineno, "t", float) if width == 5 else None
        pts = groups.setdefault(tid, {})
        if seq in pts:
            raise DuplicatePointError(f"line {lineno}: duplicate (traj_id, seq) = ({tid}, {seq})")
        pts[seq] = (lon, lat, t)

    if not groups:
        raise EmptyDatasetError("trajectory CSV contains no rows")
    trajs = []
    for tid, pts in groups.items():
        ordered = [pts[s] for s in sorted(pts)]
        coords = np.array([(p[0], p[1]) for p in ordered], dtype=np.float64)
        times = None if width == 4 else np.array([p[2] for p in ordered], dtype=np.float64)
        trajs.append(Trajectory(tid, coords, times))
    return Dataset(trajs)


def write_trajectories(ds: Dataset, out: IO[str]) -> None:
    """Serialize ``ds`` as trajectory CSV with 17 significant digits."""
    with_time = all(t.times is not None for t in ds)
    out.write(",".join(HEADER + (("t",) if with_time else ())) + "\n")
    for traj in ds:
        for k, (lon, lat) in enumerate(traj.coords):
            fields = [str(traj.id), str(k), "%.17g" % lon, "%.17g" % lat]
            if with_time:
                fields.append("%.17g" % traj.times[k])
            out.write(",".join(fields) + "\n")


def dumps_trajectories(ds: Dataset) -> str:
    buf = io.StringIO()
    write_trajectories(ds, buf)
    return buf.getvalue()


class Grid(NamedTuple):
    bbox: tuple
    cell_size: float
    n_cols: int
    n_rows: int

    @property
    def n_cells(self):
        return self.n_cols * self.n_rows


def make_grid(bbox, cell_size) -> Grid:
    if not cell_size > 0:
        raise ConfigError(f"cell_size must be positive, got {cell_size!r}")
    min_lon, min_lat, max_lon, max_lat = bbox
    n_cols = max(1, math.ceil((max_lon - min_lon) / cell_size))
    n_rows = max(1, math.ceil((max_lat - min_lat) / cell_size))
    return Grid(tuple(bbox), float(cell_size), n_cols, n_rows)


def _axis_index(value, lo, cell_size, count):
    k = math.floor((value - lo) / cell_size)
    if k < -1 or k > count:
        raise DataError(f"coordinate {value!r} lies more than one cell outside the grid")
    return min(max(k, 0), count - 1)


def grid_cell(p, bbox, cell_size) -> int:
    """Row-major cell index of ``p`` in the grid laid over ``bbox``.

    Points on the max edge, and points up to one cell outside the box, are
    clamped to the nearest border cell.
    """
    grid = make_grid(bbox, cell_size)
    lon, lat = p[0], p[1]
    col = _axis_index(lon, grid.bbox[0], grid.cell_size, grid.n_cols)
    row = _axis_index(lat, grid.bbox[1], grid.cell_size, grid.n_rows)
    return col + grid.n_cols * row


def trajectory_cells(traj: Trajectory, grid: Grid) -> list:
    """Cell ids visited by each point of ``traj`` (with multiplicity)."""
    return [grid_cell(p, grid.bbox, grid.cell_size) for p in traj.coords]
