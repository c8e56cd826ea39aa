"""Desk-scale embedding trainer.

Each trajectory is encoded to one row ``[x | v_lo | v_eu]`` of width
``embed_dim + 2 * factor_dim``. Two encoders exist: ``lookup`` keeps one
parameter row per training trajectory; ``gridmean`` keeps one row per
occupied grid cell and averages the rows of the cells a trajectory visits.
Both are linear in the parameter table, so encoding is a sparse matrix
product and the backward pass is its transpose.

Training fits the chosen mode's embedding distance to ground truth divided
by its mean, with plain SGD plus momentum and hand-written gradients.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .errors import ConfigError, DataError, DivergenceError, FormatError, UnseenTrajectoryError
from .fusion import FactorEmbedding, alpha_from_dots, fused_backward_arrays
from .lorentz import (
    ProjectionConfig,
    cosh_project,
    cosh_project_backward,
    euclidean_distance,
    euclidean_distance_backward,
    lorentz_distance,
    lorentz_distance_backward,
    vanilla_project,
    vanilla_project_backward,
)
from .metrics import DistanceMatrix
from .trajectory import Dataset, Grid, Trajectory, make_grid, trajectory_cells

log = logging.getLogger(__name__)

MODES = ("original", "lh-vanilla", "lh-cosh", "fusion-dist")
LOSSES = ("mse", "mae")
ENCODERS = ("lookup", "gridmean")
MOMENTUM = 0.9
INIT_SCALE = 0.05

_MAGIC = b"LHM1"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderKind:
    tag: str = "lookup"
    grid_cell_size: Optional[float] = None
    cell_embed_dim: Optional[int] = None

    def __post_init__(self):
        if self.tag not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.tag!r}; expected one of {ENCODERS}")
        if self.tag == "gridmean":
            if self.grid_cell_size is None or not self.grid_cell_size > 0:
                raise ConfigError("gridmean encoder needs a positive grid_cell_size")
            if self.cell_embed_dim is not None and self.cell_embed_dim <= 0:
                raise ConfigError("cell_embed_dim must be positive")


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int = 32
    factor_dim: int = 8
    beta: float = 1.0
    c: float = 4.0
    mode: str = "fusion-dist"
    loss: str = "mse"
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_pairs: int = 256
    neighbors_per_anchor: int = 10
    random_pairs_per_anchor: int = 10
    seed: int = 0
    encoder: EncoderKind = field(default_factory=EncoderKind)
    norm_clamp: float = 50.0
    # The alpha gate is bilinear in two factor vectors that start near zero,
    # so its gradient is tiny; the factor columns get a larger step size.
    factor_lr_scale: float = 150.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        for name in ("embed_dim", "factor_dim", "epochs", "batch_pairs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("neighbors_per_anchor", "random_pairs_per_anchor"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.neighbors_per_anchor + self.random_pairs_per_anchor == 0:
            raise ConfigError("each anchor needs at least one neighbor or random pair")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be positive")
        if not (self.factor_lr_scale > 0 and math.isfinite(self.factor_lr_scale)):
            raise ConfigError("factor_lr_scale must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        self.projection  # validates beta, c, norm_clamp
        enc = self.encoder
        if enc.tag == "gridmean" and enc.cell_embed_dim not in (None, self.row_width):
            raise ConfigError(
                f"cell_embed_dim must equal embed_dim + 2*factor_dim = {self.row_width}")

    @property
    def projection(self):
        return ProjectionConfig(self.beta, self.c, self.norm_clamp)

    @property
    def row_width(self):
        return self.embed_dim + 2 * self.factor_dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["encoder"] = EncoderKind(**d.get("encoder", {}))
        return cls(**d)


class EmbeddingModel:
    """Parameter table plus everything needed to encode trajectories.

    ``keys`` name the table rows: trajectory ids for ``lookup``, grid cell
    ids for ``gridmean``.
    """

    def __init__(self, config: TrainConfig, table, keys, mu=1.0, grid: Optional[Grid] = None):
        self.config = config
        self.table = np.ascontiguousarray(table, dtype=np.float64)
        self.keys = [int(k) for k in keys]
        self.mu = float(mu)
        self.grid = grid
        self._row = {k: i for i, k in enumerate(self.keys)}
        if self.table.shape != (len(self.keys), config.row_width):
            raise FormatError(f"table shape {self.table.shape} does not match "
                              f"{len(self.keys)} rows x {config.row_width}")
        if not self.mu > 0:
            raise DataError("normalization constant mu must be positive")
        if config.encoder.tag == "gridmean" and grid is None:
            raise ConfigError("gridmean model needs a grid")

    @property
    def mode(self):
        return self.config.mode

    # -- encoding ------------------------------------------------------------

    def _weights(self, traj: Trajectory):
        if self.config.encoder.tag == "lookup":
            row = self._row.get(traj.id)
            if row is None:
                raise UnseenTrajectoryError(
                    f"trajectory {traj.id} was not in the training set (lookup encoder is transductive)")
            return [row], [1.0]
        counts: dict[int, int] = {}
        for cell in trajectory_cells(traj, self.grid):
            row = self._row.get(cell)
            if row is not None:
                counts[row] = counts.get(row, 0) + 1
        if not counts:
            raise UnseenTrajectoryError(f"trajectory {traj.id} visits no cell seen in training")
        total = sum(counts.values())
        rows = sorted(counts)
        return rows, [counts[r] / total for r in rows]

    def encoding_matrix(self, trajs) -> sparse.csr_matrix:
        """Sparse ``(len(trajs), n_rows)`` matrix with ``encoded = W @ table``."""
        indptr = [0]
        indices = []
        data = []
        for t in trajs:
            rows, w = self._weights(t)
            indices.extend(rows)
            data.extend(w)
            indptr.append(len(indices))
        return sparse.csr_matrix((np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64),
                                  np.array(indptr, dtype=np.int64)),
                                 shape=(len(indptr) - 1, len(self.keys)))

    def encode_rows(self, trajs) -> np.ndarray:
        return np.asarray(self.encoding_matrix(trajs) @ self.table)

    def encode(self, traj: Trajectory):
        """``(x, FactorEmbedding)`` for one trajectory."""
        row = self.encode_rows([traj])[0]
        d, m = self.config.embed_dim, self.config.factor_dim
        return row[:d], FactorEmbedding(row[d:d + m], row[d + m:d + 2 * m])

    # -- serialization -----------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = {"config": self.config.to_dict()}
        if self.grid is not None:
            meta["grid"] = {"bbox": list(self.grid.bbox), "cell_size": self.grid.cell_size}
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        buf = io.BytesIO()
        buf.write(struct.pack("<4sII", _MAGIC, _FORMAT_VERSION, len(blob)))
        buf.write(blob)
        buf.write(struct.pack("<dII", self.mu, self.table.shape[0], self.table.shape[1]))
        buf.write(np.asarray(self.keys, dtype="<u8").tobytes())
        buf.write(self.table.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmbeddingModel":
        try:
            magic, version, blob_len = struct.unpack_from("<4sII", data, 0)
            if magic != _MAGIC:
                raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
            if version != _FORMAT_VERSION:
                raise FormatError(f"unsupported model format version {version}")
            off = 12
            meta = json.loads(data[off:off + blob_len].decode("utf-8"))
            off += blob_len
            mu, rows, cols = struct.unpack_from("<dII", data, off)
            off += 16
            keys = np.frombuffer(data, dtype="<u8", count=rows, offset=off)
            off += 8 * rows
            table = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
            off += 8 * rows * cols
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"corrupt model file: {exc}") from None
        if off != len(data):
            raise FormatError("trailing bytes after model payload")
        config = TrainConfig.from_dict(meta["config"])
        grid = None
        if "grid" in meta:
            grid = make_grid(tuple(meta["grid"]["bbox"]), meta["grid"]["cell_size"])
        return cls(config, table.astype(np.float64), keys, mu, grid)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def init_model(ds: Dataset, cfg: TrainConfig) -> EmbeddingModel:
    """Fresh model with parameters i.i.d. uniform in [-0.05, 0.05]."""
    if len(ds) == 0:
        raise DataError("dataset is empty")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    grid = None
    if cfg.encoder.tag == "lookup":
        keys = ds.ids
    else:
        grid = make_grid(ds.bbox, cfg.encoder.grid_cell_size)
        keys = sorted({c for t in ds for c in trajectory_cells(t, grid)})
    table = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(len(keys), cfg.row_width))
    return EmbeddingModel(cfg, table, keys, 1.0, grid)


# ---------------------------------------------------------------------------
# mode distances on encoded rows


def _split(rows, cfg):
    d, m = cfg.embed_dim, cfg.factor_dim
    return rows[..., :d], rows[..., d:d + m], rows[..., d + m:d + 2 * m]


def mode_distance(mode, cfg: TrainConfig, ra, rb, alpha=None):
    """Distance between encoded rows ``ra`` and ``rb`` (broadcast over pairs).

    ``alpha`` overrides the learned Lorentz share in ``fusion-dist`` mode.
    """
    xa, la, ea = _split(ra, cfg)
    xb, lb, eb = _split(rb, cfg)
    if mode == "original":
        return euclidean_distance(xa, xb)
    if mode == "lh-vanilla":
        return lorentz_distance(vanilla_project(xa, cfg.beta), vanilla_project(xb, cfg.beta))
    proj = cfg.projection
    d_lo = lorentz_distance(cosh_project(xa, proj), cosh_project(xb, proj))
    if mode == "lh-cosh":
        return d_lo
    if mode != "fusion-dist":
        raise ConfigError(f"unknown mode {mode!r}")
    if alpha is None:
        alpha = alpha_from_dots(np.sum(la * lb, axis=-1), np.sum(ea * eb, axis=-1))
    d_eu = euclidean_distance(xa, xb)
    return alpha * d_lo + (1.0 - alpha) * d_eu


def mode_distance_backward(mode, cfg: TrainConfig, ra, rb, upstream):
    """Gradients of ``upstream * mode_distance`` w.r.t. ``ra`` and ``rb``."""
    d = cfg.embed_dim
    xa, la, ea = _split(ra, cfg)
    xb, lb, eb = _split(rb, cfg)
    ga = np.zeros_like(ra)
    gb = np.zeros_like(rb)
    if mode == "original":
        ga[..., :d], gb[..., :d] = euclidean_distance_backward(xa, xb, upstream)
    elif mode == "lh-vanilla":
        ha = vanilla_project(xa, cfg.beta)
        hb = vanilla_project(xb, cfg.beta)
        gha, ghb = lorentz_distance_backward(ha, hb, upstream)
        ga[..., :d] = vanilla_project_backward(xa, cfg.beta, gha)
        gb[..., :d] = vanilla_project_backward(xb, cfg.beta, ghb)
    elif mode == "lh-cosh":
        proj = cfg.projection
        ha = cosh_project(xa, proj)
        hb = cosh_project(xb, proj)
        gha, ghb = lorentz_distance_backward(ha, hb, upstream)
        ga[..., :d] = cosh_project_backward(xa, proj, gha)
        gb[..., :d] = cosh_project_backward(xb, proj, ghb)
    else:
        _, grads = fused_backward_arrays(xa, xb, la, lb, ea, eb, cfg.projection, upstream)
        g_xa, g_xb, g_la, g_lb, g_ea, g_eb = grads
        m = cfg.factor_dim
        ga[..., :d], gb[..., :d] = g_xa, g_xb
        ga[..., d:d + m], gb[..., d:d + m] = g_la, g_lb
        ga[..., d + m:d + 2 * m], gb[..., d + m:d + 2 * m] = g_ea, g_eb
    return ga, gb


def model_distance(model: EmbeddingModel, ti: Trajectory, tj: Trajectory, alpha=None) -> float:
    """Predicted distance in normalized units (ground truth / mu)."""
    rows = model.encode_rows([ti, tj])
    return float(mode_distance(model.mode, model.config, rows[0], rows[1], alpha))


def _loss_terms(kind, pred, target):
    diff = pred - target
    if kind == "mse":
        return diff * diff, 2.0 * diff
    return np.abs(diff), np.sign(diff)


def pair_loss(model: EmbeddingModel, ds: Dataset, gt: DistanceMatrix, pairs):
    """Per-pair loss of the current parameters on index ``pairs`` of ``ds``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    rows = model.encode_rows(ds.trajectories)
    gidx = _gt_index(ds, gt)
    target = _gt_values(gt, gidx[pairs[:, 0]], gidx[pairs[:, 1]]) / model.mu
    pred = mode_distance(model.mode, model.config, rows[pairs[:, 0]], rows[pairs[:, 1]])
    return _loss_terms(model.config.loss, pred, target)[0]


def _gt_index(ds, gt):
    try:
        return np.array([gt.index_of(t.id) for t in ds], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"ground-truth matrix has no row for trajectory {exc.args[0]}") from None


def _gt_values(gt, i, j):
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    out = np.zeros(lo.shape[0])
    ne = lo != hi
    n = gt.n
    out[ne] = gt.values[lo[ne] * n - lo[ne] * (lo[ne] + 1) // 2 + (hi[ne] - lo[ne] - 1)]
    return out


def nearest_neighbors(square, k):
    """Per-row indices of the ``k`` smallest off-diagonal entries (ties by index)."""
    n = square.shape[0]
    k = min(k, n - 1)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        order = np.lexsort((np.arange(n), square[i]))
        out[i] = order[order != i][:k]
    return out


def batch_loss_grad(cfg: TrainConfig, table, W, li, ri, target, WT=None, perm=None):
    """Summed pair loss of one batch and the gradient of its mean w.r.t. ``table``.

    ``W`` maps table rows to encoded trajectories; ``li``/``ri`` index encoded
    rows. ``perm`` (lookup encoder) replaces the sparse products by indexing.
    """
    rows = table[perm] if perm is not None else np.asarray(W @ table)
    pred = mode_distance(cfg.mode, cfg, rows[li], rows[ri])
    losses, dloss = _loss_terms(cfg.loss, pred, target)
    ga, gb = mode_distance_backward(cfg.mode, cfg, rows[li], rows[ri], dloss / li.shape[0])
    grad_rows = np.zeros_like(rows)
    # np.add.at applies repeated indices in order, so the sum is deterministic
    np.add.at(grad_rows, li, ga)
    np.add.at(grad_rows, ri, gb)
    if perm is not None:
        grad = np.empty_like(grad_rows)
        grad[perm] = grad_rows
    else:
        grad = np.asarray((W.T if WT is None else WT) @ grad_rows)
    return float(np.sum(losses)), grad


@dataclass
class TrainResult:
    model: EmbeddingModel
    loss_log: list

    def write_loss_csv(self, out):
        out.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(self.loss_log, start=1):
            out.write(f"{epoch},{loss:.17g}\n")


# overflow on a diverging run is reported by the finiteness check instead
@np.errstate(over="ignore", invalid="ignore")
def train(ds: Dataset, gt: DistanceMatrix, cfg: TrainConfig, model: Optional[EmbeddingModel] = None) -> TrainResult:
    """Fit embeddings to ``gt`` under ``cfg.mode``; deterministic for a fixed seed.

    Each epoch pairs every anchor with its nearest ground-truth neighbours and
    with uniformly drawn others, shuffles the pairs, and takes one momentum
    SGD step per batch on the batch-mean loss.
    """
    n = len(ds)
    if n < 3:
        raise DataError(f"need at least 3 trajectories to train, got {n}")
    gidx = _gt_index(ds, gt)
    mu = float(np.mean(gt.values))
    if not mu > 0:
        raise DataError("ground-truth distances are all zero")
    if model is None:
        model = init_model(ds, cfg)
    model.mu = mu
    table = model.table
    W = model.encoding_matrix(ds.trajectories)
    WT = W.T.tocsr()
    # lookup: W is a permutation, so index instead of multiplying
    perm = W.indices if cfg.encoder.tag == "lookup" else None

    square = gt.to_square()[np.ix_(gidx, gidx)]
    neighbors = nearest_neighbors(square, cfg.neighbors_per_anchor)
    target_all = square / mu

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    velocity = np.zeros_like(table)
    lr_cols = np.full(cfg.row_width, cfg.learning_rate)
    lr_cols[cfg.embed_dim:] *= cfg.factor_lr_scale
    anchors_nn = np.repeat(np.arange(n), neighbors.shape[1])
    loss_log = []
    for epoch in range(1, cfg.epochs + 1):
        r = cfg.random_pairs_per_anchor
        others = rng.integers(0, n - 1, size=(n, r))
        others = others + (others >= np.arange(n)[:, None])
        left = np.concatenate([anchors_nn, np.repeat(np.arange(n), r)])
        right = np.concatenate([neighbors.ravel(), others.ravel()])
        order = rng.permutation(left.shape[0])
        left, right = left[order], right[order]

        total = 0.0
        for s in range(0, left.shape[0], cfg.batch_pairs):
            li = left[s:s + cfg.batch_pairs]
            ri = right[s:s + cfg.batch_pairs]
            loss_sum, grad = batch_loss_grad(cfg, table, W, li, ri, target_all[li, ri], WT, perm)
            total += loss_sum
            velocity *= MOMENTUM
            velocity += grad
            table -= lr_cols * velocity
        mean_loss = total / left.shape[0]
        if not (math.isfinite(mean_loss) and np.all(np.isfinite(table))):
            raise DivergenceError(epoch, cfg.learning_rate)
        loss_log.append(mean_loss)
        log.debug("epoch %d mean loss %.6g", epoch, mean_loss)
    return TrainResult(model, loss_log)

