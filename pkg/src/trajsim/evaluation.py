"""Retrieval quality of a trained model against ground truth: HR@k and NDCG@k."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .metrics import DistanceMatrix
from .trainer import EmbeddingModel, mode_distance
from .trajectory import Dataset
from .violation import rvs_of_predicted

DEFAULT_HR_KS = (5, 10, 50)
DEFAULT_NDCG_KS = (10, 50)


def knn(distances, ids, k):
    """Ids of the ``k`` smallest distances; ties go to the smaller id."""
    distances = np.asarray(distances, dtype=np.float64)
    ids = np.asarray(ids)
    if k > distances.shape[0]:
        raise DataError(f"k={k} exceeds the {distances.shape[0]} available candidates")
    order = np.lexsort((ids, distances))
    return [int(i) for i in ids[order[:k]]]


def hit_rate(pred, truth, k) -> float:
    """Overlap of the two top-k lists divided by k."""
    return len(set(pred[:k]) & set(truth[:k])) / k


def _idcg(k):
    return sum(1.0 / math.log2(i + 1) for i in range(1, k + 1))


def ndcg(pred, truth, k) -> float:
    """NDCG@k with binary gain: an item is relevant iff it is in the true top-k."""
    relevant = set(truth[:k])
    dcg = sum(1.0 / math.log2(i + 2) for i, item in enumerate(pred[:k]) if item in relevant)
    return dcg / _idcg(k)


@dataclass
class EvalReport:
    mode: str
    query_count: int
    hr: dict = field(default_factory=dict)
    ndcg: dict = field(default_factory=dict)

    def rows(self):
        for k in sorted(self.hr):
            yield f"hr@{k}", self.hr[k]
        for k in sorted(self.ndcg):
            yield f"ndcg@{k}", self.ndcg[k]

    def write_csv(self, out):
        out.write("metric,value\n")
        for name, value in self.rows():
            out.write(f"{name},{value:.17g}\n")

    def format_text(self):
        lines = [f"mode: {self.mode}", f"queries: {self.query_count}"]
        lines += [f"{name}: {value:.4f}" for name, value in self.rows()]
        return "\n".join(lines)


def _gt_rows(gt: DistanceMatrix, ds: Dataset):
    try:
        gidx = np.array([gt.index_of(t.id) for t in ds], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"ground-truth matrix has no row for trajectory {exc.args[0]}") from None
    return gt.to_square()[np.ix_(gidx, gidx)]


def predicted_square(model: EmbeddingModel, ds: Dataset, alpha=None) -> np.ndarray:
    """All-pairs model distances over ``ds`` (diagonal forced to 0)."""
    rows = model.encode_rows(ds.trajectories)
    n = rows.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        out[i] = mode_distance(model.mode, model.config, rows[i][None, :], rows, alpha)
    np.fill_diagonal(out, 0.0)
    return out


def evaluate_distances(true_sq, pred_sq, ids, query_rows, hr_ks=DEFAULT_HR_KS,
                       ndcg_ks=DEFAULT_NDCG_KS, threads=1, mode="custom") -> EvalReport:
    """Mean HR@k / NDCG@k of ``pred_sq`` rankings against ``true_sq`` rankings."""
    ids = np.asarray(ids)
    n = ids.shape[0]
    kmax = max(tuple(hr_ks) + tuple(ndcg_ks))
    if kmax > n - 1:
        raise DataError(f"k={kmax} exceeds the {n - 1} candidates per query")

    def one(q):
        cand = np.arange(n) != q
        truth = knn(true_sq[q, cand], ids[cand], kmax)
        pred = knn(pred_sq[q, cand], ids[cand], kmax)
        return ([hit_rate(pred, truth, k) for k in hr_ks],
                [ndcg(pred, truth, k) for k in ndcg_ks])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, query_rows))
    else:
        results = [one(q) for q in query_rows]
    count = len(results)
    if count == 0:
        raise DataError("no queries to evaluate")
    hr = {k: math.fsum(r[0][a] for r in results) / count for a, k in enumerate(hr_ks)}
    nd = {k: math.fsum(r[1][a] for r in results) / count for a, k in enumerate(ndcg_ks)}
    return EvalReport(mode, count, hr, nd)


def select_queries(n, spec="all", seed=0):
    """Row indices for ``all`` or ``sample:N`` (seeded, sorted)."""
    if spec == "all":
        return list(range(n))
    if spec.startswith("sample:"):
        count = int(spec.split(":", 1)[1])
        if not 1 <= count <= n:
            raise DataError(f"sample size must be in [1, {n}]")
        rng = np.random.default_rng(seed)
        return sorted(int(i) for i in rng.choice(n, size=count, replace=False))
    raise DataError(f"bad query spec {spec!r}; use 'all' or 'sample:N'")


def evaluate(model: EmbeddingModel, gt: DistanceMatrix, ds: Dataset, query_ids=None,
             hr_ks=DEFAULT_HR_KS, ndcg_ks=DEFAULT_NDCG_KS, alpha=None, threads=1) -> EvalReport:
    """Rank every other trajectory for each query, by ground truth and by the model.

    The query itself is never a candidate. ``alpha`` pins the Lorentz share in
    ``fusion-dist`` mode (0 reproduces ``original`` rankings exactly).
    """
    true_sq = _gt_rows(gt, ds)
    pred_sq = predicted_square(model, ds, alpha)
    if query_ids is None:
        rows = list(range(len(ds)))
    else:
        rows = [ds.index_of(q) for q in query_ids]
    return evaluate_distances(true_sq, pred_sq, ds.ids, rows, hr_ks, ndcg_ks, threads, model.mode)


def rvs_pairs(model: EmbeddingModel, gt: DistanceMatrix, ds: Dataset, triples, alpha=None):
    """Ground-truth vs model RVS over violating dataset-row ``triples``."""
    gidx = np.array([gt.index_of(t.id) for t in ds], dtype=np.int64)
    pred_sq = predicted_square(model, ds, alpha)
    inv = np.empty(gt.n, dtype=np.int64)
    inv[gidx] = np.arange(gidx.shape[0])
    mapped = np.sort(gidx[np.asarray(triples, dtype=np.int64)], axis=1)
    return rvs_of_predicted(gt, lambda i, j: pred_sq[inv[i], inv[j]], mapped)


def write_rvs_csv(true_rvs, pred_rvs, out):
    out.write("rvs_true,rvs_pred\n")
    for a, b in zip(true_rvs, pred_rvs):
        out.write(f"{a:.17g},{b:.17g}\n")
