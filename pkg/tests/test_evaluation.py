import io
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajsim.errors import DataError
from trajsim.evaluation import (
    EvalReport,
    evaluate,
    evaluate_distances,
    hit_rate,
    knn,
    ndcg,
    predicted_square,
    rvs_pairs,
    select_queries,
    write_rvs_csv,
)
from trajsim.metrics import DistanceMatrix, MetricKind, distance_matrix
from trajsim.synth import gen_violating_dataset
from trajsim.trainer import EmbeddingModel, TrainConfig, init_model, model_distance, train
from trajsim.trajectory import Dataset, Trajectory
from trajsim.violation import violating_triples


def small_cfg(**kw):
    base = dict(embed_dim=4, factor_dim=2, epochs=5, learning_rate=0.01, batch_pairs=32,
                neighbors_per_anchor=3, random_pairs_per_anchor=3)
    base.update(kw)
    return TrainConfig(**base)


# -- ranking primitives ----------------------------------------------------------


def test_knn_examples():
    assert knn([0.1, 0.5, 0.3], [7, 8, 9], 2) == [7, 9]
    assert knn([1.0, 1.0, 1.0], [9, 3, 5], 3) == [3, 5, 9]
    assert knn([0.4, 0.2, 0.9], [1, 2, 3], 3) == [2, 1, 3]
    with pytest.raises(DataError):
        knn([0.1, 0.2], [1, 2], 3)


def test_hit_rate_examples():
    truth = [1, 2, 3, 4, 5]
    assert hit_rate([1, 2, 3, 7, 8], truth, 5) == 0.6
    assert hit_rate(truth, truth, 5) == 1.0
    assert hit_rate([6, 7, 8, 9, 10], truth, 5) == 0.0


def test_ndcg_examples():
    assert ndcg([1, 2, 3], [1, 2, 3], 3) == 1.0
    expect = (1 / math.log2(3)) / (1 + 1 / math.log2(3))
    assert ndcg(["c", "a"], ["a", "b"], 2) == pytest.approx(expect, rel=1e-15)
    assert expect == pytest.approx(0.3869, abs=5e-5)
    assert ndcg([7, 8], [1, 2], 2) == 0.0


ranked = st.permutations(list(range(8)))


@settings(max_examples=300, deadline=None)
@given(ranked, ranked, st.integers(1, 8))
def test_scores_bounded_and_ndcg_one_iff_same_set(pred, truth, k):
    h, g = hit_rate(pred, truth, k), ndcg(pred, truth, k)
    assert 0.0 <= h <= 1.0 and 0.0 <= g <= 1.0 + 1e-15
    same = set(pred[:k]) == set(truth[:k])
    assert (g == pytest.approx(1.0, abs=1e-12)) == same
    assert (h == 1.0) == same


# -- evaluate --------------------------------------------------------------------


def test_oracle_predictor_is_perfect():
    ds = gen_violating_dataset(60, 2)
    sq = distance_matrix(ds, MetricKind("dtw")).to_square()
    rep = evaluate_distances(sq, sq, ds.ids, range(len(ds)))
    assert all(v == 1.0 for v in rep.hr.values())
    assert all(v == 1.0 for v in rep.ndcg.values())
    assert rep.query_count == 60


def test_untrained_model_near_random_baseline():
    baseline = 5 / 49
    scores = []
    for seed in range(5):
        ds = gen_violating_dataset(50, seed + 10)
        gt = distance_matrix(ds, MetricKind("dtw"))
        model = init_model(ds, small_cfg(seed=seed))
        rep = evaluate(model, gt, ds, hr_ks=(5,), ndcg_ks=(5,))
        scores.append(rep.hr[5])
    assert abs(float(np.mean(scores)) - baseline) <= 0.08
    assert all(abs(s - baseline) <= 0.08 for s in scores)


def test_three_trajectory_exhaustive_case():
    ds = Dataset(Trajectory(i, [[float(x), 0.0]]) for i, x in enumerate([0.0, 1.0, 3.0]))
    gt = distance_matrix(ds, MetricKind("dtw"))
    model = init_model(ds, small_cfg(mode="original"))
    model.table[:] = 0.0
    # predicted positions 0, 3, 1: query 0 swaps its two neighbours
    model.table[:, 0] = [0.0, 3.0, 1.0]
    rep = evaluate(model, gt, ds, hr_ks=(1, 2), ndcg_ks=(1, 2))
    assert rep.query_count == 3
    assert rep.hr[2] == 1.0 and rep.ndcg[2] == pytest.approx(1.0)
    # top-1 per query, truth vs predicted: 0 -> 1 vs 2, 1 -> 0 vs 2, 2 -> 1 vs 0
    assert rep.hr[1] == 0.0


def test_k_too_large_for_candidates():
    ds = gen_violating_dataset(6, 0)
    gt = distance_matrix(ds, MetricKind("dtw"))
    with pytest.raises(DataError):
        evaluate(init_model(ds, small_cfg()), gt, ds, hr_ks=(6,), ndcg_ks=(2,))


def test_enumeration_order_invariance(rng):
    ds = gen_violating_dataset(40, 3)
    gt = distance_matrix(ds, MetricKind("dtw"))
    model = init_model(ds, small_cfg(seed=5))
    ref = evaluate(model, gt, ds, hr_ks=(5, 10), ndcg_ks=(10,))
    shuffled = Dataset([ds[int(i)] for i in rng.permutation(len(ds))])
    other = evaluate(model, gt, shuffled, query_ids=ds.ids, hr_ks=(5, 10), ndcg_ks=(10,))
    assert ref.hr == other.hr and ref.ndcg == other.ndcg


def test_enumeration_order_invariance_with_ties():
    # all predicted distances tie: rankings fall back to ascending ids either way
    ds = Dataset(Trajectory(i, [[float(i * i), 0.0]]) for i in range(8))
    gt = distance_matrix(ds, MetricKind("dtw"))
    model = init_model(ds, small_cfg(mode="original"))
    model.table[:] = 0.0
    a = evaluate(model, gt, ds, hr_ks=(3,), ndcg_ks=(3,))
    rev = Dataset(list(reversed(ds.trajectories)))
    b = evaluate(model, gt, rev, query_ids=ds.ids, hr_ks=(3,), ndcg_ks=(3,))
    assert a.hr == b.hr and a.ndcg == b.ndcg


def test_fusion_with_alpha_zero_equals_original():
    ds = gen_violating_dataset(60, 4)
    gt = distance_matrix(ds, MetricKind("dtw"))
    res = train(ds, gt, small_cfg(mode="fusion-dist", epochs=10, seed=2))
    fused = res.model
    orig = EmbeddingModel(replace(fused.config, mode="original"), fused.table, fused.keys, fused.mu)
    assert np.array_equal(predicted_square(fused, ds, alpha=0.0), predicted_square(orig, ds))
    a = evaluate(fused, gt, ds, alpha=0.0)
    b = evaluate(orig, gt, ds)
    assert a.hr == b.hr and a.ndcg == b.ndcg


def test_predicted_square_matches_model_distance(rng):
    ds = gen_violating_dataset(12, 5)
    model = init_model(ds, small_cfg(mode="lh-cosh"))
    model.table[:] = rng.normal(size=model.table.shape)
    sq = predicted_square(model, ds)
    assert np.all(np.diag(sq) == 0.0)
    for i, j in [(0, 1), (3, 7), (11, 2)]:
        assert sq[i, j] == pytest.approx(model_distance(model, ds[i], ds[j]), rel=1e-13)


def test_threads_identical():
    ds = gen_violating_dataset(60, 6)
    gt = distance_matrix(ds, MetricKind("dtw"))
    model = init_model(ds, small_cfg(seed=1))
    assert evaluate(model, gt, ds) == evaluate(model, gt, ds, threads=8)


def test_query_subset():
    ds = gen_violating_dataset(30, 7)
    gt = distance_matrix(ds, MetricKind("dtw"))
    model = init_model(ds, small_cfg())
    rep = evaluate(model, gt, ds, query_ids=[ds.ids[0], ds.ids[5]], hr_ks=(5,), ndcg_ks=(5,))
    assert rep.query_count == 2


def test_missing_ground_truth_row():
    ds = Dataset(Trajectory(i, [[float(i), 0.0]]) for i in range(4))
    gt = DistanceMatrix([1.0, 2.0, 1.0], MetricKind("dtw"), [0, 1, 2])
    with pytest.raises(DataError):
        evaluate(init_model(ds, small_cfg()), gt, ds, hr_ks=(1,), ndcg_ks=(1,))


# -- queries and output ------------------------------------------------------------


def test_select_queries():
    assert select_queries(4) == [0, 1, 2, 3]
    s = select_queries(100, "sample:10", seed=3)
    assert len(s) == 10 and len(set(s)) == 10 and s == sorted(s)
    assert s == select_queries(100, "sample:10", seed=3)
    for bad in ("sample:0", "sample:101", "some"):
        with pytest.raises(DataError):
            select_queries(100, bad)


def test_report_csv_and_text():
    rep = EvalReport("original", 4, {5: 0.5, 10: 0.25}, {10: 1 / 3})
    buf = io.StringIO()
    rep.write_csv(buf)
    assert buf.getvalue().splitlines() == [
        "metric,value", "hr@5,0.5", "hr@10,0.25", "ndcg@10,0.33333333333333331"]
    assert "hr@10: 0.2500" in rep.format_text()


def test_rvs_export_round_trips():
    ds = gen_violating_dataset(20, 1)
    gt = distance_matrix(ds, MetricKind("dtw"))
    model = init_model(ds, small_cfg(mode="lh-cosh"))
    tri = violating_triples(gt, exhaustive=True)
    t, p = rvs_pairs(model, gt, ds, tri)
    buf = io.StringIO()
    write_rvs_csv(t, p, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "rvs_true,rvs_pred" and len(lines) == len(tri) + 1
    back = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(back[:, 0], t) and np.array_equal(back[:, 1], p)
    assert np.all(t > 0)
