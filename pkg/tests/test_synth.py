import numpy as np
import pytest

from trajsim.errors import DatasetTooSmallError, GenerationError
from trajsim.metrics import MetricKind, distance_matrix
from trajsim.synth import EXAMPLE_TRAJECTORIES, example_dataset, gen_metric_dataset, gen_violating_dataset
from trajsim.violation import sample_violations
from trajsim import synth


def test_reserved_seed_reproduces_example():
    ds = gen_violating_dataset(3, 0)
    for traj, pts in zip(ds, EXAMPLE_TRAJECTORIES):
        assert traj.coords.tolist() == [list(p) for p in pts]
    m = distance_matrix(ds, MetricKind("dtw"))
    assert m.values.tolist() == [4.0, 15.0, 9.0]


def test_example_dataset_matches_reserved_seed():
    a, b = example_dataset(), gen_violating_dataset(3, 0)
    assert [t.coords.tobytes() for t in a] == [t.coords.tobytes() for t in b]


def test_violating_dataset_rv_target():
    ds = gen_violating_dataset(200, 1)
    assert len(ds) == 200
    m = distance_matrix(ds, MetricKind("dtw"), threads=4)
    assert sample_violations(m, exhaustive=True).rv >= 0.05


@pytest.mark.parametrize("n", [3, 10, 57])
def test_violating_deterministic(n):
    a, b = gen_violating_dataset(n, 5), gen_violating_dataset(n, 5)
    assert a.ids == b.ids
    assert [t.coords.tobytes() for t in a] == [t.coords.tobytes() for t in b]
    assert gen_violating_dataset(n, 6) is not None


def test_different_seeds_differ():
    a, b = gen_violating_dataset(20, 3), gen_violating_dataset(20, 4)
    assert [t.coords.tobytes() for t in a] != [t.coords.tobytes() for t in b]


def test_generation_error_after_retries(monkeypatch):
    monkeypatch.setattr(synth, "_dtw_rv", lambda ds, seed: 0.01)
    with pytest.raises(GenerationError, match="0.0100"):
        gen_violating_dataset(10, 2)


def test_retry_uses_incremented_seed(monkeypatch):
    calls = []
    real = synth._violating_candidate

    def spy(n, seed):
        calls.append(seed)
        return real(n, seed)

    rvs = iter([0.0, 0.0, 0.2])
    monkeypatch.setattr(synth, "_violating_candidate", spy)
    monkeypatch.setattr(synth, "_dtw_rv", lambda ds, seed: next(rvs))
    ds = gen_violating_dataset(8, 4)
    assert calls == [4, 5, 6]
    assert [t.coords.tobytes() for t in ds] == [t.coords.tobytes() for t in real(8, 6)]


def test_too_small():
    with pytest.raises(DatasetTooSmallError):
        gen_violating_dataset(2, 0)
    with pytest.raises(DatasetTooSmallError):
        gen_metric_dataset(2, 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_metric_dataset_has_no_violations(seed):
    ds = gen_metric_dataset(30, seed)
    for tag in ("dtw", "sspd", "edr", "hausdorff", "dfrechet"):
        m = distance_matrix(ds, MetricKind(tag))
        assert sample_violations(m, exhaustive=True).rv == 0.0, tag


def test_metric_dataset_reduces_to_point_distance():
    ds = gen_metric_dataset(12, 3)
    pts = np.array([t.coords[0] for t in ds])
    sq = distance_matrix(ds, MetricKind("dtw")).to_square()
    ref = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    assert np.array_equal(sq, ref)


def test_metric_dataset_deterministic():
    a, b = gen_metric_dataset(15, 9), gen_metric_dataset(15, 9)
    assert [t.coords.tobytes() for t in a] == [t.coords.tobytes() for t in b]
    assert all(len(t) == 1 for t in a)
