import numpy as np
import pytest

from trajsim.errors import ConfigError, DivergenceError, FormatError, UnseenTrajectoryError
from trajsim.metrics import DistanceMatrix, MetricKind, distance_matrix
from trajsim.synth import gen_violating_dataset
from trajsim.trainer import (
    MODES,
    EmbeddingModel,
    EncoderKind,
    TrainConfig,
    batch_loss_grad,
    init_model,
    mode_distance,
    model_distance,
    pair_loss,
    train,
)
from trajsim.trajectory import Dataset, Trajectory

from oracles import central_difference, grad_close


def collinear():
    ds = Dataset(Trajectory(i, [[float(i), 0.0]]) for i in range(3))
    return ds, distance_matrix(ds, MetricKind("dtw"))


def small_cfg(**kw):
    base = dict(embed_dim=4, factor_dim=2, epochs=5, learning_rate=0.01, batch_pairs=16,
                neighbors_per_anchor=3, random_pairs_per_anchor=3)
    base.update(kw)
    return TrainConfig(**base)


# -- config and model ----------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(mode="hyper")
    with pytest.raises(ConfigError):
        TrainConfig(loss="huber")
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(beta=-1.0)
    with pytest.raises(ConfigError):
        EncoderKind("gridmean")
    with pytest.raises(ConfigError):
        EncoderKind("rnn")


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.embed_dim, cfg.factor_dim, cfg.beta, cfg.c) == (32, 8, 1.0, 4.0)
    assert (cfg.loss, cfg.learning_rate, cfg.neighbors_per_anchor, cfg.random_pairs_per_anchor) == \
        ("mse", 1e-3, 10, 10)


def test_init_deterministic_and_shaped(example_ds):
    cfg = small_cfg(seed=7)
    a, b = init_model(example_ds, cfg), init_model(example_ds, cfg)
    assert a.table.tobytes() == b.table.tobytes()
    assert a.table.shape == (3, 4 + 2 * 2)
    assert np.abs(a.table).max() <= 0.05
    assert a.mu == 1.0
    assert init_model(example_ds, small_cfg(seed=8)).table.tobytes() != a.table.tobytes()


def test_gridmean_table_counts_occupied_cells():
    # bbox (0,0)-(4,2), unit cells: 4 columns x 2 rows; the points fall in cells
    # 0, 0, 3 and 7 (the max corner clamps into the last cell)
    ds = Dataset([Trajectory(0, [[0.0, 0.0], [0.2, 0.3]]), Trajectory(1, [[3.9, 0.1], [4.0, 2.0]])])
    cfg = small_cfg(encoder=EncoderKind("gridmean", 1.0))
    m = init_model(ds, cfg)
    assert m.keys == [0, 3, 7]
    assert m.table.shape == (3, cfg.row_width)


def test_gridmean_encode_mean_with_multiplicity():
    ds = Dataset([Trajectory(0, [[5.5, 0.5], [5.2, 0.1], [7.5, 0.5]]),
                  Trajectory(1, [[0.0, 0.0], [10.0, 10.0]])])
    cfg = small_cfg(encoder=EncoderKind("gridmean", 1.0))
    m = init_model(ds, cfg)
    row = dict(zip(m.keys, m.table))
    enc = m.encode_rows([ds[0]])[0]
    assert np.allclose(enc, (2 * row[5] + row[7]) / 3, rtol=1e-15, atol=0)
    single = m.encode_rows([Trajectory(9, [[7.4, 0.4]])])[0]
    assert np.array_equal(single, row[7])


def test_lookup_encode_and_unseen(example_ds):
    m = init_model(example_ds, small_cfg())
    x, f = m.encode(example_ds[1])
    assert np.array_equal(np.concatenate([x, f.v_lo, f.v_eu]), m.table[1])
    with pytest.raises(UnseenTrajectoryError):
        m.encode(Trajectory(99, [[0.0, 0.0]]))


def test_model_round_trip(tmp_path, example_ds):
    m = init_model(example_ds, small_cfg(encoder=EncoderKind("gridmean", 0.5)))
    m.mu = 3.25
    path = tmp_path / "m.lhm"
    m.save(path)
    back = EmbeddingModel.load(path)
    assert back.table.tobytes() == m.table.tobytes()
    assert back.keys == m.keys and back.mu == 3.25 and back.config == m.config
    assert back.grid == m.grid
    raw = path.read_bytes()
    assert raw[:4] == b"LHM1"
    with pytest.raises(FormatError):
        EmbeddingModel.from_bytes(raw[:-3])
    with pytest.raises(FormatError):
        EmbeddingModel.from_bytes(b"XXXX" + raw[4:])


# -- mode distances --------------------------------------------------------------


def _row(x, cfg, lo=None, eu=None):
    m = cfg.factor_dim
    lo = np.zeros(m) if lo is None else lo
    eu = np.zeros(m) if eu is None else eu
    return np.concatenate([x, lo, eu])


def test_mode_distance_examples():
    cfg = TrainConfig(embed_dim=2, factor_dim=1)
    a, b = _row([0.0, 0.0], cfg), _row([3.0, 4.0], cfg)
    assert mode_distance("original", cfg, a, b) == 5.0
    assert mode_distance("lh-vanilla", cfg, b, b) == 0.0
    for mode in MODES:
        assert mode_distance(mode, cfg, b, b) == 0.0


def test_fusion_alpha_pins_modes(rng):
    cfg = TrainConfig(embed_dim=3, factor_dim=2)
    a, b = rng.normal(size=(2, 7))
    assert mode_distance("fusion-dist", cfg, a, b, alpha=0.0) == mode_distance("original", cfg, a, b)
    assert mode_distance("fusion-dist", cfg, a, b, alpha=1.0) == mode_distance("lh-cosh", cfg, a, b)


def test_model_distance_symmetric(example_ds):
    m = init_model(example_ds, small_cfg())
    assert model_distance(m, example_ds[0], example_ds[2]) == model_distance(m, example_ds[2], example_ds[0])
    assert model_distance(m, example_ds[1], example_ds[1]) == 0.0


# -- loss and gradients --------------------------------------------------------------


def test_zero_parameters_loss_is_one():
    ds = Dataset([Trajectory(0, [[0.0, 0.0]]), Trajectory(1, [[1.0, 0.0]]), Trajectory(2, [[2.0, 0.0]])])
    gt = DistanceMatrix([1.0, 1.0, 1.0], MetricKind("dtw"), [0, 1, 2])
    m = init_model(ds, small_cfg(mode="original"))
    m.table[:] = 0.0
    m.mu = 1.0
    assert pair_loss(m, ds, gt, [[0, 1]]).tolist() == [1.0]


def test_hand_placed_embedding_has_zero_loss():
    ds, gt = collinear()
    mu = float(np.mean(gt.values))
    m = init_model(ds, small_cfg(mode="original", embed_dim=2))
    m.table[:] = 0.0
    m.table[:, 0] = np.array([0.0, 0.5, 1.0]) * 2.0 / mu
    m.mu = mu
    assert np.allclose(pair_loss(m, ds, gt, [[0, 1], [0, 2], [1, 2]]), 0.0, atol=1e-30)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("loss", ["mse", "mae"])
@pytest.mark.parametrize("encoder", ["lookup", "gridmean"])
def test_batch_gradient_matches_fd(rng, mode, loss, encoder):
    ds = gen_violating_dataset(8, 4)
    enc = EncoderKind(encoder, 2.0 if encoder == "gridmean" else None)
    cfg = small_cfg(mode=mode, loss=loss, encoder=enc, embed_dim=3, factor_dim=2)
    m = init_model(ds, cfg)
    table = rng.normal(size=m.table.shape) * 0.6
    W = m.encoding_matrix(ds.trajectories)
    li = np.array([0, 1, 2, 3, 4, 0, 5])
    ri = np.array([1, 2, 3, 4, 5, 7, 6])
    target = rng.uniform(0.2, 2.0, size=li.shape[0])
    _, grad = batch_loss_grad(cfg, table, W, li, ri, target)
    f = lambda t: batch_loss_grad(cfg, t, W, li, ri, target)[0] / li.shape[0]
    assert grad_close(grad, central_difference(f, table))


# -- training ---------------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_collinear_toy_converges_monotonically(seed):
    # every pair each epoch in one batch: the epoch average is free of sampling noise,
    # and at lr 1e-3 the momentum iteration is overdamped
    ds, gt = collinear()
    cfg = TrainConfig(mode="original", embed_dim=2, epochs=500, learning_rate=1e-3, batch_pairs=6,
                      neighbors_per_anchor=2, random_pairs_per_anchor=0, seed=seed)
    res = train(ds, gt, cfg)
    mae = float(np.mean(np.sqrt(pair_loss(res.model, ds, gt, [[0, 1], [0, 2], [1, 2]]))))
    assert mae < 0.05
    smooth = np.convolve(res.loss_log, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth[10:]) < 0)


def test_collinear_toy_converges_with_random_pairs():
    ds, gt = collinear()
    cfg = TrainConfig(mode="original", embed_dim=2, epochs=500, learning_rate=0.02, batch_pairs=4,
                      neighbors_per_anchor=2, random_pairs_per_anchor=2, seed=0)
    res = train(ds, gt, cfg)
    mae = float(np.mean(np.sqrt(pair_loss(res.model, ds, gt, [[0, 1], [0, 2], [1, 2]]))))
    assert mae < 0.05


def test_pair_counts_validated():
    TrainConfig(neighbors_per_anchor=0, random_pairs_per_anchor=3)
    with pytest.raises(ConfigError):
        TrainConfig(neighbors_per_anchor=0, random_pairs_per_anchor=0)
    with pytest.raises(ConfigError):
        TrainConfig(random_pairs_per_anchor=-1)


def test_training_is_deterministic():
    ds = gen_violating_dataset(20, 2)
    gt = distance_matrix(ds, MetricKind("dtw"))
    cfg = small_cfg(epochs=8, seed=3)
    a, b = train(ds, gt, cfg), train(ds, gt, cfg)
    assert a.loss_log == b.loss_log
    assert a.model.table.tobytes() == b.model.table.tobytes()


def test_mu_is_mean_ground_truth():
    ds = gen_violating_dataset(12, 2)
    gt = distance_matrix(ds, MetricKind("dtw"))
    res = train(ds, gt, small_cfg(epochs=1))
    assert res.model.mu == float(np.mean(gt.values))


def test_divergence_reports_epoch_and_rate():
    ds = gen_violating_dataset(12, 2)
    gt = distance_matrix(ds, MetricKind("dtw"))
    with pytest.raises(DivergenceError) as exc:
        train(ds, gt, small_cfg(learning_rate=1e8, epochs=5, mode="lh-vanilla"))
    assert exc.value.learning_rate == 1e8 and exc.value.epoch >= 1


def test_original_mode_never_violates():
    from trajsim.evaluation import rvs_pairs
    from trajsim.violation import violating_triples

    ds = gen_violating_dataset(25, 1)
    gt = distance_matrix(ds, MetricKind("dtw"))
    res = train(ds, gt, small_cfg(mode="original", epochs=30))
    _, pred = rvs_pairs(res.model, gt, ds, violating_triples(gt, exhaustive=True))
    assert np.all(pred <= 1e-12)


def test_loss_csv(tmp_path):
    ds, gt = collinear()
    res = train(ds, gt, small_cfg(mode="original", epochs=3))
    import io

    buf = io.StringIO()
    res.write_loss_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "epoch,mean_loss" and len(lines) == 4
    assert float(lines[1].split(",")[1]) == res.loss_log[0]
