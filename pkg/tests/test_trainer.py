import math

import numpy as np
import pytest

from dmpnn import autodiff as ad
from dmpnn.autodiff import Tensor
from dmpnn.channel import ChannelRealization, sample_channels, sum_rate
from dmpnn.dmp import GraphBatch, Trajectory
from dmpnn.graphs import MultiplexNetwork, complete_graph
from dmpnn.neural import init_params, rebind
from dmpnn.trainer import (TrainConfig, TrainReport, TrainingDiverged, batch_objective,
                           sample_minibatch, train, weighted_objective)


def single_batch(n=3, seed=0):
    net = MultiplexNetwork(n, complete_graph(n), set())
    a = sample_channels(n, seed)
    return GraphBatch.single(net, a), net, a


def powers(values):
    return Tensor(np.asarray(values, dtype=float)[:, None])


def test_weighted_objective_single_step():
    batch, net, a = single_batch()
    x = [1.0, 2.0, 3.0]
    out = weighted_objective(Trajectory([powers(x)], []), batch, "sum-rate")
    assert out.data[0, 0] == pytest.approx(sum_rate(a, x, net))


def test_weighted_objective_zero_power():
    batch, _, _ = single_batch()
    out = weighted_objective(Trajectory([powers([0, 0, 0])] * 3, []), batch, "sum-rate")
    assert out.data[0, 0] == 0.0


def test_weighted_objective_two_steps():
    batch, net, a = single_batch()
    x1, x2 = [1.0, 2.0, 3.0], [4.0, 0.5, 9.0]
    out = weighted_objective(Trajectory([powers(x1), powers(x2)], []), batch, "sum-rate")
    expect = sum_rate(a, x1, net) + math.sqrt(2) * sum_rate(a, x2, net)
    assert out.data[0, 0] == pytest.approx(expect, rel=1e-14)


def test_minibatch_of_one():
    assert len(sample_minibatch(TrainConfig(batch_size=1), 0)) == 1


def test_minibatch_is_seeded():
    a = sample_minibatch(TrainConfig(batch_size=8), 3)
    b = sample_minibatch(TrainConfig(batch_size=8), 3)
    for (n1, c1), (n2, c2) in zip(a, b):
        assert n1 == n2 and np.array_equal(c1.gains, c2.gains)


def test_minibatch_sizes_are_uniform():
    cfg = TrainConfig(n_min=3, n_max=10, batch_size=20_000)
    counts = np.bincount([net.n for net, _ in sample_minibatch(cfg, 0)], minlength=11)[3:]
    n, p = 20_000, 1 / 8
    assert np.all(np.abs(counts - n * p) <= 3 * math.sqrt(n * p * (1 - p)))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(p_train=1.5)
    with pytest.raises(ValueError):
        TrainConfig(n_min=4, n_max=3)
    with pytest.raises(ValueError):
        TrainConfig(objective="max-rate")


def test_smoothed_window():
    r = TrainReport(train_objective=[1.0, 3.0, 5.0, 7.0])
    np.testing.assert_allclose(r.smoothed(2), [1.0, 2.0, 4.0, 6.0])


def test_zero_learning_rate_keeps_parameters(tiny_dims, tmp_path):
    cfg = TrainConfig(dims=tiny_dims, lr=0.0, epochs=2, batches_per_epoch=2, batch_size=3,
                      iterations=2, val_samples=4, seed=5)
    start = init_params(tiny_dims, 1)
    before = {k: v.copy() for k, v in start.arrays().items()}
    report, params = train(cfg, params=start, log_path=tmp_path / "log.csv")
    for k, v in params.arrays().items():
        np.testing.assert_array_equal(v, before[k])
    assert len(report.train_objective) == len(report.val_utility) == 2
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0].startswith("#") and lines[1] == "epoch,train_objective,val_utility,seconds"
    assert len(lines) == 4 and "np." not in lines[2]


@pytest.mark.parametrize("objective", ["sum-rate", "min-rate"])
def test_batch_gradient_matches_differences(tiny_dims, objective):
    cfg = TrainConfig(dims=tiny_dims, objective=objective, batch_size=2, iterations=3)
    samples = sample_minibatch(cfg, 4)
    params = init_params(tiny_dims, 2)
    rng = np.random.default_rng(0)
    inputs = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.arrays().items()}

    def fn(**tensors):
        return batch_objective(rebind(params, tensors), samples, cfg, 17)[0]

    assert ad.grad_check(fn, inputs, n_coords=40, rng=1) <= 1e-5


def test_training_improves_tiny_model(tiny_dims):
    cfg = TrainConfig(dims=tiny_dims, lr=1e-2, epochs=6, batches_per_epoch=3, batch_size=16,
                      iterations=3, val_samples=50, seed=1)
    report, _ = train(cfg)
    assert np.all(np.isfinite(report.train_objective))
    assert report.smoothed()[-1] > report.train_objective[0]


def test_checkpoint_written_with_meta(tiny_dims, tmp_path):
    from dmpnn.neural import read_checkpoint
    cfg = TrainConfig(dims=tiny_dims, epochs=1, batches_per_epoch=1, batch_size=2,
                      iterations=2, val_samples=2, seed=3)
    report, _ = train(cfg, checkpoint_path=tmp_path / "m.dmpnn", checkpoint_meta={"tag": "x"})
    _, meta = read_checkpoint(report.checkpoint)
    assert meta["seed"] == "3" and meta["tag"] == "x" and meta["objective"] == "sum-rate"


def test_non_finite_objective_is_reported(tiny_dims, monkeypatch):
    import dmpnn.trainer as trainer
    cfg = TrainConfig(dims=tiny_dims, epochs=1, batches_per_epoch=1, batch_size=2,
                      iterations=1, val_samples=2)
    real = trainer.batch_objective

    def poisoned(*args, **kwargs):
        obj, values = real(*args, **kwargs)
        return obj, values * np.nan

    monkeypatch.setattr(trainer, "batch_objective", poisoned)
    with pytest.raises(TrainingDiverged, match="epoch 1, batch 0"):
        train(cfg)
