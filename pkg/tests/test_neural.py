import numpy as np
import pytest

from aiba.neural import (MAGIC, NeuralInfluence, TrainConfig, Vocab, forward, init_params,
                         loss_and_grad, train_neural)
from aiba.simulator import InfluenceDataset, collect_dataset


def _random_problem(rng, n_tokens=5, hidden=4, n_y=3, B=3, T=4):
    params = init_params(n_tokens, hidden, n_y, rng)
    for k in params:  # nonzero biases exercise every gradient path
        params[k] = params[k] + 0.1 * rng.standard_normal(params[k].shape)
    X = rng.integers(0, n_tokens, size=(B, T))
    Y = rng.integers(0, n_y, size=(B, T))
    return params, X, Y


def _fd(params, X, Y, k, idx, h=1e-5):
    p = {n: v.copy() for n, v in params.items()}
    p[k][idx] += h
    up = loss_and_grad(p, X, Y)[0]
    p[k][idx] -= 2 * h
    return (up - loss_and_grad(p, X, Y)[0]) / (2 * h)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params, X, Y = _random_problem(rng)
    _, g = loss_and_grad(params, X, Y)
    for k in params:
        idx = tuple(rng.integers(0, s) for s in params[k].shape)
        num = _fd(params, X, Y, k, idx)
        assert abs(num - g[k][idx]) <= 1e-6 + 1e-4 * abs(num)


def test_log_probs_normalized(rng):
    params, X, _ = _random_problem(rng)
    logp, _ = forward(params, X)
    np.testing.assert_allclose(np.exp(logp).sum(axis=2), 1.0)


def _const_dataset(n, h, label, n_y=2, rng=None):
    rec = np.zeros((n, h, 1), dtype=np.int64)
    if rng is not None:
        rec[..., 0] = rng.integers(0, 3, size=(n, h))
        y = rng.integers(0, n_y, size=(n, h))
    else:
        y = np.full((n, h), label)
    return InfluenceDataset(rec, y, n_y)


def test_learns_constant_label():
    ds = _const_dataset(400, 3, label=1)
    ck = train_neural(ds, TrainConfig(hidden=8, epochs=4, optimizer="adam", lr=0.05), seed=0)[-1]
    assert ck.predict(2, ((0,), (0,)))[1] > 0.95


def test_uniform_labels_give_flat_predictions():
    rng = np.random.default_rng(0)
    ds = _const_dataset(3000, 3, None, rng=rng)
    ck = train_neural(ds, TrainConfig(hidden=8, epochs=3, optimizer="adam", lr=0.01), seed=0)[-1]
    P = ck.predict_dataset(ds)
    assert np.abs(P - 0.5).max() < 0.1


def test_training_is_deterministic(firefighters):
    ds = collect_dataset(*firefighters, None, 200, seed=3)
    cfg = TrainConfig(hidden=6, epochs=2)
    a = train_neural(ds, cfg, seed=5)
    b = train_neural(ds, cfg, seed=5)
    assert [c.to_bytes() for c in a] == [c.to_bytes() for c in b]
    assert [c.epoch for c in a] == [1, 2]


def test_callback_sees_each_epoch():
    seen = []
    train_neural(_const_dataset(50, 2, 0), TrainConfig(hidden=4, epochs=3), seed=1,
                 callback=lambda c: seen.append(c.epoch))
    assert seen == [1, 2, 3]


def test_sgd_reduces_training_loss(firefighters):
    ds = collect_dataset(*firefighters, None, 2000, seed=3)
    cks = train_neural(ds, TrainConfig(hidden=16, epochs=4), seed=0)
    X = cks[0].vocab.encode_dataset(ds)
    losses = [loss_and_grad(c.params, X, ds.y)[0] for c in cks]
    assert losses[-1] < losses[0]


def test_checkpoint_roundtrip(tmp_path, firefighters):
    ds = collect_dataset(*firefighters, None, 100, seed=3)
    ck = train_neural(ds, TrainConfig(hidden=5, epochs=1), seed=2)[0]
    ck.save(tmp_path / "c.bin")
    back = NeuralInfluence.load(tmp_path / "c.bin")
    assert back.to_bytes() == ck.to_bytes()
    d = tuple(map(tuple, ds.records[0, :2].tolist()))
    np.testing.assert_array_equal(back.predict(2, d), ck.predict(2, d))
    np.testing.assert_array_equal(back.predict_dataset(ds), ck.predict_dataset(ds))


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError, match="not a recurrent"):
        NeuralInfluence.from_bytes(b"junk" * 10)
    ck = train_neural(_const_dataset(10, 1, 0), TrainConfig(hidden=2, epochs=1))[0]
    with pytest.raises(ValueError, match="trailing"):
        NeuralInfluence.from_bytes(ck.to_bytes() + b"\0")
    assert ck.to_bytes().startswith(MAGIC)


def test_unseen_record_maps_to_reserved_token():
    v = Vocab([(0,), (2,)])
    np.testing.assert_array_equal(v.encode(((2,), (5,), (0,))), [2, 0, 1])
    assert len(v) == 3


def test_bad_optimizer():
    with pytest.raises(ValueError):
        train_neural(_const_dataset(5, 1, 0), TrainConfig(optimizer="rmsprop"))
