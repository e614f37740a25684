import numpy as np
import pytest
import torch

from pseudosal.core import Dataset, Image
from pseudosal.dataio import SyntheticConfig, generate_synthetic
from pseudosal.errors import InvalidArgument, TrainingAborted
from pseudosal.model import (
    NetConfig,
    OptimConfig,
    forward,
    init_network,
    load_checkpoint,
    param_count,
    params_digest,
    predict_batch,
    save_checkpoint,
    train_epochs,
)

GOLDEN_PARAMS = "aafcf33e0ab1bc597629c99f527f9d5983e52b06c75f997cc92a04f405385e25"


def test_init_is_seeded():
    a, b = init_network(NetConfig(base_width=8, seed=0)), init_network(NetConfig(base_width=8, seed=0))
    assert params_digest(a) == params_digest(b) == GOLDEN_PARAMS
    assert param_count(a) == 61329
    assert params_digest(init_network(NetConfig(base_width=8, seed=1))) != GOLDEN_PARAMS


def test_forward_golden_values():
    img = generate_synthetic(SyntheticConfig(n_images=1, seed=7)).samples[0].image
    out = forward(init_network(NetConfig(base_width=8, seed=0)), img).values.astype(np.float64)
    assert out.sum() == pytest.approx(2122.0763759613037, abs=1e-3)
    assert out[0, 0] == pytest.approx(0.4919227957725525, abs=1e-6)
    assert out[31, 17] == pytest.approx(0.53148353099823, abs=1e-6)


def test_forward_pads_odd_sizes(rng):
    net = init_network(NetConfig(base_width=4))
    out = forward(net, Image(rng.random((37, 45, 3)).astype(np.float32)))
    assert out.values.shape == (37, 45)
    assert out.values.min() > 0 and out.values.max() < 1


def test_predict_batch_matches_forward(small_ds):
    net = init_network(NetConfig(base_width=4))
    imgs = [s.image for s in small_ds.samples[:3]]
    for a, im in zip(predict_batch(net, imgs, batch_size=2), imgs):
        np.testing.assert_allclose(a, forward(net, im).values, atol=1e-6)


def test_training_lowers_loss_and_is_deterministic(small_ds):
    train = small_ds.subset("train")
    targets = {s.id: s.gt for s in train}
    runs = []
    for _ in range(2):
        net = init_network(NetConfig(base_width=4, seed=3))
        hist = []
        seen = []
        train_epochs(net, train, targets, OptimConfig(base_lr=3e-3, batch_size=4, seed=5), 6,
                     on_forward=lambda i, p: seen.append(i), history=hist)
        runs.append((params_digest(net), hist))
        assert len(seen) == 6 * len(train)
    assert runs[0] == runs[1]
    assert runs[0][1][-1] < runs[0][1][0]


def test_multi_target_and_validation(small_ds):
    train = small_ds.subset("train")
    net = init_network(NetConfig(base_width=4))
    two = {s.id: [s.gt, s.gt] for s in train}
    train_epochs(net, train, two, OptimConfig(), 1)
    with pytest.raises(InvalidArgument):
        train_epochs(net, train, {}, OptimConfig(), 1)
    with pytest.raises(InvalidArgument):
        train_epochs(net, train, two, OptimConfig(), -1)


def test_non_finite_loss_aborts(small_ds):
    train = small_ds.subset("train")
    net = init_network(NetConfig(base_width=4))
    with torch.no_grad():
        next(net.parameters()).fill_(float("nan"))
    with pytest.raises(TrainingAborted) as info:
        train_epochs(net, train, {s.id: s.gt for s in train}, OptimConfig(), 1)
    assert "loss_trace" in info.value.diagnostics


def test_optim_lr_and_validation():
    assert OptimConfig(base_lr=1e-4, lr_multiplier=4).lr == pytest.approx(4e-4)
    with pytest.raises(InvalidArgument):
        OptimConfig(base_lr=0).validate()
    with pytest.raises(InvalidArgument):
        NetConfig(base_width=0).validate()


def test_checkpoint_roundtrip(tmp_path, rng):
    net = init_network(NetConfig(base_width=4, seed=9))
    save_checkpoint(tmp_path / "c" / "n.pt", net, epoch=3, extra={"k": 1})
    back, blob = load_checkpoint(tmp_path / "c" / "n.pt")
    assert params_digest(back) == params_digest(net)
    assert blob["epoch"] == 3 and blob["extra"] == {"k": 1}
    im = Image(rng.random((16, 16, 3)).astype(np.float32))
    np.testing.assert_array_equal(forward(back, im).values, forward(net, im).values)


def test_default_config_contract(small_ds):
    net = init_network(NetConfig())
    assert param_count(net) < 500_000
    assert forward(net, small_ds.samples[0].image).values.shape == (64, 64)


def test_hook_cardinality(small_ds):
    one = Dataset(small_ds.samples[:1], split="train")
    net = init_network(NetConfig(base_width=4))
    before = params_digest(net)
    calls = []
    train_epochs(net, one, {s.id: s.gt for s in one}, OptimConfig(), 0, on_forward=lambda i, p: calls.append(i))
    assert calls == [] and params_digest(net) == before
    train_epochs(net, one, {s.id: s.gt for s in one}, OptimConfig(), 1, on_forward=lambda i, p: calls.append(i))
    assert calls == [one.ids[0]]


def test_descent_on_ground_truth():
    ds = generate_synthetic(SyntheticConfig(n_images=20, seed=21))
    net = init_network(NetConfig(base_width=8, seed=2))
    hist = []
    train_epochs(net, ds, {s.id: s.gt for s in ds}, OptimConfig(base_lr=1e-3), 25, history=hist)
    assert hist[-1] < hist[0]
