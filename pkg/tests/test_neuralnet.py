import numpy as np
import pytest

from notchlab import neuralnet as nn
from notchlab import synth
from notchlab.data import CLASSES, Encoder, class_index
from notchlab.evaluate import evaluate


def _zero_net(d, hidden=(5, 4)):
    net = nn.init_network(d, nn.default_architecture(hidden))
    for W, b in zip(net.weights, net.biases):
        W[:] = 0.0
        b[:] = 0.0
    return net


def test_zero_network_uniform_and_lowest_class():
    net = _zero_net(3)
    P = nn.forward(net, np.ones((4, 3)))
    assert np.allclose(P, 1 / 14)
    assert np.all(net.predict(np.ones((4, 3))) == 2)


def test_single_relu_neuron():
    arch = [nn.LayerSpec(1, nn.RELU), nn.LayerSpec(14, nn.SOFTMAX)]
    net = nn.init_network(1, arch)
    net.weights[0][:] = 1.0
    net.biases[0][:] = 0.0
    acts, _ = nn._forward_cache(net, np.array([[-3.0], [2.0]]))
    assert acts[1][:, 0].tolist() == [0.0, 2.0]


def test_output_normalized_and_positive(rng):
    net = nn.init_network(6, seed=4)
    P = nn.forward(net, rng.normal(size=(50, 6)))
    assert np.all(P > 0)
    assert np.all(np.abs(P.sum(axis=1) - 1) < 1e-12)


def test_architecture_parameter_count():
    net = nn.init_network(80)
    widths = [80, 56, 42, 28, 14]
    assert net.widths == widths
    assert net.n_params() == nn.param_count(widths) == sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:]))
    with pytest.raises(ValueError):
        nn.init_network(3, [nn.LayerSpec(5, nn.SOFTMAX), nn.LayerSpec(14, nn.SOFTMAX)])
    with pytest.raises(ValueError):
        nn.init_network(3, [nn.LayerSpec(5, nn.RELU), nn.LayerSpec(10, nn.SOFTMAX)])


def test_he_initialization_scale():
    net = nn.init_network(400, seed=0)
    assert np.std(net.weights[0]) == pytest.approx(np.sqrt(2 / 400), rel=0.05)
    assert all(np.all(b == 0) for b in net.biases)


def test_output_bias_gradient_on_zero_input():
    net = _zero_net(3)
    y = np.array([0, 7, 7, 13])
    _, gb, _ = nn.backward(net, np.zeros((4, 3)), y)
    expect = np.full(14, 1 / 14)
    expect -= np.bincount(y, minlength=14) / 4
    assert np.allclose(gb[-1], expect, atol=1e-15)


def test_backward_matches_central_differences():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(16, 7))
    y = rng.integers(0, 14, 16)
    net = nn.init_network(7, nn.default_architecture((9, 8, 6)), seed=3)
    for b in net.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    gW, gb, _ = nn.backward(net, X, y)
    eps = 1e-5
    worst = 0.0
    for _ in range(30):
        j = int(rng.integers(len(net.weights)))
        use_bias = rng.random() < 0.3
        arr, g = (net.biases[j], gb[j]) if use_bias else (net.weights[j], gW[j])
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + eps
        up = nn.loss(net, X, y)
        arr[idx] = old - eps
        dn = nn.loss(net, X, y)
        arr[idx] = old
        fd = (up - dn) / (2 * eps)
        worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8))
    assert worst < 1e-4


def test_duplicated_batch_same_gradient(rng):
    net = nn.init_network(5, seed=1)
    X, y = rng.normal(size=(8, 5)), rng.integers(0, 14, 8)
    a = nn.backward(net, X, y)
    b = nn.backward(net, np.vstack([X, X]), np.concatenate([y, y]))
    for u, v in zip(a[0] + a[1], b[0] + b[1]):
        assert np.allclose(u, v, atol=1e-14)


def _toy():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-2, 0.3, (10, 2)), rng.normal(2, 0.3, (10, 2))])
    return X, np.array([9] * 10 + [10] * 10)


def test_separable_toy_fit():
    X, y = _toy()
    net = nn.train(X, y, cfg=nn.TrainConfig(epochs=200, batch_size=4))
    assert np.mean(net.predict(X) == y) == 1.0


def test_zero_learning_rate_keeps_init():
    X, y = _toy()
    net = nn.train(X, y, cfg=nn.TrainConfig(epochs=3, learning_rate=0.0, seed=5))
    ref = nn.init_network(2, seed=5)
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, ref.weights))


def test_same_seed_same_params():
    X, y = _toy()
    a = nn.train(X, y, cfg=nn.TrainConfig(epochs=5, seed=2))
    b = nn.train(X, y, cfg=nn.TrainConfig(epochs=5, seed=2))
    assert all(np.array_equal(u, v) for u, v in zip(a.weights + a.biases, b.weights + b.biases))


def test_divergence_aborts_with_epoch():
    X, y = _toy()
    with pytest.raises(nn.TrainingError, match=r"diverged at epoch [1-3]\b"):
        with np.errstate(all="ignore"):
            nn.train(X * 1e3, y, cfg=nn.TrainConfig(epochs=3, learning_rate=1e300, batch_size=4))


def test_small_rate_descends_on_fixed_batch(rng):
    X, y = rng.normal(size=(64, 6)), rng.integers(2, 16, 64)
    ok = []
    for lr in (1e-1, 1e-2, 1e-3, 1e-4):
        net = nn.train(X, y, cfg=nn.TrainConfig(epochs=10, batch_size=64, learning_rate=lr, seed=0))
        ok.append(np.all(np.diff(net.loss_trace) <= 0))
    assert any(ok)


def test_predict_is_argmax_of_forward(rng):
    net = nn.init_network(4, seed=9)
    X = rng.normal(size=(40, 4))
    assert np.array_equal(net.predict(X), CLASSES[np.argmax(nn.forward(net, X), axis=1)])


def test_beats_nir_at_desk_scale():
    ds, _ = synth.generate(synth.GeneratorConfig(n=3000, seed=1))
    cols = ds.schema.predictors()
    tr, te = ds.subset(np.arange(2400)), ds.subset(np.arange(2400, 3000))
    enc = Encoder.fit(tr, cols)
    net = nn.train(enc.transform(tr), tr.labels, cfg=nn.TrainConfig(epochs=30))
    rep = evaluate(net.predict(enc.transform(te)), te.labels)
    assert rep.accuracy > rep.nir and rep.accuracy_pvalue < 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        nn.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        nn.LayerSpec(0)
