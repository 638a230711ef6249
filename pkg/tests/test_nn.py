import numpy as np
import pytest

from fd import central_diff, rel_err
from stdmark.core import WatermarkMessage, flatten_weights, generate_key
from stdmark.nn import (
    EmbedSpec,
    NesterovSGD,
    Network,
    TrainConfig,
    TrainingDiverged,
    avgpool_global,
    backward,
    conv2d,
    cross_entropy,
    dense,
    evaluate,
    forward,
    relu,
    softmax_head,
    synth_dataset,
    total_loss,
    train,
    training_gradient,
)
from stdmark.nn.network import LayerSpec
from stdmark.regularizer import DecoderKind, soft_responses


def dense_net(seed, sizes=(3, 5, 4), frozen=()):
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        if i:
            layers.append(relu())
        layers.append(dense(f"fc{i}", a, b, trainable=f"fc{i}" not in frozen))
    return Network(layers + [softmax_head()], seed=seed)


def small_conv_net(seed, d=2, width=3, host=4, classes=3):
    return Network(
        [conv2d("c1", 3, d, width), relu(), conv2d("c2", 3, width, host), relu(), avgpool_global(),
         dense("fc", host, classes), softmax_head()],
        seed=seed,
    )


def flat_params(net):
    return np.concatenate([net.params[i][k].ravel() for i in sorted(net.params) for k in ("W", "b")])


def set_flat(net, theta):
    net = net.copy()
    pos = 0
    for i in sorted(net.params):
        for k in ("W", "b"):
            a = net.params[i][k]
            net.params[i][k] = theta[pos : pos + a.size].reshape(a.shape)
            pos += a.size
    return net


def flat_grads(net, grads):
    return np.concatenate([grads[i][k].ravel() for i in sorted(net.params) for k in ("W", "b")])


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        conv2d("c", 2, 1, 1)
    with pytest.raises(ValueError):
        LayerSpec("dense", fan_in=2, fan_out=2)
    with pytest.raises(ValueError):
        Network([dense("a", 2, 2), dense("a", 2, 2), softmax_head()])
    with pytest.raises(ValueError):
        Network([dense("a", 2, 2)])
    assert LayerSpec.from_dict(conv2d("c", 3, 4, 5).to_dict()) == conv2d("c", 3, 4, 5)


def test_host_layout():
    net = small_conv_net(0)
    assert net.layer("c2").host_size == 27
    assert net.layer("fc").host_shape == (1, 1, 12, 1)
    np.testing.assert_array_equal(flatten_weights(net.host_weights("fc")), net.params["fc"]["W"].ravel())


def test_zero_logits_give_uniform():
    net = dense_net(0, (3, 4))
    net.params["fc0"]["W"][:] = 0
    net.params["fc0"]["b"][:] = 0
    probs, _ = forward(net, np.ones((2, 3)))
    np.testing.assert_array_equal(probs, np.full((2, 4), 0.25))


def test_one_hot_selects_weight_row():
    net = Network([dense("fc", 4, 3), softmax_head()], seed=1)
    net.params["fc"]["b"][:] = 0
    x = np.zeros((1, 4))
    x[0, 2] = 1
    logits = np.log(forward(net, x)[0][0])
    np.testing.assert_allclose(logits - logits.mean(), net.params["fc"]["W"][2] - net.params["fc"]["W"][2].mean(),
                               atol=1e-12)


def test_probabilities_valid_for_random_nets():
    rng = np.random.default_rng(0)
    for seed in range(30):
        net = small_conv_net(seed)
        probs, _ = forward(net, rng.standard_normal((5, 4, 4, 2)) * 3)
        assert np.all(np.isfinite(probs)) and np.all((probs > 0) & (probs < 1))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_forward_shape_errors():
    with pytest.raises(ValueError):
        forward(dense_net(0), np.ones((2, 4)))
    with pytest.raises(ValueError):
        forward(small_conv_net(0), np.ones((2, 4, 4, 3)))


def test_backward_matches_finite_differences_dense():
    rng = np.random.default_rng(1)
    for seed in range(20):
        net = dense_net(seed)
        x, y = rng.standard_normal((6, 3)), rng.integers(0, 4, 6)
        theta = flat_params(net)
        num = central_diff(lambda t: cross_entropy(forward(set_flat(net, t), x)[0], y), theta)
        _, cache = forward(net, x)
        assert rel_err(num, flat_grads(net, backward(net, cache, y))) <= 1e-5


def test_backward_matches_finite_differences_conv():
    rng = np.random.default_rng(2)
    for seed in range(5):
        net = small_conv_net(seed)
        x, y = rng.standard_normal((3, 4, 4, 2)), rng.integers(0, 3, 3)
        theta = flat_params(net)
        num = central_diff(lambda t: cross_entropy(forward(set_flat(net, t), x)[0], y), theta)
        _, cache = forward(net, x)
        assert rel_err(num, flat_grads(net, backward(net, cache, y))) <= 1e-5


def test_confident_predictions_have_tiny_gradient():
    net = Network([dense("fc", 2, 2), softmax_head()], seed=0)
    net.params["fc"]["W"][:] = [[40.0, -40.0], [-40.0, 40.0]]
    net.params["fc"]["b"][:] = 0
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    _, cache = forward(net, x)
    g = backward(net, cache, np.array([0, 1]))
    assert np.linalg.norm(flat_grads(net, g)) < 1e-6


def test_frozen_layer_has_no_gradient():
    net = dense_net(0, frozen=("fc0",))
    _, cache = forward(net, np.ones((2, 3)))
    grads = backward(net, cache, np.array([0, 1]))
    assert set(grads) == {"fc1"}


def test_full_training_loss_gradient_with_regularizers():
    rng = np.random.default_rng(3)
    for t in range(20):
        net = small_conv_net(t)
        x, y = rng.standard_normal((3, 4, 4, 2)), rng.integers(0, 3, 3)
        dec = DecoderKind.ss() if t % 2 else DecoderKind.stdm()
        embeds = [EmbedSpec("c2", generate_key(t, 5, 27), WatermarkMessage.random(5, t), dec),
                  EmbedSpec("fc", generate_key(t + 1, 4, 12), WatermarkMessage.random(4, t + 1), dec)]
        # the analytic gradient is that of the unclamped loss; keep responses off the clamp
        net.params["fc"]["W"] *= 0.1
        for e in embeds:
            r = soft_responses(e.host(net), e.key, dec)
            assert np.all((r > 1e-9) & (r < 1 - 1e-9))
        theta = flat_params(net)
        num = central_diff(lambda th: total_loss(set_flat(net, th), x, y, 0.01, embeds), theta)
        _, grads = training_gradient(net, x, y, 0.01, embeds)
        assert rel_err(num, flat_grads(net, grads)) <= 1e-5


def test_gradient_additivity():
    rng = np.random.default_rng(4)
    net = small_conv_net(0)
    x, y = rng.standard_normal((4, 4, 4, 2)), rng.integers(0, 3, 4)
    e = EmbedSpec("c2", generate_key(9, 6, 27), WatermarkMessage.random(6, 9), DecoderKind.stdm())
    _, cache = forward(net, x)
    plain = backward(net, cache, y)
    _, combined = training_gradient(net, x, y, 0.5, [e])
    np.testing.assert_array_equal(combined["c2"]["W"], plain["c2"]["W"] + 0.5 * e.weight_gradient(net))
    np.testing.assert_array_equal(combined["c1"]["W"], plain["c1"]["W"])


def test_nesterov_step():
    opt = NesterovSGD(0.9)
    params = {"a": {"W": np.array([1.0]), "b": np.array([0.0])}}
    g = {"a": {"W": np.array([2.0]), "b": np.array([0.0])}}
    opt.step(params, g, 0.1)
    # v = 2, p = 1 - 0.1 * (2 + 0.9 * 2)
    assert params["a"]["W"][0] == pytest.approx(1 - 0.38)
    opt.step(params, g, 0.1)
    # v = 0.9 * 2 + 2 = 3.8, p -= 0.1 * (2 + 0.9 * 3.8)
    assert params["a"]["W"][0] == pytest.approx(1 - 0.38 - 0.542)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, lr_schedule=((5, 0.2), (5, 0.2)))
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, lr_schedule=((10, 0.2),))
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    cfg = TrainConfig(epochs=60, learning_rate=1.0)
    assert cfg.lr_at(0) == 1.0 and cfg.lr_at(20) == pytest.approx(0.2) and cfg.final_lr == pytest.approx(0.04)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def blob_data(seed=0, noise=0.5):
    return synth_dataset("gaussian-blobs", 3, 20, noise, seed=seed, image_shape=(4, 4, 2))


def test_lambda_zero_ignores_embeds_bit_exactly():
    data = blob_data()
    cfg = TrainConfig(epochs=3, batch_size=8, lam=0.0, lr_schedule=())
    e = EmbedSpec("c2", generate_key(1, 8, 27), WatermarkMessage.random(8, 1), DecoderKind.ss())
    a, _ = train(small_conv_net(5), data, cfg, [e])
    b, _ = train(small_conv_net(5), data, cfg)
    assert a == b


def test_training_is_reproducible():
    data = blob_data()
    cfg = TrainConfig(epochs=3, batch_size=8, lr_schedule=((1, 0.5),))
    e = EmbedSpec("c2", generate_key(1, 8, 27), WatermarkMessage.random(8, 1), DecoderKind.stdm())
    a, ha = train(small_conv_net(5), data, cfg, [e])
    b, hb = train(small_conv_net(5), data, cfg, [e])
    assert a == b and ha == hb
    c, _ = train(small_conv_net(5), data, TrainConfig(epochs=3, batch_size=8, lr_schedule=((1, 0.5),), seed=1), [e])
    assert not a == c


def test_history_shape():
    data = blob_data()
    e = EmbedSpec("c2", generate_key(1, 8, 27), WatermarkMessage.random(8, 1), DecoderKind.ss())
    _, h = train(small_conv_net(5), data, TrainConfig(epochs=4, batch_size=8, lr_schedule=((2, 0.1),)), [e])
    assert len(h.e0) == len(h.ter) == len(h.ber) == len(h.er) == 4
    assert h.lr == pytest.approx([0.01, 0.01, 0.001, 0.001])


def test_invalid_embed_rejected():
    data = blob_data()
    bad = EmbedSpec("c2", generate_key(1, 8, 26), WatermarkMessage.random(8, 1), DecoderKind.ss())
    with pytest.raises(ValueError):
        train(small_conv_net(5), data, TrainConfig(epochs=1), [bad])
    with pytest.raises(ValueError):
        EmbedSpec("c2", generate_key(1, 8, 27), WatermarkMessage.random(7, 1), DecoderKind.ss())


def test_divergence_detected():
    data = blob_data()
    net = small_conv_net(5)
    net.params["fc"]["W"][:] = np.nan
    with pytest.raises(TrainingDiverged):
        train(net, data, TrainConfig(epochs=1, lr_schedule=()))


def test_evaluate_constant_net():
    data = synth_dataset("gaussian-blobs", 4, 40, 1.0, seed=3, dim=5)
    net = Network([dense("fc", 5, 4), softmax_head()], seed=0)
    net.params["fc"]["W"][:] = 0
    net.params["fc"]["b"][:] = [5, 0, 0, 0]
    assert evaluate(net, data) == pytest.approx(0.75)
    assert evaluate(net, data) == evaluate(net, data)


def test_evaluate_memorizing_net():
    x = np.eye(10)
    y = np.arange(10) % 3
    data = synth_dataset("gaussian-blobs", 3, 4, seed=0, dim=10)
    data.x_test, data.y_test = x, y
    net = Network([dense("fc", 10, 3), softmax_head()], seed=0)
    net.params["fc"]["W"][:] = 0
    net.params["fc"]["b"][:] = 0
    net.params["fc"]["W"][np.arange(10), y] = 10
    assert evaluate(net, data) == 0.0


def test_evaluate_empty_test_split():
    data = blob_data()
    data.x_test, data.y_test = data.x_test[:0], data.y_test[:0]
    with pytest.raises(ValueError):
        evaluate(small_conv_net(0), data)


@pytest.mark.parametrize("kind", ["gaussian-blobs", "spirals"])
def test_dataset_deterministic_and_balanced(kind):
    a = synth_dataset(kind, 4, 50, 0.2, seed=9)
    b = synth_dataset(kind, 4, 50, 0.2, seed=9)
    np.testing.assert_array_equal(a.x_train, b.x_train)
    np.testing.assert_array_equal(a.y_test, b.y_test)
    assert np.bincount(a.y_train).tolist() == [38] * 4
    assert np.bincount(a.y_test).tolist() == [12] * 4
    assert not np.array_equal(a.x_train, synth_dataset(kind, 4, 50, 0.2, seed=10).x_train)


def test_dataset_split_disjoint():
    d = synth_dataset("gaussian-blobs", 3, 30, 1.0, seed=2, dim=4)
    train_rows = {r.tobytes() for r in d.x_train}
    assert not any(r.tobytes() in train_rows for r in d.x_test)


def test_image_dataset_shape():
    d = synth_dataset("gaussian-blobs", 4, 10, 1.0, seed=0, image_shape=(6, 6, 8))
    assert d.input_shape == (6, 6, 8)
    with pytest.raises(ValueError):
        synth_dataset("spirals", 3, 10, image_shape=(2, 2, 1))
    with pytest.raises(ValueError):
        synth_dataset("moons", 3, 10)


def test_noise_free_blobs_are_learned():
    data = synth_dataset("gaussian-blobs", 4, 25, 0.0, seed=4, dim=6)
    net = dense_net(0, (6, 16, 4))
    train(net, data, TrainConfig(epochs=40, batch_size=10, learning_rate=0.1, lr_schedule=(), lam=0.0))
    assert evaluate(net, data) == 0.0
