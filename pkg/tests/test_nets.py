import math

import numpy as np
import pytest

from neurocomputer.nets import (
    AdamState,
    ConfigurationError,
    DenseNet,
    GenomeView,
    LayerSpec,
    cross_entropy_and_grad,
    load_net,
    save_net,
    supervised_update,
)


def test_linear_zero_params_maps_to_zero():
    net = DenseNet([LayerSpec(4, 3, "linear")])
    out = net.forward(np.array([1.0, -2.0, 0.5, 3.0]))
    assert np.array_equal(out, np.zeros(3))


def test_argmax_onehot_tie_breaks_to_lowest_index():
    net = DenseNet([LayerSpec(5, 5, "argmax_onehot")])
    net.weights[0][...] = np.eye(5)
    out = net.forward(np.array([0.2, 0.9, 0.9, 0.1, 0.0]))
    assert np.array_equal(out, [0, 1, 0, 0, 0])


def test_argmax_onehot_per_output_row():
    net = DenseNet([LayerSpec(4, 4, "argmax_onehot")], output_rows=(2, 2))
    net.weights[0][...] = np.eye(4)
    out = net.forward(np.array([3.0, 1.0, -1.0, 2.0]))
    assert np.array_equal(out, [1, 0, 0, 1])


def test_argmax_onehot_only_final_layer():
    with pytest.raises(ConfigurationError):
        DenseNet([LayerSpec(3, 3, "argmax_onehot"), LayerSpec(3, 2, "linear")])


def test_width_mismatch_rejected():
    net = DenseNet([LayerSpec(4, 2, "tanh")])
    with pytest.raises(ConfigurationError):
        net.forward(np.zeros(3))
    with pytest.raises(ConfigurationError):
        DenseNet([LayerSpec(4, 2, "tanh"), LayerSpec(3, 2, "linear")])


def test_two_layer_tanh_matches_hand_evaluation():
    # expected value computed with explicit scalar arithmetic, not the net
    net = DenseNet([LayerSpec(2, 2, "tanh"), LayerSpec(2, 1, "tanh")])
    net.weights[0][...] = [[0.5, -0.25], [1.0, 0.75]]
    net.biases[0][...] = [0.1, -0.2]
    net.weights[1][...] = [[2.0, -1.5]]
    net.biases[1][...] = [0.05]
    x1, x2 = 1.0, -1.0
    h1 = math.tanh(0.5 * x1 + -0.25 * x2 + 0.1)
    h2 = math.tanh(1.0 * x1 + 0.75 * x2 - 0.2)
    expected = math.tanh(2.0 * h1 - 1.5 * h2 + 0.05)
    out = net.forward(np.array([x1, x2]))
    assert out.shape == (1,)
    assert abs(out[0] - expected) < 1e-12


def test_forward_is_pure():
    rng = np.random.default_rng(7)
    net = DenseNet([LayerSpec(3, 4, "leaky_relu"), LayerSpec(4, 2, "linear")])
    net.init_params(rng)
    before = net.get_flat()
    x = rng.normal(size=3)
    a = net.forward(x)
    b = net.forward(x)
    assert np.array_equal(a, b)
    assert np.array_equal(net.get_flat(), before)


# ---- genome views ----------------------------------------------------------


def test_genome_length_counts_weights_and_biases():
    view = GenomeView([("controller", DenseNet([LayerSpec(19, 16, "tanh")]))])
    assert view.length == 19 * 16 + 16 == 320


def test_genome_round_trip_identity():
    rng = np.random.default_rng(3)
    mods = [
        ("a", DenseNet([LayerSpec(5, 4, "tanh"), LayerSpec(4, 3, "linear")])),
        ("b", DenseNet([LayerSpec(2, 2, "linear")])),
    ]
    for _, net in mods:
        net.init_params(rng)
    view = GenomeView(mods)
    g = view.flatten()
    view.load(g)
    assert np.array_equal(view.flatten(), g)
    g2 = rng.normal(size=view.length)
    view.load(g2)
    assert np.array_equal(view.flatten(), g2)


def test_zero_genome_gives_activation_of_zero():
    view = GenomeView([("m", DenseNet([LayerSpec(3, 2, "tanh")]))])
    view.load(np.zeros(view.length))
    out = view.modules[0][1].forward(np.array([4.0, -1.0, 2.0]))
    assert np.array_equal(out, np.zeros(2))


def test_genome_file_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    net = DenseNet([LayerSpec(6, 5, "leaky_relu"), LayerSpec(5, 4, "argmax_onehot")],
                   output_rows=(2, 2))
    net.init_params(rng)
    path = tmp_path / "net.json"
    save_net(net, path)
    other = load_net(path)
    x = rng.normal(size=6)
    assert np.array_equal(net.forward(x), other.forward(x))
    assert np.array_equal(net.get_flat(), other.get_flat())


# ---- supervised trainer ----------------------------------------------------


def _random_net(rng, widths=(5, 4, 3), rows=None):
    specs = [LayerSpec(widths[i], widths[i + 1], "tanh" if i % 2 == 0 else "leaky_relu")
             for i in range(len(widths) - 2)]
    specs.append(LayerSpec(widths[-2], widths[-1], "argmax_onehot"))
    net = DenseNet(specs, rows)
    net.init_params(rng)
    return net


def test_gradient_matches_central_finite_differences():
    rng = np.random.default_rng(19)
    net = _random_net(rng, widths=(4, 3, 3), rows=(3,))
    inputs = rng.normal(size=(6, 4))
    idx = rng.integers(0, 3, size=6)
    targets = np.zeros((6, 3))
    targets[np.arange(6), idx] = 1.0

    _, grad = cross_entropy_and_grad(net, inputs, targets)

    base = net.get_flat()
    eps = 1e-6
    fd = np.zeros_like(base)
    for i in range(base.size):
        for sign in (+1, -1):
            probe = base.copy()
            probe[i] += sign * eps
            net.set_flat(probe)
            loss, _ = cross_entropy_and_grad(net, inputs, targets)
            fd[i] += sign * loss / (2 * eps)
    net.set_flat(base)

    denom = np.maximum(np.abs(fd), 1e-8)
    assert np.max(np.abs(grad - fd) / denom) <= 1e-4


def test_perfect_targets_leave_parameters_unchanged():
    rng = np.random.default_rng(23)
    net = _random_net(rng, widths=(3, 4, 2), rows=(2,))
    inputs = rng.normal(size=(4, 3))
    zs, acts = net._forward_cached(inputs)
    logits = acts[-1]
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    targets = e / e.sum(axis=1, keepdims=True)

    before = net.get_flat()
    adam = AdamState(net.param_count)
    supervised_update(net, adam, inputs, targets)
    assert np.allclose(net.get_flat(), before, atol=1e-12)


def test_separable_toy_problem_reaches_full_accuracy():
    rng = np.random.default_rng(5)
    net = DenseNet([LayerSpec(2, 8, "leaky_relu"), LayerSpec(8, 2, "argmax_onehot")])
    net.init_params(rng)
    adam = AdamState(net.param_count, learning_rate=1e-2)
    # classes separated by x0 + x1 >= 1
    xs = rng.uniform(-2, 2, size=(80, 2))
    labels = (xs.sum(axis=1) >= 1.0).astype(int)
    targets = np.zeros((80, 2))
    targets[np.arange(80), labels] = 1.0
    for _ in range(200):
        supervised_update(net, adam, xs, targets)
    preds = net.forward(xs).argmax(axis=1)
    assert np.array_equal(preds, labels)


def test_adam_step_count_increases():
    adam = AdamState(4)
    p = np.zeros(4)
    p = adam.step(p, np.ones(4))
    p = adam.step(p, np.ones(4))
    assert adam.step_count == 2
    assert np.all(p < 0)
