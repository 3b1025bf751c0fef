import numpy as np
import pytest

from neurocomputer.data_modules import op_onehot, oracle_modules
from neurocomputer.domains import SokobanDomain
from neurocomputer.module_training import (
    DEFAULT_BUDGETS,
    MODULE_IDS,
    alu_action_sample,
    equality_sample,
    holdout_agreement,
    output_data_sample,
    train_data_module,
    train_net,
    transform_d_sample,
)
from neurocomputer.nets import DenseNet, LayerSpec

DOM = SokobanDomain(6)


def test_equality_sample_labels_are_exact():
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(300):
        feats, target = equality_sample(DOM, rng)
        assert feats.shape == (288,)
        equal = int(target[1])
        seen.add(equal)
        # features vanish exactly when the pair is equal
        assert (feats.sum() == 0) == bool(equal)
    assert seen == {0, 1}


def test_transform_d_sample_matches_oracle():
    rng = np.random.default_rng(1)
    mods = oracle_modules(DOM)
    word, target = transform_d_sample(DOM, rng, mods.transform_d)
    assert np.array_equal(target, mods.transform_d(word.astype(np.uint8)))


def test_alu_action_sample_only_successful_moves():
    rng = np.random.default_rng(2)
    for _ in range(50):
        x, y = alu_action_sample(DOM, rng, oracle_modules(DOM).transform_d,
                                 oracle_modules(DOM).alu)
        assert y[:4].sum() == 1  # direction always set


def test_output_data_sample_positions_are_one_hot_rows():
    rng = np.random.default_rng(3)
    mods = oracle_modules(DOM)
    x, y = output_data_sample(DOM, rng, mods.transform_d, mods.alu, mods.output)
    rows = y.reshape(3, 36)
    assert np.all(rows.sum(axis=1) == 1)


def test_train_net_bad_memories_replays_failures():
    rng = np.random.default_rng(4)
    calls = {"fresh": 0}

    def sample(r):
        calls["fresh"] += 1
        x = r.normal(size=4)
        target = np.zeros(2)
        target[int(x[0] > 0)] = 1.0
        return x, target

    net = DenseNet([LayerSpec(4, 8, "leaky_relu"), LayerSpec(8, 2, "argmax_onehot")])
    net.init_params(rng)
    steps = train_net(net, sample, rng, budget=1500, probe_every=500, probe_size=200,
                      confirm_size=400)
    assert steps <= 1500
    # replay means fewer fresh draws than batch * steps
    assert calls["fresh"] < steps * 20


def test_input_module_trains_to_full_agreement():
    module, report = train_data_module("input", DOM, np.random.default_rng(10),
                                       budget=20_000, holdout=2000)
    assert report.success
    assert report.holdout_accuracy == 1.0
    assert report.steps_used <= report.budget


def test_failure_is_reported_not_hidden():
    # a two-step budget cannot train anything; the report must say so
    module, report = train_data_module("transform_d", DOM,
                                       np.random.default_rng(11), budget=2,
                                       holdout=200)
    assert not report.success
    assert report.holdout_accuracy < 1.0


def test_unknown_module_rejected():
    with pytest.raises(ValueError):
        train_data_module("bogus", DOM, np.random.default_rng(0))


def test_budget_defaults_cover_all_modules():
    assert set(DEFAULT_BUDGETS) == set(MODULE_IDS)
