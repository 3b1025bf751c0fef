"""Supervised training of the learned data modules.

Every learned module is trained on (input, oracle-label) pairs streamed
from the task domain, minibatch 20, with half of each batch replayed from
a 200-entry FIFO of recently misclassified samples. Training succeeds only
when exact agreement with the oracle holds on a large held-out probe; the
report never hides a miss, because one wrong module output anywhere breaks
a multi-step episode.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .data_modules import (
    LearnedALU,
    LearnedInput,
    LearnedOutput,
    LearnedTransformD,
    OracleALU,
    OracleOutput,
    OracleTransformD,
    derive_insertion_cells,
    equality_features,
    op_onehot,
    oracle_modules,
)
from .nets import AdamState, DenseNet, supervised_update

MODULE_IDS = ("input", "transform_d", "alu", "output")
BATCH_SIZE = 20
BUFFER_CAPACITY = 200
BUFFER_FRACTION = 0.5


@dataclass
class TrainingReport:
    module: str
    success: bool
    holdout_accuracy: float
    holdout_size: int
    steps_used: int
    budget: int
    probe_history: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "module": self.module,
            "success": self.success,
            "holdout_accuracy": self.holdout_accuracy,
            "holdout_size": self.holdout_size,
            "steps_used": self.steps_used,
            "budget": self.budget,
            "probe_history": self.probe_history,
        }


def _augmented_config(domain, rng) -> np.ndarray:
    """Sampled world pushed through a few random actions, widening coverage
    to the configurations episodes actually visit."""
    word = domain.sample_config(rng)
    for _ in range(int(rng.integers(0, 4))):
        word = domain.apply_op(word, int(rng.integers(0, 4)))
    return word


# ---- per-net sample generators (input vector, target rows) --------------------


def equality_sample(domain, rng):
    d_e = _augmented_config(domain, rng)
    draw = rng.random()
    if draw < 0.5:
        x = d_e.copy()
    elif draw < 0.8:
        x = d_e
        for _ in range(int(rng.integers(1, 4))):
            x = domain.apply_op(x, int(rng.integers(0, 4)))
    else:
        x = _augmented_config(domain, rng)
    equal = int(np.array_equal(d_e, x))
    target = np.zeros(2)
    target[equal] = 1.0
    return equality_features(d_e, x), target


def transform_d_sample(domain, rng, oracle: OracleTransformD):
    word = _augmented_config(domain, rng)
    return word.astype(float), oracle(word).astype(float)


def alu_control_sample(domain, rng, oracle_td, oracle_alu):
    word = _augmented_config(domain, rng)
    op = int(rng.integers(0, 5))
    view = oracle_td(word)
    c_a, _ = oracle_alu(op_onehot(op), view)
    target = np.zeros(2)
    target[c_a] = 1.0
    return np.concatenate([op_onehot(op), view]).astype(float), target


def alu_action_sample(domain, rng, oracle_td, oracle_alu):
    while True:
        word = _augmented_config(domain, rng)
        op = int(rng.integers(0, 4))
        view = oracle_td(word)
        c_a, d_a = oracle_alu(op_onehot(op), view)
        if c_a:
            return np.concatenate([op_onehot(op), view]).astype(float), d_a.astype(float)


def _output_scene(domain, rng, oracle_td, oracle_alu, oracle_out):
    word = _augmented_config(domain, rng)
    op = int(rng.integers(0, 5))
    view = oracle_td(word)
    c_a, d_a = oracle_alu(op_onehot(op), view)
    c_o, d_o = oracle_out(c_a, d_a, word)
    return word, c_a, d_a, c_o, d_o


def output_control_sample(domain, rng, oracle_td, oracle_alu, oracle_out):
    word, c_a, d_a, c_o, _ = _output_scene(domain, rng, oracle_td, oracle_alu, oracle_out)
    target = np.zeros(2)
    target[c_o] = 1.0
    return np.concatenate([[float(c_a)], d_a, word]).astype(float), target


def output_data_sample(domain, rng, oracle_td, oracle_alu, oracle_out):
    """Position targets recovered from the training tuple itself; the
    oracle's internal insertion mask is never consulted."""
    while True:
        word, c_a, d_a, c_o, d_o = _output_scene(domain, rng, oracle_td,
                                                 oracle_alu, oracle_out)
        if not c_a:
            continue
        cells = derive_insertion_cells(domain, word, d_a, d_o)
        if cells is None:
            continue
        n = domain.n_cells
        target = np.zeros(3 * n)
        for k, p in enumerate(cells):
            target[k * n + p] = 1.0
        return np.concatenate([d_a, word]).astype(float), target


# ---- generic trainer -----------------------------------------------------------


def _exact_rows(net: DenseNet, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    preds = net.forward(X)
    return np.all(preds == Y, axis=1)


def train_net(net: DenseNet, sample_fn, rng, budget: int,
              learning_rate: float = 1e-3, probe_every: int = 2000,
              probe_size: int = 1000, confirm_size: int = 4000,
              history: list | None = None, label: str = "") -> int:
    """Adam/cross-entropy with bad-memories replay; stops early once two
    growing probes in a row are perfect. Returns steps used."""
    adam = AdamState(net.param_count, learning_rate=learning_rate)
    buffer: deque = deque(maxlen=BUFFER_CAPACITY)
    step = 0
    while step < budget:
        step += 1
        n_replay = min(len(buffer), int(BATCH_SIZE * BUFFER_FRACTION))
        samples = [buffer[int(rng.integers(0, len(buffer)))] for _ in range(n_replay)]
        samples += [sample_fn(rng) for _ in range(BATCH_SIZE - n_replay)]
        X = np.stack([s[0] for s in samples])
        Y = np.stack([s[1] for s in samples])
        supervised_update(net, adam, X, Y)
        wrong = ~_exact_rows(net, X, Y)
        for i in np.flatnonzero(wrong):
            buffer.append(samples[i])
        if step % probe_every == 0:
            probe = [sample_fn(rng) for _ in range(probe_size)]
            acc = float(np.mean(_exact_rows(net,
                                            np.stack([s[0] for s in probe]),
                                            np.stack([s[1] for s in probe]))))
            if history is not None:
                history.append([label, step, acc])
            if acc == 1.0:
                confirm = [sample_fn(rng) for _ in range(confirm_size)]
                ok = _exact_rows(net, np.stack([s[0] for s in confirm]),
                                 np.stack([s[1] for s in confirm]))
                if np.all(ok):
                    return step
                for i in np.flatnonzero(~ok):
                    buffer.append(confirm[i])
    return step


# ---- module-level training and evaluation ----------------------------------------


def _oracle_parts(domain):
    td = OracleTransformD(domain)
    return td, OracleALU(domain), OracleOutput(domain, td)


def train_input_module(domain, rng, budget: int = 40_000):
    net = LearnedInput.architecture(domain.word_width)
    net.init_params(rng)
    history: list = []
    steps = train_net(net, lambda r: equality_sample(domain, r), rng, budget,
                      history=history, label="equality")
    module = LearnedInput(net)
    return module, steps, history


def train_transform_d_module(domain, rng, budget: int = 200_000):
    net = LearnedTransformD.architecture(domain.word_width)
    net.init_params(rng)
    oracle = OracleTransformD(domain)
    history: list = []
    steps = train_net(net, lambda r: transform_d_sample(domain, r, oracle), rng,
                      budget, history=history, label="view")
    return LearnedTransformD(net), steps, history


def train_alu_module(domain, rng, budget: int = 120_000):
    control, action = LearnedALU.architecture()
    control.init_params(rng)
    action.init_params(rng)
    td, alu, _ = _oracle_parts(domain)
    history: list = []
    steps = train_net(control, lambda r: alu_control_sample(domain, r, td, alu),
                      rng, budget // 2, history=history, label="control")
    steps += train_net(action, lambda r: alu_action_sample(domain, r, td, alu),
                       rng, budget - budget // 2, history=history, label="action")
    return LearnedALU(control, action), steps, history


def train_output_module(domain, rng, budget: int = 300_000):
    control, data = LearnedOutput.architecture(domain.word_width)
    control.init_params(rng)
    data.init_params(rng)
    td, alu, out = _oracle_parts(domain)
    history: list = []
    steps = train_net(control,
                      lambda r: output_control_sample(domain, r, td, alu, out),
                      rng, budget // 3, history=history, label="control")
    steps += train_net(data, lambda r: output_data_sample(domain, r, td, alu, out),
                       rng, budget - budget // 3, history=history, label="mask")
    return LearnedOutput(control, data), steps, history


def holdout_agreement(module_id: str, module, domain, rng, n: int) -> float:
    """Exact-agreement rate between a trained module and its oracle on n
    freshly sampled situations."""
    td, alu, out = _oracle_parts(domain)
    hits = 0
    if module_id == "input":
        for _ in range(n):
            d_e = _augmented_config(domain, rng)
            draw = rng.random()
            if draw < 0.5:
                x = d_e.copy()
            elif draw < 0.8:
                x = d_e
                for _ in range(int(rng.integers(1, 4))):
                    x = domain.apply_op(x, int(rng.integers(0, 4)))
            else:
                x = _augmented_config(domain, rng)
            want = int(np.array_equal(d_e, x))
            got = int(module.net.forward(equality_features(d_e, x))[1] > 0.5)
            hits += got == want
    elif module_id == "transform_d":
        for _ in range(n):
            word = _augmented_config(domain, rng)
            hits += int(np.array_equal(module(word.astype(float)), td(word)))
    elif module_id == "alu":
        for _ in range(n):
            word = _augmented_config(domain, rng)
            op = int(rng.integers(0, 5))
            view = td(word)
            want = alu(op_onehot(op), view)
            got = module(op_onehot(op), view)
            hits += int(got[0] == want[0] and np.array_equal(got[1], want[1]))
    elif module_id == "output":
        for _ in range(n):
            word = _augmented_config(domain, rng)
            op = int(rng.integers(0, 5))
            c_a, d_a = alu(op_onehot(op), td(word))
            want = out(c_a, d_a, word)
            got = module(c_a, d_a, word)
            hits += int(got[0] == want[0] and np.array_equal(got[1], want[1]))
    else:
        raise ValueError(f"unknown module {module_id!r}")
    return hits / n


_TRAINERS = {
    "input": train_input_module,
    "transform_d": train_transform_d_module,
    "alu": train_alu_module,
    "output": train_output_module,
}

DEFAULT_BUDGETS = {
    "input": 40_000,
    "transform_d": 200_000,
    "alu": 120_000,
    "output": 300_000,
}


def train_data_module(module_id: str, domain, rng, budget: int | None = None,
                      holdout: int = 10_000, holdout_seed: int = 900_000):
    """Train one learned module and verify exact oracle agreement.

    The held-out probe uses its own seeded stream so reported accuracy is
    reproducible and independent of how long training ran.
    """
    if module_id not in _TRAINERS:
        raise ValueError(f"unknown module {module_id!r}; pick from {MODULE_IDS}")
    budget = budget if budget is not None else DEFAULT_BUDGETS[module_id]
    module, steps, history = _TRAINERS[module_id](domain, rng, budget)
    probe_rng = np.random.default_rng(holdout_seed)
    acc = holdout_agreement(module_id, module, domain, probe_rng, holdout)
    report = TrainingReport(module_id, acc == 1.0, acc, holdout, steps, budget,
                            history)
    return module, report
