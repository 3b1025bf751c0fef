"""Minimal dense-network substrate.

Small fully-connected stacks with a handful of activations, flat parameter
(genome) views for evolutionary search, and a reverse-mode trainer (Adam on
cross-entropy) for the supervised modules. No autodiff framework: layers are
plain numpy arrays and gradients are accumulated by hand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "leaky_relu", "linear", "argmax_onehot")
LEAKY_SLOPE = 0.01
INIT_SCALE = 0.1


class ConfigurationError(ValueError):
    """Layer widths or activations that cannot form a valid network."""


class TrainingDiverged(RuntimeError):
    """Raised when a supervised update produces a non-finite loss."""


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: str = "linear"

    def __post_init__(self):
        if self.input_width <= 0 or self.output_width <= 0:
            raise ConfigurationError(f"layer widths must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def param_count(self) -> int:
        return self.output_width * (self.input_width + 1)


def _apply_activation(z: np.ndarray, activation: str, rows: tuple[int, ...]) -> np.ndarray:
    if activation == "linear":
        return z
    if activation == "tanh":
        return np.tanh(z)
    if activation == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if activation == "argmax_onehot":
        out = np.zeros_like(z)
        start = 0
        for width in rows:
            seg = z[..., start:start + width]
            idx = np.argmax(seg, axis=-1)  # lowest index wins ties
            np.put_along_axis(out[..., start:start + width],
                              np.expand_dims(idx, -1), 1.0, axis=-1)
            start += width
        return out
    raise ConfigurationError(f"unknown activation {activation!r}")


class DenseNet:
    """A stack of dense layers with per-layer activations.

    ``output_rows`` partitions the final layer into groups; ``argmax_onehot``
    emits one 1 per group (ties break toward the lowest index) and the
    supervised trainer applies a softmax/cross-entropy per group.
    """

    def __init__(self, specs: list[LayerSpec], output_rows: tuple[int, ...] | None = None):
        if not specs:
            raise ConfigurationError("need at least one layer")
        for a, b in zip(specs, specs[1:]):
            if a.output_width != b.input_width:
                raise ConfigurationError(f"layer widths do not chain: {a} -> {b}")
            if a.activation == "argmax_onehot":
                raise ConfigurationError("argmax_onehot only permitted as a final layer")
        self.specs = list(specs)
        width = specs[-1].output_width
        self.output_rows = tuple(output_rows) if output_rows else (width,)
        if sum(self.output_rows) != width:
            raise ConfigurationError(
                f"output_rows {self.output_rows} do not sum to final width {width}")
        self.weights = [np.zeros((s.output_width, s.input_width)) for s in specs]
        self.biases = [np.zeros(s.output_width) for s in specs]

    @property
    def input_width(self) -> int:
        return self.specs[0].input_width

    @property
    def output_width(self) -> int:
        return self.specs[-1].output_width

    @property
    def param_count(self) -> int:
        return sum(s.param_count for s in self.specs)

    def init_params(self, rng: np.random.Generator, scale: float = INIT_SCALE) -> None:
        for w, b in zip(self.weights, self.biases):
            w[...] = rng.uniform(-scale, scale, size=w.shape)
            b[...] = rng.uniform(-scale, scale, size=b.shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_width:
            raise ConfigurationError(
                f"input width {x.shape[-1]} != expected {self.input_width}")
        for spec, w, b in zip(self.specs, self.weights, self.biases):
            z = x @ w.T + b
            x = _apply_activation(z, spec.activation, self.output_rows)
        return x

    # ---- flat parameter (genome-slice) access

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.param_count,):
            raise ConfigurationError(
                f"expected {self.param_count} parameters, got {values.shape}")
        pos = 0
        for w, b in zip(self.weights, self.biases):
            n = w.size
            w[...] = values[pos:pos + n].reshape(w.shape)
            pos += n
            b[...] = values[pos:pos + b.size]
            pos += b.size

    def clone(self) -> "DenseNet":
        other = DenseNet(self.specs, self.output_rows)
        other.set_flat(self.get_flat())
        return other

    # ---- training support

    def _forward_cached(self, x: np.ndarray):
        """Forward pass keeping pre-activations; final layer left as logits."""
        acts = [x]
        zs = []
        for i, (spec, w, b) in enumerate(zip(self.specs, self.weights, self.biases)):
            z = acts[-1] @ w.T + b
            zs.append(z)
            if i == len(self.specs) - 1:
                acts.append(z)  # logits; loss applies row softmax
            else:
                acts.append(_apply_activation(z, spec.activation, self.output_rows))
        return zs, acts


@dataclass
class AdamState:
    """Adam moments for one flat parameter vector."""

    size: int
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray = field(init=False)
    second_moment: np.ndarray = field(init=False)

    def __post_init__(self):
        self.first_moment = np.zeros(self.size)
        self.second_moment = np.zeros(self.size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.step_count += 1
        self.first_moment = self.beta1 * self.first_moment + (1 - self.beta1) * grad
        self.second_moment = self.beta2 * self.second_moment + (1 - self.beta2) * grad ** 2
        m_hat = self.first_moment / (1 - self.beta1 ** self.step_count)
        v_hat = self.second_moment / (1 - self.beta2 ** self.step_count)
        return params - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def _row_softmax(logits: np.ndarray, rows: tuple[int, ...]) -> np.ndarray:
    out = np.empty_like(logits)
    start = 0
    for width in rows:
        seg = logits[..., start:start + width]
        seg = seg - seg.max(axis=-1, keepdims=True)
        e = np.exp(seg)
        out[..., start:start + width] = e / e.sum(axis=-1, keepdims=True)
        start += width
    return out


def cross_entropy_and_grad(net: DenseNet, inputs: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over a batch plus the gradient w.r.t. net.get_flat().

    Targets are concatenated per-row distributions matching the final width.
    The loss for one sample sums the cross-entropies of its output rows.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n = inputs.shape[0]
    zs, acts = net._forward_cached(inputs)
    probs = _row_softmax(acts[-1], net.output_rows)
    loss = -np.sum(targets * np.log(np.clip(probs, 1e-300, None))) / n
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss!r} (batch of {n})")

    delta = (probs - targets) / n  # d loss / d logits, row softmax + CE
    grads_w = [None] * len(net.specs)
    grads_b = [None] * len(net.specs)
    for i in range(len(net.specs) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.weights[i]
            act = net.specs[i - 1].activation
            z = zs[i - 1]
            if act == "tanh":
                delta = delta * (1 - np.tanh(z) ** 2)
            elif act == "leaky_relu":
                delta = delta * np.where(z > 0, 1.0, LEAKY_SLOPE)
            elif act != "linear":
                raise ConfigurationError(f"cannot backprop through {act!r}")
    flat = np.concatenate([np.concatenate([gw.ravel(), gb])
                           for gw, gb in zip(grads_w, grads_b)])
    return loss, flat


def supervised_update(net: DenseNet, adam: AdamState, inputs, targets) -> float:
    """One Adam step on mean cross-entropy; updates the net in place."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 0:
        raise ConfigurationError("empty batch")
    loss, grad = cross_entropy_and_grad(net, inputs, targets)
    net.set_flat(adam.step(net.get_flat(), grad))
    return float(loss)


class GenomeView:
    """Flat view over an ordered list of named modules.

    Flattening order is the module order, then within each module layer by
    layer, weights (row-major) before biases. ``load`` writes a genome back
    into every module's arrays in place, so flatten/load round-trips exactly.
    """

    def __init__(self, modules: list[tuple[str, DenseNet]]):
        if not modules:
            raise ConfigurationError("empty module list")
        self.modules = list(modules)

    @property
    def length(self) -> int:
        return sum(net.param_count for _, net in self.modules)

    def flatten(self) -> np.ndarray:
        return np.concatenate([net.get_flat() for _, net in self.modules])

    def load(self, genome: np.ndarray) -> None:
        genome = np.asarray(genome, dtype=float)
        if genome.shape != (self.length,):
            raise ConfigurationError(
                f"genome length {genome.shape} != expected {self.length}")
        pos = 0
        for _, net in self.modules:
            net.set_flat(genome[pos:pos + net.param_count])
            pos += net.param_count

    def layout(self) -> list[dict]:
        return [
            {
                "name": name,
                "layers": [
                    {"in": s.input_width, "out": s.output_width, "act": s.activation}
                    for s in net.specs
                ],
                "output_rows": list(net.output_rows),
            }
            for name, net in self.modules
        ]

    def save(self, path) -> None:
        payload = {"layout": self.layout(), "values": self.flatten().tolist()}
        with open(path, "w") as fh:
            json.dump(payload, fh)

    def load_file(self, path) -> None:
        with open(path) as fh:
            payload = json.load(fh)
        if payload["layout"] != self.layout():
            raise ConfigurationError(f"genome file layout does not match: {path}")
        self.load(np.array(payload["values"], dtype=float))


def save_net(net: DenseNet, path) -> None:
    GenomeView([("net", net)]).save(path)


def load_net(path) -> DenseNet:
    with open(path) as fh:
        payload = json.load(fh)
    (entry,) = payload["layout"]
    specs = [LayerSpec(l["in"], l["out"], l["act"]) for l in entry["layers"]]
    net = DenseNet(specs, tuple(entry["output_rows"]))
    net.set_flat(np.array(payload["values"], dtype=float))
    return net
