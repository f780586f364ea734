"""Small fully connected Q-network with hand-written backprop and plain SGD."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_MAGIC = b"UAVQMLP\x00"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "relu"

    @property
    def dims(self) -> Tuple[int, int]:
        return self.weights.shape[1], self.weights.shape[0]


class Mlp:
    def __init__(self, layers: Sequence[Layer]):
        layers = list(layers)
        if not layers:
            raise ShapeError("an Mlp needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.weights.ndim != 2 or layer.biases.shape != (layer.weights.shape[0],):
                raise ShapeError(f"layer {i}: weights {layer.weights.shape} / biases {layer.biases.shape}")
            if i and layer.weights.shape[1] != layers[i - 1].weights.shape[0]:
                raise ShapeError(f"layer {i} expects {layer.weights.shape[1]} inputs, previous layer emits {layers[i - 1].weights.shape[0]}")
        if layers[-1].activation != "identity":
            raise ValueError("output layer must be linear")
        self.layers = layers

    @classmethod
    def init(cls, sizes: Sequence[int], seed=None) -> "Mlp":
        """Glorot-uniform weights, zero biases, ReLU hidden units."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            act = "identity" if i == len(sizes) - 2 else "relu"
            layers.append(Layer(rng.uniform(-limit, limit, (n_out, n_in)), np.zeros(n_out), act))
        return cls(layers)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "Mlp":
        layers = [
            Layer(np.zeros((n_out, n_in)), np.zeros(n_out), "identity" if i == len(sizes) - 2 else "relu")
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        return cls(layers)

    @property
    def sizes(self) -> List[int]:
        return [self.layers[0].weights.shape[1]] + [l.weights.shape[0] for l in self.layers]

    @property
    def n_in(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.layers[-1].weights.shape[0]

    def params(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.biases]
        return out

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in self.params())


class Experiences(NamedTuple):
    """A mini-batch in column form."""

    states: np.ndarray  # (n, d)
    actions: np.ndarray  # (n,) int
    rewards: np.ndarray  # (n,)
    next_states: np.ndarray  # (n, d)
    dones: np.ndarray  # (n,) bool


Gradients = List[Tuple[np.ndarray, np.ndarray]]


def _check_input(net: Mlp, x: np.ndarray) -> None:
    if x.shape[-1] != net.n_in:
        raise ShapeError(f"network expects {net.n_in} inputs, got {x.shape[-1]}")


def _forward_cache(net: Mlp, x: np.ndarray):
    acts = [x]
    for layer in net.layers:
        z = x @ layer.weights.T + layer.biases
        x = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(x)
    return acts


def forward(net: Mlp, state) -> np.ndarray:
    """Q-values for one state ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(state, dtype=float)
    if x.ndim not in (1, 2):
        raise ShapeError(f"expected a vector or a batch, got shape {x.shape}")
    _check_input(net, x)
    for layer in net.layers:
        x = x @ layer.weights.T + layer.biases
        if layer.activation == "relu":
            x = np.maximum(x, 0.0)
    return x


def _check_batch(batch: Experiences, train_net: Mlp, target_net: Mlp) -> None:
    if len(batch.actions) == 0:
        raise ValueError("empty batch")
    if train_net.sizes != target_net.sizes:
        raise ShapeError(f"training net {train_net.sizes} and target net {target_net.sizes} differ")
    _check_input(train_net, batch.states)
    _check_input(train_net, batch.next_states)


def td_targets(batch: Experiences, target_net: Mlp, gamma: float) -> np.ndarray:
    """r + gamma * max_a' Q(s', a'; target), with no bootstrap on terminal transitions."""
    q_next = forward(target_net, batch.next_states).max(axis=1)
    return batch.rewards + gamma * np.where(batch.dones, 0.0, q_next)


def loss(batch: Experiences, train_net: Mlp, target_net: Mlp, gamma: float) -> float:
    _check_batch(batch, train_net, target_net)
    y = td_targets(batch, target_net, gamma)
    pred = forward(train_net, batch.states)[np.arange(len(y)), batch.actions]
    return float(np.mean((y - pred) ** 2))


def loss_and_backward(batch: Experiences, train_net: Mlp, target_net: Mlp, gamma: float) -> Tuple[float, Gradients]:
    _check_batch(batch, train_net, target_net)
    n = len(batch.actions)
    y = td_targets(batch, target_net, gamma)
    acts = _forward_cache(train_net, np.asarray(batch.states, dtype=float))
    rows = np.arange(n)
    err = y - acts[-1][rows, batch.actions]
    delta = np.zeros_like(acts[-1])
    delta[rows, batch.actions] = -2.0 * err / n
    grads: Gradients = []
    for i in range(len(train_net.layers) - 1, -1, -1):
        layer = train_net.layers[i]
        if layer.activation == "relu":
            delta = delta * (acts[i + 1] > 0)
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i:
            delta = delta @ layer.weights
    grads.reverse()
    return float(np.mean(err**2)), grads


def backward(batch: Experiences, train_net: Mlp, target_net: Mlp, gamma: float) -> Gradients:
    """Gradient of ``loss`` w.r.t. the training net only; the target net is a constant."""
    return loss_and_backward(batch, train_net, target_net, gamma)[1]


def sgd_step(net: Mlp, grads: Gradients, lr: float) -> Mlp:
    """In-place ``theta -= lr * grad``; returns ``net``."""
    if len(grads) != len(net.layers):
        raise ShapeError(f"{len(grads)} gradient pairs for {len(net.layers)} layers")
    for layer, (gw, gb) in zip(net.layers, grads):
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise ShapeError(f"gradient shapes {gw.shape}/{gb.shape} vs {layer.weights.shape}/{layer.biases.shape}")
    if lr == 0:
        return net
    for layer, (gw, gb) in zip(net.layers, grads):
        layer.weights -= lr * gw
        layer.biases -= lr * gb
    return net


def copy_weights(src: Mlp) -> Mlp:
    return Mlp([Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in src.layers])


def save_checkpoint(net: Mlp, path) -> None:
    """Layout: magic, u32 version, u32 n_layers, per layer (u32 in, u32 out, u8 act), then float64 W, b per layer."""
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(net.layers))
    for layer in net.layers:
        n_in, n_out = layer.dims
        header += struct.pack("<IIB", n_in, n_out, ACTIVATIONS.index(layer.activation))
    Path(path).write_bytes(header + net.to_bytes())


def load_checkpoint(path, expected_sizes: Sequence[int] = None) -> Mlp:
    data = Path(path).read_bytes()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a Q-network checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, n_layers = struct.unpack_from("<II", data, off)
    off += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    specs = []
    for _ in range(n_layers):
        specs.append(struct.unpack_from("<IIB", data, off))
        off += struct.calcsize("<IIB")
    layers = []
    for n_in, n_out, act in specs:
        w = np.frombuffer(data, "<f8", n_in * n_out, off).reshape(n_out, n_in).astype(float)
        off += 8 * n_in * n_out
        b = np.frombuffer(data, "<f8", n_out, off).astype(float)
        off += 8 * n_out
        layers.append(Layer(w, b, ACTIVATIONS[act]))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    net = Mlp(layers)
    if expected_sizes is not None and list(expected_sizes) != net.sizes:
        raise ShapeError(f"{path}: checkpoint has layer sizes {net.sizes}, expected {list(expected_sizes)}")
    return net
