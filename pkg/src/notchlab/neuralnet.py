"""Feedforward classifier: ReLU hidden layers, softmax output, mini-batch SGD."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import CLASSES, N_CLASSES, class_index

HIDDEN = (56, 42, 28)
RELU, SOFTMAX = "relu", "softmax"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = RELU

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("layer width must be >= 1")
        if self.activation not in (RELU, SOFTMAX):
            raise ValueError(f"unknown activation {self.activation!r}")


def default_architecture(hidden: Sequence[int] = HIDDEN) -> list[LayerSpec]:
    return [LayerSpec(w, RELU) for w in hidden] + [LayerSpec(N_CLASSES, SOFTMAX)]


def _check_arch(arch: Sequence[LayerSpec]):
    if not arch or arch[-1].activation != SOFTMAX or arch[-1].width != N_CLASSES:
        raise ValueError(f"the output layer must be softmax with {N_CLASSES} units")
    if any(a.activation == SOFTMAX for a in arch[:-1]):
        raise ValueError("softmax is only allowed at the output layer")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate >= 0 required")


@dataclass
class Network:
    """weights[j] has shape (k_{j-1}, k_j); biases[j] has shape (k_j,)."""

    weights: list
    biases: list
    loss_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       self.loss_trace.copy())

    def predict_proba(self, X) -> np.ndarray:
        return forward(self, X)

    def predict(self, X) -> np.ndarray:
        return CLASSES[np.argmax(forward(self, X), axis=1)]


def param_count(widths: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:]))


def init_network(d: int, arch: Sequence[LayerSpec] | None = None, seed: int = 0) -> Network:
    """He-scaled normal weights, zero biases."""
    arch = default_architecture() if arch is None else list(arch)
    _check_arch(arch)
    rng = np.random.default_rng(seed)
    widths = [d] + [a.width for a in arch]
    W = [rng.normal(0.0, np.sqrt(2.0 / max(a, 1)), size=(a, b)) for a, b in zip(widths[:-1], widths[1:])]
    return Network(W, [np.zeros(b) for b in widths[1:]])


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(net: Network, X):
    acts = [np.atleast_2d(np.asarray(X, dtype=np.float64))]
    pre = []
    last = len(net.weights) - 1
    for j, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ W + b
        pre.append(z)
        acts.append(_softmax(z) if j == last else np.maximum(z, 0.0))
    return acts, pre


def forward(net: Network, X) -> np.ndarray:
    """Class probabilities for each row of ``X``."""
    return _forward_cache(net, X)[0][-1]


def loss(net: Network, X, y_idx) -> float:
    P = forward(net, X)
    return float(-np.mean(np.log(np.maximum(P[np.arange(len(P)), y_idx], 1e-300))))


def backward(net: Network, X, y_idx):
    """Gradients of the mean cross-entropy: (dW list, db list, loss)."""
    acts, pre = _forward_cache(net, X)
    n = acts[0].shape[0]
    P = acts[-1]
    lval = float(-np.mean(np.log(np.maximum(P[np.arange(n), y_idx], 1e-300))))
    delta = P.copy()
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    gW = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for j in range(len(net.weights) - 1, -1, -1):
        gW[j] = acts[j].T @ delta
        gb[j] = delta.sum(axis=0)
        if j:
            # ReLU derivative taken as 0 at 0
            delta = (delta @ net.weights[j].T) * (pre[j - 1] > 0)
    return gW, gb, lval


def train(X, ratings, arch: Sequence[LayerSpec] | None = None, cfg: TrainConfig = TrainConfig(),
          init: Network | None = None) -> Network:
    """Mini-batch SGD with a fixed rate; batch order comes from the seeded RNG."""
    X = np.asarray(X, dtype=np.float64)
    y_idx = class_index(ratings)
    n, d = X.shape
    net = init_network(d, arch, cfg.seed) if init is None else init.copy()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    trace = []
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            gW, gb, lval = backward(net, X[idx], y_idx[idx])
            total += lval * len(idx)
            for j in range(len(net.weights)):
                net.weights[j] -= lr * gW[j]
                net.biases[j] -= lr * gb[j]
        mean = total / n
        if not np.isfinite(mean) or mean > 1e6:
            raise TrainingError(f"training diverged at epoch {epoch + 1} (loss {mean:.3g})")
        trace.append(mean)
    net.loss_trace = np.array(trace)
    return net
