"""Per-point multilayer perceptron with hand-written backpropagation.

The network maps an ``(N, d)`` feature matrix through ReLU hidden layers to
``C`` logits and a softmax.  Everything runs in float64 so finite-difference
gradient checks are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass
class ModelParams:
    weights: list[np.ndarray]  # weights[i] has shape (fan_in, fan_out)
    biases: list[np.ndarray]

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def C(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.d, *self.hidden, self.C)

    def arrays(self) -> list[np.ndarray]:
        """Parameters in canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, layer_sizes) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(vec[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(vec[pos:pos + fan_out].copy())
            pos += fan_out
        if pos != vec.size:
            raise ShapeMismatch(f"parameter vector of length {vec.size} does not fit layers {layer_sizes}")
        return cls(weights, biases)

    def same_shape(self, other: "ModelParams") -> bool:
        return self.layer_sizes == other.layer_sizes

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(d: int, C: int, hidden=(64, 64), seed: int | np.random.Generator = 0) -> ModelParams:
    """He-initialized weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sizes = (d, *hidden, C)
    weights = [rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
               for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    return ModelParams(weights, biases)


def zero_params(d: int, C: int, hidden=(64, 64)) -> ModelParams:
    sizes = (d, *hidden, C)
    return ModelParams([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                       [np.zeros(b) for b in sizes[1:]])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _check_input(params: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ShapeMismatch(f"model expects {params.d} input features, got shape {x.shape}")
    return x


def logits_and_cache(params: ModelParams, features) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping the layer inputs needed for backpropagation."""
    h = _check_input(params, features)
    acts = [h]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
            acts.append(h)
    return h, acts


def forward(params: ModelParams, features) -> np.ndarray:
    """Per-point class distribution, shape ``(N, C)``."""
    return softmax(logits_and_cache(params, features)[0])


def backward(params: ModelParams, acts: list[np.ndarray], dlogits: np.ndarray) -> ModelParams:
    """Gradients of a scalar loss given its gradient wrt the logits."""
    gw: list[np.ndarray] = [None] * len(params.weights)
    gb: list[np.ndarray] = [None] * len(params.weights)
    delta = dlogits
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params.weights[i].T
            delta *= acts[i] > 0
    return ModelParams(gw, gb)
