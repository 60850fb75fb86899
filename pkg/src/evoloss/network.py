"""Softmax MLP with manual forward/backward passes.

Architecture: input -> (dense + ReLU + inverted dropout) per hidden width
-> dense -> softmax. Gradients with respect to the logits come from the
training module, which differentiates the expression loss; this module only
propagates them through the layers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MODEL_MAGIC = b"EVLMLP"
_MODEL_VERSION = 1


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_layers: tuple[int, ...] = (128,)
    dropout: float = 0.4
    weight_init_seed: int = 0

    def __post_init__(self) -> None:
        self.hidden_layers = tuple(int(w) for w in self.hidden_layers)
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValueError("input_dim must be >= 1 and num_classes >= 2")
        if any(w < 1 for w in self.hidden_layers):
            raise ValueError("hidden layer widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class TrainedModel:
    """Layer weights/biases; ``weights[i]`` has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def logits(self, x: np.ndarray) -> np.ndarray:
        a = np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        return a @ self.weights[-1] + self.biases[-1]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == labels))

    def save(self, path) -> None:
        """Binary layout (little-endian):

        =======  ======  ========================================
        offset   type    meaning
        =======  ======  ========================================
        0        6s      magic ``EVLMLP``
        6        u16     format version (currently 1)
        8        u32     layer count L
        12       L*2*u32 per layer: rows, cols
        ...      f64[]   per layer: row-major weights then biases
        =======  ======  ========================================
        """
        with open(path, "wb") as fh:
            fh.write(struct.pack("<6sHI", _MODEL_MAGIC, _MODEL_VERSION, len(self.weights)))
            for w in self.weights:
                fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            for w, b in zip(self.weights, self.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path, "rb") as fh:
            header = fh.read(12)
            if len(header) < 12:
                raise ValueError(f"truncated model file {path}")
            magic, version, layers = struct.unpack("<6sHI", header)
            if magic != _MODEL_MAGIC:
                raise ValueError(f"{path} is not a model file (bad magic {magic!r})")
            if version != _MODEL_VERSION:
                raise ValueError(f"unsupported model format version {version}")
            shapes = [struct.unpack("<II", fh.read(8)) for _ in range(layers)]
            weights, biases = [], []
            for rows, cols in shapes:
                w = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8").reshape(rows, cols)
                b = np.frombuffer(fh.read(cols * 8), dtype="<f8")
                if w.size != rows * cols or b.size != cols:
                    raise ValueError(f"truncated model file {path}")
                weights.append(w.astype(np.float64))
                biases.append(b.astype(np.float64))
        return cls(weights=weights, biases=biases)


def init_model(cfg: ModelConfig) -> TrainedModel:
    """He-normal weights, zero biases, seeded by ``weight_init_seed``."""
    rng = np.random.default_rng(cfg.weight_init_seed)
    widths = (cfg.input_dim, *cfg.hidden_layers, cfg.num_classes)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return TrainedModel(weights=weights, biases=biases)


def forward_train(
    model: TrainedModel,
    x: np.ndarray,
    dropout: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray, np.ndarray | None]]]:
    """Forward pass keeping the per-layer caches backprop needs.

    Returns logits and, per layer, (input activation, pre-activation,
    dropout mask). Dropout is inverted (masks carry the 1/(1-p) scale).
    """
    a = x
    caches: list[tuple[np.ndarray, np.ndarray, np.ndarray | None]] = []
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ w + b
        h = np.maximum(z, 0.0)
        mask = None
        if dropout > 0.0:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
        caches.append((a, z, mask))
        a = h
    logits = a @ model.weights[-1] + model.biases[-1]
    caches.append((a, logits, None))
    return logits, caches


def backward(
    model: TrainedModel,
    caches: list[tuple[np.ndarray, np.ndarray, np.ndarray | None]],
    grad_logits: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Backpropagate a (batch-mean) logit gradient; returns weight and bias
    gradients aligned with ``model.weights``/``model.biases``."""
    grads_w = [np.empty(0)] * len(model.weights)
    grads_b = [np.empty(0)] * len(model.biases)
    g = grad_logits
    a_last = caches[-1][0]
    grads_w[-1] = a_last.T @ g
    grads_b[-1] = g.sum(axis=0)
    g = g @ model.weights[-1].T
    for i in range(len(model.weights) - 2, -1, -1):
        a, z, mask = caches[i]
        if mask is not None:
            g = g * mask
        g = g * (z > 0.0)
        grads_w[i] = a.T @ g
        grads_b[i] = g.sum(axis=0)
        if i:
            g = g @ model.weights[i].T
    return grads_w, grads_b


def sgd_step(
    model: TrainedModel,
    grads_w: list[np.ndarray],
    grads_b: list[np.ndarray],
    learning_rate: float,
) -> None:
    for w, b, gw, gb in zip(model.weights, model.biases, grads_w, grads_b):
        w -= learning_rate * gw
        b -= learning_rate * gb
