"""Small deterministic models: logistic regression and an MLP.

Parameters are plain float64 numpy arrays so that aggregation is exact
elementwise arithmetic and artifacts round-trip losslessly through the
text wire encoding.  Layers alternate weight (fan_in, fan_out) and bias
(1, fan_out) matrices; hidden activations are tanh and the output layer
feeds a softmax cross-entropy loss.  The optimizer is plain SGD.

Training is restartable: the shuffle order of epoch e depends only on
(seed, epoch_offset + e), so k sequential one-epoch calls with offsets
0..k-1 reproduce one k-epoch call bitwise.  Ring-style training leans on
that property.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, ShapeError
from .seeds import MASK64, mix64

MODEL_KINDS = ("logreg", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; logreg is an MLP with no hidden layers."""

    kind: str
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    num_classes: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "logreg" and self.hidden_dims:
            raise ConfigError("logreg takes no hidden layers")
        if self.kind == "mlp" and not self.hidden_dims:
            raise ConfigError("mlp needs at least one hidden layer")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("layer widths must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every linear layer, input to output."""
        widths = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(widths[:-1], widths[1:]))

    def fingerprint(self) -> int:
        """Integer fingerprint used to guard against cross-spec mixing."""
        code = MODEL_KINDS.index(self.kind)
        return mix64(code, self.input_dim, self.num_classes, len(self.hidden_dims), *self.hidden_dims)


@dataclass(frozen=True)
class ModelParams:
    """Immutable parameter set: alternating weights and biases, float64."""

    layers: tuple[np.ndarray, ...]
    spec_hash: int

    def __post_init__(self) -> None:
        if not self.layers or len(self.layers) % 2:
            raise ShapeError("layers must alternate weight and bias matrices")
        frozen = []
        for arr in self.layers:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            if arr.ndim != 2:
                raise ShapeError("every layer must be a 2-d matrix")
            if not np.isfinite(arr).all():
                raise ShapeError("parameters must be finite")
            arr.setflags(write=False)
            frozen.append(arr)
        for weight, bias in zip(frozen[0::2], frozen[1::2]):
            if bias.shape != (1, weight.shape[1]):
                raise ShapeError(f"bias {bias.shape} does not match weight {weight.shape}")
        object.__setattr__(self, "layers", tuple(frozen))

    def shapes(self) -> list[tuple[int, int]]:
        return [arr.shape for arr in self.layers]


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float
    local_epochs: int
    batch_size: int
    seed: int

    def __post_init__(self) -> None:
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be finite and >= 0")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass(frozen=True)
class TrainMetrics:
    train_loss: float
    num_samples: int
    duration_ms: float


@dataclass(frozen=True)
class EvalMetrics:
    eval_loss: float
    accuracy: float
    num_samples: int


def init_model(spec: ModelSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed & MASK64)
    layers: list[np.ndarray] = []
    for fan_in, fan_out in spec.layer_dims():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        layers.append(np.zeros((1, fan_out)))
    return ModelParams(tuple(layers), spec.fingerprint())


def _forward(layers: list[np.ndarray], feats: np.ndarray) -> list[np.ndarray]:
    """Activations per layer; tanh on hidden layers, raw logits at the end."""
    acts = [feats]
    depth = len(layers) // 2
    h = feats
    for i in range(depth):
        z = h @ layers[2 * i] + layers[2 * i + 1]
        h = np.tanh(z) if i < depth - 1 else z
        acts.append(h)
    return acts


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_data(params: ModelParams, data: Dataset) -> None:
    if len(data) == 0:
        raise ConfigError("dataset is empty")
    if data.input_dim != params.layers[0].shape[0]:
        raise ShapeError(
            f"data dim {data.input_dim} does not match model input {params.layers[0].shape[0]}"
        )
    if int(data.labels.max()) >= params.layers[-1].shape[1]:
        raise ShapeError("label index exceeds model output width")


def train_local(
    params: ModelParams,
    data: Dataset,
    hyper: Hyperparams,
    epoch_offset: int = 0,
) -> tuple[ModelParams, TrainMetrics]:
    """Run plain mini-batch SGD and return new params plus metrics.

    train_loss is the mean pre-update cross-entropy over the batches of
    the final epoch.  epoch_offset shifts which absolute epoch indices the
    shuffle seeds are drawn for, making training resumable in slices.
    """
    _check_data(params, data)
    started = time.monotonic()
    layers = [arr.copy() for arr in params.layers]
    feats, labels = data.features, data.labels
    n = len(data)
    depth = len(layers) // 2
    epoch_loss = 0.0
    for e in range(hyper.local_epochs):
        order = np.random.default_rng(mix64(hyper.seed, epoch_offset + e)).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            x, y = feats[idx], labels[idx]
            acts = _forward(layers, x)
            logp = _log_softmax(acts[-1])
            epoch_loss += float(-logp[np.arange(len(y)), y].sum())
            # Mean-loss gradient over the batch.
            delta = np.exp(logp)
            delta[np.arange(len(y)), y] -= 1.0
            delta /= len(y)
            for i in reversed(range(depth)):
                grad_w = acts[i].T @ delta
                grad_b = delta.sum(axis=0, keepdims=True)
                if i > 0:
                    delta = (delta @ layers[2 * i].T) * (1.0 - acts[i] ** 2)
                layers[2 * i] -= hyper.learning_rate * grad_w
                layers[2 * i + 1] -= hyper.learning_rate * grad_b
    duration_ms = (time.monotonic() - started) * 1000.0
    metrics = TrainMetrics(train_loss=epoch_loss / n, num_samples=n, duration_ms=duration_ms)
    return ModelParams(tuple(layers), params.spec_hash), metrics


def evaluate_model(params: ModelParams, data: Dataset) -> EvalMetrics:
    """Mean cross-entropy and argmax accuracy over the dataset."""
    _check_data(params, data)
    acts = _forward(list(params.layers), data.features)
    logp = _log_softmax(acts[-1])
    n = len(data)
    loss = float(-logp[np.arange(n), data.labels].sum()) / n
    preds = np.argmax(acts[-1], axis=1)
    correct = int((preds == data.labels).sum())
    return EvalMetrics(eval_loss=loss, accuracy=correct / n, num_samples=n)


def params_distance(a: ModelParams, b: ModelParams) -> float:
    """Euclidean distance over all coordinates; requires matching layouts."""
    if a.spec_hash != b.spec_hash or a.shapes() != b.shapes():
        raise ShapeError("cannot compare params from different specs")
    total = 0.0
    for left, right in zip(a.layers, b.layers):
        diff = left - right
        total += float((diff * diff).sum())
    return math.sqrt(total)
