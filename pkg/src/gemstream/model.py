"""Small hand-differentiated classifiers over a flat parameter vector.

Two architectures share one code path: a linear softmax model
(``hidden_dim == 0``) and a one-hidden-layer tanh MLP.  Parameters live in a
single float64 vector whose layout is fixed by :class:`Architecture`::

    W1 (input_dim x hidden_dim, row-major), b1, W2 (hidden_dim x class_count,
    row-major), b2

and for the linear model simply ``W (input_dim x class_count), b``.  Every
gradient in the package is a flat vector in this same order, which is what
lets the QP projections treat the model as a point in R^|theta|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, InvalidSpec

PARAMS_HEADER = "gemstream-params v1"


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dim: int
    class_count: int

    def __post_init__(self):
        if self.input_dim < 1 or self.class_count < 2 or self.hidden_dim < 0:
            raise InvalidSpec(f"invalid architecture {self}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.hidden_dim == 0:
            return [(self.input_dim, self.class_count)]
        return [(self.input_dim, self.hidden_dim), (self.hidden_dim, self.class_count)]

    @property
    def size(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes)

    def slices(self) -> list[tuple[slice, slice]]:
        """(weight slice, bias slice) per layer, in layout order."""
        out, pos = [], 0
        for fan_in, fan_out in self.layer_shapes:
            w = slice(pos, pos + fan_in * fan_out)
            pos += fan_in * fan_out
            b = slice(pos, pos + fan_out)
            pos += fan_out
            out.append((w, b))
        return out


@dataclass(frozen=True)
class Params:
    """Flat parameter vector tied to the architecture that lays it out."""

    arch: Architecture
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size != self.arch.size:
            raise DimensionMismatch(
                f"expected {self.arch.size} parameters for {self.arch}, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def unflatten(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` per layer; W has shape (fan_in, fan_out)."""
        layers = []
        for (w, b), (fan_in, fan_out) in zip(self.arch.slices(), self.arch.layer_shapes):
            layers.append((self.values[w].reshape(fan_in, fan_out), self.values[b]))
        return layers

    @classmethod
    def flatten(cls, arch: Architecture, layers) -> "Params":
        parts = []
        for W, b in layers:
            parts.append(np.asarray(W, dtype=np.float64).ravel())
            parts.append(np.asarray(b, dtype=np.float64).ravel())
        return cls(arch, np.concatenate(parts))

    def replace(self, values) -> "Params":
        return Params(self.arch, values)


@dataclass
class Batch:
    """Rows of features with integer labels; ``t`` is the stream position if known."""

    features: np.ndarray
    labels: np.ndarray
    t: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionMismatch(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.t is not None:
            self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
            if self.t.shape[0] != self.labels.shape[0]:
                raise DimensionMismatch("t must have one entry per row")

    def __len__(self):
        return self.labels.shape[0]

    def take(self, idx) -> "Batch":
        t = None if self.t is None else self.t[idx]
        return Batch(self.features[idx], self.labels[idx], t)

    @staticmethod
    def concat(batches) -> "Batch":
        batches = list(batches)
        ts = [b.t for b in batches]
        t = None if any(x is None for x in ts) else np.concatenate(ts)
        return Batch(
            np.concatenate([b.features for b in batches]),
            np.concatenate([b.labels for b in batches]),
            t,
        )


def init_params(arch: Architecture, seed) -> Params:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in arch.layer_shapes:
        s = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-s, s, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return Params.flatten(arch, layers)


def _check(params: Params, batch: Batch):
    arch = params.arch
    if batch.features.shape[1] != arch.input_dim:
        raise DimensionMismatch(
            f"batch has {batch.features.shape[1]} features, model expects {arch.input_dim}"
        )
    if len(batch) == 0:
        raise EmptyDataset("empty batch")
    if batch.labels.min() < 0 or batch.labels.max() >= arch.class_count:
        raise DimensionMismatch(f"labels must lie in [0, {arch.class_count})")


def logits(params: Params, features: np.ndarray) -> np.ndarray:
    """Pre-softmax outputs, shape (rows, class_count)."""
    out, _ = _forward(params, np.atleast_2d(features))
    return out


def _forward(params, X):
    layers = params.unflatten()
    if len(layers) == 1:
        W, b = layers[0]
        return X @ W + b, None
    (W1, b1), (W2, b2) = layers
    h = np.tanh(X @ W1 + b1)
    return h @ W2 + b2, h


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward_loss(params: Params, batch: Batch) -> tuple[float, int]:
    """Mean cross-entropy and number of argmax-correct rows."""
    _check(params, batch)
    z, _ = _forward(params, batch.features)
    logp = _log_softmax(z)
    rows = np.arange(len(batch))
    loss = -logp[rows, batch.labels].mean()
    correct = int((np.argmax(z, axis=1) == batch.labels).sum())
    return float(loss), correct


def _backward(params, X, h, dz, per_sample=False):
    """Backpropagate output cotangents ``dz`` to a flat gradient.

    With ``per_sample`` the result has one row per input row instead of the
    sum over rows.
    """
    layers = params.unflatten()
    if len(layers) == 1:
        inputs_and_deltas = [(X, dz)]
    else:
        W2 = layers[1][0]
        dh = (dz @ W2.T) * (1.0 - h * h)
        inputs_and_deltas = [(X, dh), (h, dz)]
    parts = []
    for a, d in inputs_and_deltas:
        if per_sample:
            parts.append(np.einsum("ni,nj->nij", a, d).reshape(a.shape[0], -1))
            parts.append(d)
        else:
            parts.append((a.T @ d).ravel())
            parts.append(d.sum(axis=0))
    return np.concatenate(parts, axis=-1)


def _loss_cotangent(z, labels):
    p = np.exp(_log_softmax(z))
    p[np.arange(labels.shape[0]), labels] -= 1.0
    return p


def gradient(params: Params, batch: Batch) -> np.ndarray:
    """Exact gradient of :func:`forward_loss` w.r.t. the flat parameters."""
    _check(params, batch)
    z, h = _forward(params, batch.features)
    dz = _loss_cotangent(z, batch.labels) / len(batch)
    return _backward(params, batch.features, h, dz)


def loss_and_gradient(params: Params, batch: Batch) -> tuple[float, np.ndarray]:
    _check(params, batch)
    z, h = _forward(params, batch.features)
    logp = _log_softmax(z)
    n = len(batch)
    loss = -logp[np.arange(n), batch.labels].mean()
    dz = np.exp(logp)
    dz[np.arange(n), batch.labels] -= 1.0
    return float(loss), _backward(params, batch.features, h, dz / n)


def per_sample_gradients(params: Params, batch: Batch) -> np.ndarray:
    """Cross-entropy gradient of every row separately, shape (rows, |theta|)."""
    _check(params, batch)
    z, h = _forward(params, batch.features)
    return _backward(params, batch.features, h, _loss_cotangent(z, batch.labels), per_sample=True)


def per_sample_output_norm_gradients(params: Params, features: np.ndarray) -> np.ndarray:
    """Gradient of ``||f(x)||^2`` for every row, f being the logits."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    z, h = _forward(params, X)
    return _backward(params, X, h, 2.0 * z, per_sample=True)


def predict(params: Params, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(logits(params, features), axis=1)


def accuracy(params: Params, dataset: Batch) -> float:
    if len(dataset) == 0:
        raise EmptyDataset("accuracy of an empty dataset is undefined")
    if dataset.features.shape[1] != params.arch.input_dim:
        raise DimensionMismatch("feature width does not match the model")
    return float(np.mean(predict(params, dataset.features) == dataset.labels))


def sgd_step(params: Params, direction, lr: float) -> Params:
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != params.values.shape:
        raise DimensionMismatch(
            f"direction has shape {direction.shape}, parameters {params.values.shape}"
        )
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    return params.replace(params.values - lr * direction)


def save_params(params: Params, path) -> None:
    """Write a checkpoint: one header line, then one value per line."""
    a = params.arch
    lines = [
        f"{PARAMS_HEADER} input_dim={a.input_dim} hidden_dim={a.hidden_dim} "
        f"class_count={a.class_count} size={a.size}"
    ]
    lines.extend(repr(float(x)) for x in params.values)
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> Params:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(PARAMS_HEADER):
        raise InvalidSpec(f"{path}: not a gemstream parameter checkpoint")
    fields = dict(kv.split("=") for kv in text[0][len(PARAMS_HEADER):].split())
    arch = Architecture(
        int(fields["input_dim"]), int(fields["hidden_dim"]), int(fields["class_count"])
    )
    values = np.array([float(x) for x in text[1:] if x.strip()])
    return Params(arch, values)
