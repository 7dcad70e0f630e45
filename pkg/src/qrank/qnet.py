"""Fully connected scoring network f(x) with ReLU hidden layers and a scalar output.

All parameters live in one flat float64 vector; `weights` and `biases` are
views into it. Layer l maps a row vector h to h @ W_l + b_l with W_l of
shape (layer_dims[l], layer_dims[l + 1]). The same parameter vector scores
every member of a pair or list, so multi-stream weight sharing needs no
bookkeeping.

An optional fixed per-feature standardization (x - shift) / scale, kept in
`meta["input_norm"]`, precedes the first layer. It is not trained and is
absent (identity) unless set.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_HIDDEN = (256, 128, 3)


class ModelError(ValueError):
    """Malformed model file or inconsistent dimensions."""


def _check_dims(layer_dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ModelError("need at least input and output dimensions")
    if any(d <= 0 for d in dims):
        raise ModelError(f"layer dimensions must be positive: {dims}")
    if dims[-1] != 1:
        raise ModelError(f"output dimension must be 1, got {dims[-1]}")
    return dims


def param_count(layer_dims: Sequence[int]) -> int:
    dims = _check_dims(layer_dims)
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


@dataclass
class QNetModel:
    layer_dims: tuple[int, ...]
    params: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_dims = _check_dims(self.layer_dims)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (param_count(self.layer_dims),):
            raise ModelError(
                f"parameter vector has shape {self.params.shape}, expected ({param_count(self.layer_dims)},)"
            )
        if not np.all(np.isfinite(self.params)):
            raise ModelError("non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def split(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into a vector laid out like `params`."""
        out, pos = [], 0
        for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w = flat[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((w, flat[pos:pos + b]))
            pos += b
        return out

    @property
    def weights(self) -> list[np.ndarray]:
        return [w for w, _ in self.split(self.params)]

    @property
    def biases(self) -> list[np.ndarray]:
        return [b for _, b in self.split(self.params)]

    @property
    def input_norm(self) -> tuple[np.ndarray, np.ndarray] | None:
        norm = self.meta.get("input_norm")
        if norm is None:
            return None
        return np.asarray(norm["shift"], dtype=np.float64), np.asarray(norm["scale"], dtype=np.float64)

    def set_input_norm(self, shift, scale) -> None:
        shift = np.asarray(shift, dtype=np.float64)
        scale = np.asarray(scale, dtype=np.float64)
        if shift.shape != (self.input_dim,) or scale.shape != (self.input_dim,):
            raise ModelError("normalization vectors must match the input dimension")
        if np.any(scale <= 0) or not (np.all(np.isfinite(shift)) and np.all(np.isfinite(scale))):
            raise ModelError("normalization scale must be positive and finite")
        self.meta["input_norm"] = {"shift": shift.tolist(), "scale": scale.tolist()}

    def copy(self) -> "QNetModel":
        return QNetModel(self.layer_dims, self.params.copy(), copy.deepcopy(self.meta))

    @property
    def is_linear(self) -> bool:
        return len(self.layer_dims) == 2


def init_model(layer_dims: Sequence[int], seed: int = 0) -> QNetModel:
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)); zero biases."""
    dims = _check_dims(layer_dims)
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(dims))
    model = QNetModel(dims, params, {"seed": int(seed)})
    for w, _ in model.split(model.params):
        r = math.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[...] = rng.uniform(-r, r, size=w.shape)
    return model


def linear_model(w: Sequence[float]) -> QNetModel:
    """f(x) = w . x as a network with no hidden layer and zero bias."""
    w = np.asarray(w, dtype=np.float64)
    return QNetModel((len(w), 1), np.concatenate([w, [0.0]]))


def default_dims(input_dim: int) -> tuple[int, ...]:
    return (input_dim, *DEFAULT_HIDDEN, 1)


def _as_batch(model: QNetModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != model.input_dim:
        raise ModelError(f"input has dimension {x.shape[-1] if x.ndim else 0}, model expects {model.input_dim}")
    norm = model.input_norm
    if norm is not None:
        x2 = (x2 - norm[0]) / norm[1]
    return x2, single


def _forward_cached(model: QNetModel, x: np.ndarray):
    layers = model.split(model.params)
    acts = [x]
    h = x
    for k, (w, b) in enumerate(layers):
        z = h @ w + b
        h = np.maximum(z, 0.0) if k < len(layers) - 1 else z
        acts.append(h)
    return layers, acts


def forward(model: QNetModel, x):
    """Score one feature vector (returns float) or a (n, d) batch (returns (n,))."""
    x2, single = _as_batch(model, x)
    out = _forward_cached(model, x2)[1][-1][:, 0]
    return float(out[0]) if single else out


def backward(model: QNetModel, x, upstream, return_input_grad: bool = False):
    """Gradient of sum_r upstream[r] * f(x[r]) with respect to the parameters.

    For a single vector `x`, `upstream` is a scalar. The ReLU derivative at
    exactly zero is taken as 0. Returns a flat vector laid out like
    `model.params`, plus dL/dx when `return_input_grad` is set.
    """
    x2, single = _as_batch(model, x)
    g_out = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if len(g_out) != len(x2):
        raise ModelError("upstream length does not match batch size")
    layers, acts = _forward_cached(model, x2)
    grad = np.zeros_like(model.params)
    gviews = model.split(grad)
    delta = g_out[:, None]
    for k in range(len(layers) - 1, -1, -1):
        gw, gb = gviews[k]
        gw[...] = acts[k].T @ delta
        gb[...] = delta.sum(axis=0)
        delta = delta @ layers[k][0].T
        if k > 0:
            delta = delta * (acts[k] > 0)
    if not return_input_grad:
        return grad
    norm = model.input_norm
    if norm is not None:
        delta = delta / norm[1]
    return grad, (delta[0] if single else delta)


def save_model(model: QNetModel, path) -> None:
    doc = {
        "layer_dims": list(model.layer_dims),
        "weights": [w.reshape(-1).tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "meta": model.meta,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> QNetModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: malformed model file: {exc}") from None
    try:
        dims = _check_dims(doc["layer_dims"])
        weights, biases = doc["weights"], doc["biases"]
        meta = doc.get("meta", {})
    except (KeyError, TypeError) as exc:
        raise ModelError(f"{path}: missing field {exc}") from None
    if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
        raise ModelError(f"{path}: expected {len(dims) - 1} layers")
    parts = []
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        if len(weights[k]) != a * b or len(biases[k]) != b:
            raise ModelError(f"{path}: layer {k} parameters do not match dims {a}x{b}")
        parts += [np.asarray(weights[k], dtype=np.float64), np.asarray(biases[k], dtype=np.float64)]
    model = QNetModel(dims, np.concatenate(parts), meta)
    try:
        norm = model.input_norm
        if norm is not None:
            model.set_input_norm(*norm)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"{path}: bad input_norm: {exc}") from None
    return model
