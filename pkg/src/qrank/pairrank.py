"""Pairwise cross-entropy ranking loss and the mini-batch trainer.

Loss of one pair with score difference d = f(x_i) - f(x_j) and target
probability p_bar:  -p_bar * d + log(1 + exp(d)). A batch sums the pair
losses weighted by (1 - U).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import DataError, Dataset
from .pairgen import DipSet
from .qnet import QNetModel, backward, default_dims, forward, init_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    momentum: float = 0.9
    weight_decay: float = 5e-4
    learning_rate: float = 1e-4
    epochs: int = 1
    seed: int = 0
    validation_fraction: float = 0.1
    shuffle: bool = True
    log_interval: int = 50
    standardize: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _check_finite(*values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


def pair_probability(fi, fj):
    """exp(d) / (1 + exp(d)) for d = fi - fj, without overflow."""
    _check_finite(fi, fj)
    d = np.asarray(fi, dtype=np.float64) - np.asarray(fj, dtype=np.float64)
    e = np.exp(-np.abs(d))
    p = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(p) if p.ndim == 0 else p


def pair_loss(fi, fj, label=1.0):
    """Cross entropy -label*d + log(1 + exp(d)), d = fi - fj."""
    _check_finite(fi, fj)
    label = np.asarray(label, dtype=np.float64)
    if np.any((label < 0) | (label > 1)):
        raise ValueError("label must lie in [0, 1]")
    d = np.asarray(fi, dtype=np.float64) - np.asarray(fj, dtype=np.float64)
    out = np.maximum(d, 0.0) - label * d + np.log1p(np.exp(-np.abs(d)))
    return float(out) if out.ndim == 0 else out


def feature_matrix(features) -> np.ndarray:
    if isinstance(features, Dataset):
        return features.features
    return np.asarray(features, dtype=np.float64)


def _resolve(x: np.ndarray, ids: np.ndarray) -> np.ndarray:
    if len(ids) and (ids.min() < 0 or ids.max() >= len(x)):
        bad = ids[(ids < 0) | (ids >= len(x))][0]
        raise DataError(f"image id {bad} not in feature table of {len(x)} rows")
    return x[ids]


def _pair_terms(model: QNetModel, dips: DipSet, x: np.ndarray):
    if len(dips) == 0:
        raise ValueError("empty batch")
    xi, xj = _resolve(x, dips.i), _resolve(x, dips.j)
    fi, fj = forward(model, xi), forward(model, xj)
    return xi, xj, fi, fj


def batch_loss(model: QNetModel, dips: DipSet, features) -> float:
    """Sum over the batch of (1 - U) * pair_loss; no weight-decay term."""
    x = feature_matrix(features)
    _, _, fi, fj = _pair_terms(model, dips, x)
    return float(np.sum((1.0 - dips.uncertainty) * pair_loss(fi, fj, dips.label)))


def batch_gradient(model: QNetModel, dips: DipSet, features) -> np.ndarray:
    """Gradient of batch_loss: sum of (P_ij - label)(1 - U)(df_i/dw - df_j/dw)."""
    x = feature_matrix(features)
    xi, xj, fi, fj = _pair_terms(model, dips, x)
    coef = (pair_probability(fi, fj) - dips.label) * (1.0 - dips.uncertainty)
    return backward(model, np.vstack([xi, xj]), np.concatenate([coef, -coef]))


def sgd_step(params: np.ndarray, gradient: np.ndarray, velocity: np.ndarray, config: TrainConfig):
    """Classical momentum with L2 decay on every parameter.

    v <- momentum * v - lr * (g + weight_decay * theta);  theta <- theta + v
    """
    params = np.asarray(params, dtype=np.float64)
    if gradient.shape != params.shape or velocity.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, gradient {gradient.shape}, velocity {velocity.shape}")
    velocity = config.momentum * velocity - config.learning_rate * (gradient + config.weight_decay * params)
    return params + velocity, velocity


@dataclass
class TrainingLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)
    best_batch: int = 0
    best_val_loss: float = math.inf
    consumed: np.ndarray | None = None
    n_train: int = 0
    n_val: int = 0
    val_sources: tuple[int, ...] = ()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["batch_index", "train_loss", "val_loss"])
            for b, tr, va in self.rows:
                w.writerow([b, repr(tr), repr(va)])


def split_sources(source_of_items: np.ndarray, fraction: float, rng: np.random.Generator):
    """Choose held-out sources; returns (train_mask, val_mask, val_sources).

    `source_of_items` is (n_items, list_length). Items whose members fall
    on both sides of the split belong to neither.
    """
    sources = np.unique(source_of_items)
    if len(sources) < 2:
        raise ValueError("need at least 2 sources to split into training and validation")
    n_val = min(len(sources) - 1, max(1, int(round(fraction * len(sources)))))
    val = np.sort(rng.choice(sources, size=n_val, replace=False))
    in_val = np.isin(source_of_items, val)
    return ~in_val.any(axis=1), in_val.all(axis=1), tuple(int(s) for s in val)


def fit(
    dataset: Dataset,
    members: np.ndarray,
    loss_fn: Callable[[QNetModel, np.ndarray], float],
    grad_fn: Callable[[QNetModel, np.ndarray], np.ndarray],
    config: TrainConfig,
    model: QNetModel,
) -> tuple[QNetModel, TrainingLog]:
    """Shared mini-batch loop over item rows (pairs or lists).

    `loss_fn` / `grad_fn` take the model and an array of item row indices.
    With `config.standardize`, a model without an input normalization gets
    one fitted to the training-split images. Validation loss is evaluated
    before training, every `log_interval` batches and at the end of each
    epoch; the parameters with the lowest validation loss are returned.
    """
    ids = members.reshape(-1)
    if len(ids) and (ids.min() < 0 or ids.max() >= len(dataset)):
        raise DataError("item references an id outside the dataset")
    rng = np.random.default_rng(config.seed)
    train_mask, val_mask, val_sources = split_sources(
        dataset.source_ids[members], config.validation_fraction, rng
    )
    train_rows = np.nonzero(train_mask)[0]
    val_rows = np.nonzero(val_mask)[0]
    if len(train_rows) == 0 or len(val_rows) == 0:
        raise ValueError(
            f"empty split after holding out sources: {len(train_rows)} training, {len(val_rows)} validation items"
        )
    model = model.copy()
    if config.standardize and model.input_norm is None:
        x = dataset.features[np.unique(members[train_rows])]
        scale = x.std(axis=0)
        model.set_input_norm(x.mean(axis=0), np.where(scale > 0, scale, 1.0))
    tlog = TrainingLog(n_train=len(train_rows), n_val=len(val_rows), val_sources=val_sources)
    params = model.params
    velocity = np.zeros_like(params)
    best = params.copy()
    batch_index = 0
    consumed = []

    def checkpoint(train_loss: float):
        nonlocal best
        val = loss_fn(model, val_rows)
        tlog.rows.append((batch_index, train_loss, val))
        if val < tlog.best_val_loss:
            tlog.best_val_loss, tlog.best_batch = val, batch_index
            best = model.params.copy()

    checkpoint(math.nan)
    for epoch in range(config.epochs):
        order = rng.permutation(train_rows) if config.shuffle else train_rows
        window = []
        for start in range(0, len(order), config.batch_size):
            rows = order[start:start + config.batch_size]
            consumed.append(rows)
            window.append(loss_fn(model, rows))
            g = grad_fn(model, rows)
            model.params, velocity = sgd_step(model.params, g, velocity, config)
            if not np.all(np.isfinite(model.params)):
                raise FloatingPointError(f"parameters diverged at batch {batch_index + 1}")
            batch_index += 1
            end_of_epoch = start + config.batch_size >= len(order)
            if batch_index % config.log_interval == 0 or end_of_epoch:
                checkpoint(float(np.mean(window)))
                window = []
        log.debug("epoch %d done, best val loss %.6g at batch %d", epoch, tlog.best_val_loss, tlog.best_batch)
    tlog.consumed = np.concatenate(consumed) if consumed else np.zeros(0, dtype=np.int64)
    model.params = best
    model.meta.update(
        {"train_config": asdict(config), "config_digest": config.digest(), "best_batch": tlog.best_batch}
    )
    return model, tlog


def train(
    dataset: Dataset,
    dips: DipSet,
    config: TrainConfig = TrainConfig(),
    layer_dims: Sequence[int] | None = None,
    model: QNetModel | None = None,
) -> tuple[QNetModel, TrainingLog]:
    """Train a scoring network on pairs; split, cadence and selection as in `fit`."""
    if model is None:
        model = init_model(layer_dims or default_dims(dataset.feature_dim), seed=config.seed)
    x = dataset.features
    if model.input_dim != x.shape[1]:
        raise ValueError(f"model expects {model.input_dim} features, dataset has {x.shape[1]}")
    model, tlog = fit(
        dataset,
        dips.members,
        lambda m, rows: batch_loss(m, dips[rows], x),
        lambda m, rows: batch_gradient(m, dips[rows], x),
        config,
        model,
    )
    model.meta["objective"] = "pairwise"
    return model, tlog
