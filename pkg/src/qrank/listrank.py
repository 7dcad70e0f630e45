"""Listwise (permutation-probability) cross-entropy loss and trainer.

A list is stored best-first. With all ground-truth mass on that order the
cross entropy of a list with scores f_1..f_n reduces to

    sum_{j < n} [ log sum_{k >= j} exp(f_k) - f_j ]

which for n = 3 is -f_i - f_j + log(e^f_i + e^f_j + e^f_k) + log(e^f_j + e^f_k)
and for n = 2 is the pairwise loss with label 1.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .pairgen import DilSet
from .pairrank import TrainConfig, TrainingLog, _resolve, feature_matrix, fit
from .qnet import QNetModel, backward, default_dims, forward, init_model

MAX_ENUMERATED = 6


def _check_perm(pi: Sequence[int], n: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (n,) or sorted(pi.tolist()) != list(range(n)):
        raise ValueError(f"{list(pi)} is not a permutation of 0..{n - 1}")
    return pi


def permutation_probability(scores: Sequence[float], pi: Sequence[int]) -> float:
    """Probability of ordering `pi` (0-based positions -> item index) under the scores."""
    f = np.asarray(scores, dtype=np.float64)
    if f.ndim != 1 or len(f) < 2:
        raise ValueError("need at least 2 scores")
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite scores")
    g = f[_check_perm(pi, len(f))]
    # suffix log-sum-exp, each shifted by its own max
    log_p = sum(g[j] - logsumexp(g[j:]) for j in range(len(g) - 1))
    return math.exp(log_p)


def list_loss_general(scores: Sequence[float], ground_truth) -> float:
    """Cross entropy between a distribution over all n! orderings and the model's.

    `ground_truth` is either a dict {permutation tuple: probability} or a
    sequence aligned with itertools.permutations(range(n)).
    """
    f = np.asarray(scores, dtype=np.float64)
    n = len(f)
    if n > MAX_ENUMERATED:
        raise ValueError(f"enumeration limited to n <= {MAX_ENUMERATED}")
    perms = list(itertools.permutations(range(n)))
    if isinstance(ground_truth, dict):
        for pi in ground_truth:
            _check_perm(pi, n)
        truth = np.array([ground_truth.get(pi, 0.0) for pi in perms], dtype=np.float64)
    else:
        truth = np.asarray(ground_truth, dtype=np.float64)
        if truth.shape != (len(perms),):
            raise ValueError(f"ground truth must have {len(perms)} entries")
    if np.any(truth < 0) or abs(truth.sum() - 1.0) > 1e-9:
        raise ValueError("ground truth is not a probability distribution")
    total = 0.0
    for p_bar, pi in zip(truth, perms):
        if p_bar > 0:
            g = f[list(pi)]
            total -= p_bar * sum(g[j] - logsumexp(g[j:]) for j in range(n - 1))
    return float(total)


def _top_down_loss(f: np.ndarray) -> np.ndarray:
    # f: (B, n) best-first scores -> (B,) losses
    n = f.shape[1]
    out = np.zeros(len(f))
    for j in range(n - 1):
        out += logsumexp(f[:, j:], axis=1) - f[:, j]
    return out


def _top_down_grad(f: np.ndarray) -> np.ndarray:
    # d loss / d f, closed form: suffix-softmax sums minus position indicators
    n = f.shape[1]
    g = np.zeros_like(f)
    for j in range(n - 1):
        s = f[:, j:] - f[:, j:].max(axis=1, keepdims=True)
        e = np.exp(s)
        g[:, j:] += e / e.sum(axis=1, keepdims=True)
        g[:, j] -= 1.0
    return g


def dil_loss(fi, fj, fk) -> float:
    """Loss of the list <i, j, k> ordered best to worst."""
    f = np.array([[fi, fj, fk]], dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite input")
    return float(_top_down_loss(f)[0])


def _list_terms(model: QNetModel, dils: DilSet, x: np.ndarray):
    if len(dils) == 0:
        raise ValueError("empty batch")
    flat = _resolve(x, dils.members.reshape(-1))
    f = forward(model, flat).reshape(dils.members.shape)
    return flat, f


def dil_batch_loss(model: QNetModel, dils: DilSet, features) -> float:
    """Sum over lists of (1 - U) * list loss."""
    _, f = _list_terms(model, dils, feature_matrix(features))
    return float(np.sum((1.0 - dils.uncertainty) * _top_down_loss(f)))


def dil_batch_gradient(model: QNetModel, dils: DilSet, features) -> np.ndarray:
    flat, f = _list_terms(model, dils, feature_matrix(features))
    coef = _top_down_grad(f) * (1.0 - dils.uncertainty)[:, None]
    return backward(model, flat, coef.reshape(-1))


def train_list(
    dataset: Dataset,
    dils: DilSet,
    config: TrainConfig = TrainConfig(),
    layer_dims: Sequence[int] | None = None,
    model: QNetModel | None = None,
) -> tuple[QNetModel, TrainingLog]:
    """Train on lists with the same loop, split and selection rule as pair training."""
    if model is None:
        model = init_model(layer_dims or default_dims(dataset.feature_dim), seed=config.seed)
    x = dataset.features
    if model.input_dim != x.shape[1]:
        raise ValueError(f"model expects {model.input_dim} features, dataset has {x.shape[1]}")
    model, tlog = fit(
        dataset,
        dils.members,
        lambda m, rows: dil_batch_loss(m, dils[rows], x),
        lambda m, rows: dil_batch_gradient(m, dils[rows], x),
        config,
        model,
    )
    model.meta["objective"] = "listwise"
    return model, tlog
