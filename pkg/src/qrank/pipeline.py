"""Synthetic end-to-end experiment: synthesize, score, pair, train, evaluate."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import data, oracles
from .data import Dataset, build_dataset, extract_features
from .evalsuite import evaluate
from .listrank import train_list
from .pairgen import chain_dils, generate_dips, save_dils, save_dips
from .pairrank import TrainConfig, train
from .qnet import default_dims, forward, save_model

log = logging.getLogger(__name__)


def pmap(fn: Callable, items: Iterable, threads: int = 1) -> list:
    """Order-preserving map; results do not depend on `threads`."""
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def noise_seed(seed: int, source_id: int) -> int:
    return int(np.random.SeedSequence([seed, source_id]).generate_state(1)[0])


def synthesize(sources: int, side: int, seed: int, threads: int = 1):
    """Pristine sources plus WN and BLUR at every level.

    Returns (images, layout) with layout rows (source_id, distortion, level).
    """
    pristine = data.synth_sources(sources, side, seed)
    layout = list(data.iter_layout(sources))

    def render(row):
        src, dist, level = row
        if dist == data.PRISTINE:
            return pristine[src]
        return data.apply_distortion(pristine[src], dist, level, noise_seed(seed, src))

    return pmap(render, layout, threads), layout


def raw_oracle_scores(images, layout, names: Sequence[str] = ("psnr", "ssim"), threads: int = 1):
    """Full-reference scores of every image against its source's pristine image."""
    ref = {src: images[k] for k, (src, dist, _) in enumerate(layout) if dist == data.PRISTINE}

    def score(k):
        return [oracles.ORACLES[name](ref[layout[k][0]], images[k]) for name in names]

    table = np.array(pmap(score, range(len(images)), threads))
    return {name: table[:, c] for c, name in enumerate(names)}


def calibrate_percentiles(dataset: Dataset) -> Dataset:
    """Calibrate every oracle column onto [0, 100] with percentile anchors."""
    for name in dataset.oracle_names:
        dataset = oracles.calibrate(dataset, name, oracles.percentile_anchors(dataset.scores(name)))
    return dataset


def build_synthetic(sources: int, side: int, seed: int, threads: int = 1, calibrated: bool = True):
    """Synthetic dataset with features and (optionally calibrated) PSNR/SSIM scores."""
    images, layout = synthesize(sources, side, seed, threads)
    feats = np.array(pmap(extract_features, images, threads))
    ds = build_dataset(layout, feats, raw_oracle_scores(images, layout, threads=threads))
    return (calibrate_percentiles(ds) if calibrated else ds), images


@dataclass(frozen=True)
class DemoConfig:
    seed: int = 1
    sources: int = 200
    side: int = 64
    budget: int = 200_000
    list_budget: int = 100_000
    test_fraction: float = 0.2
    eval_gap: float = 20.0
    sessions: int = 100
    threads: int = 1


def run_demo(out_dir, config: DemoConfig = DemoConfig()) -> dict:
    """Full synthetic experiment; writes artifacts into `out_dir`, returns the report."""
    os.makedirs(out_dir, exist_ok=True)
    path = lambda name: os.path.join(out_dir, name)  # noqa: E731
    seed = config.seed
    ds, _ = build_synthetic(config.sources, config.side, seed, config.threads)
    data.save_dataset(ds, path("features.csv"), path("scores.csv"))

    rng = np.random.default_rng([seed, 1])
    n_test = max(1, int(round(config.test_fraction * config.sources)))
    test_sources = np.sort(rng.choice(config.sources, size=n_test, replace=False))
    is_test = np.isin(ds.source_ids, test_sources)
    train_ids, test_ids = np.nonzero(~is_test)[0], np.nonzero(is_test)[0]

    dips = generate_dips(ds, budget=config.budget, seed=seed, ids=train_ids)
    save_dips(dips, path("dips.csv"))
    eval_dips = generate_dips(ds, T_min=config.eval_gap, ids=test_ids)
    eval_dips = eval_dips[eval_dips.gap > config.eval_gap]
    save_dips(eval_dips, path("eval_dips.csv"))
    dils = chain_dils(dips, budget=config.list_budget, seed=seed)
    save_dils(dils, path("dils.csv"))
    log.info("%d training pairs, %d lists, %d evaluation pairs", len(dips), len(dils), len(eval_dips))

    tc = TrainConfig(seed=seed)
    d = ds.feature_dim
    models = {
        "linear": train(ds, dips, tc, layer_dims=(d, 1)),
        "deep": train(ds, dips, tc, layer_dims=default_dims(d)),
        "list": train_list(ds, dils, tc, layer_dims=default_dims(d)),
    }
    report = {"config": asdict(config), "test_sources": test_sources.tolist(), "models": {}}
    for name, (model, tlog) in models.items():
        save_model(model, path(f"model_{name}.json"))
        tlog.write_csv(path(f"trainlog_{name}.csv"))
        scores = forward(model, ds.features)
        rep = evaluate(ds, scores, dips=eval_dips, sessions=config.sessions, seed=seed, ids=test_ids)
        entry = rep.to_dict()
        entry["best_batch"] = tlog.best_batch
        entry["train_items"] = tlog.n_train
        report["models"][name] = entry
    with open(path("report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
