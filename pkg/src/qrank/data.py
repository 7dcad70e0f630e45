"""Dataset model, CSV ingestion, and synthetic image generation.

Images are 2-D float64 grayscale arrays with values in [0, 255].
"""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

PRISTINE = "pristine"
WN = "wn"
BLUR = "blur"
BUILTIN_DISTORTIONS = (WN, BLUR)

# noise standard deviations and blur sigmas, indexed by level - 1
WN_STD = (2.55, 6.38, 15.94, 39.85, 99.62)
BLUR_SIGMA = (0.8, 1.6, 3.2, 6.4, 12.8)
LEVELS = len(WN_STD)

BLOCK = 8
FEATURE_DIM = 16
# log1p of the largest 8-bit variance; keeps log-statistics near [0, 1]
LOG_SCALE = math.log1p(255.0**2)
FEATURE_NAMES = tuple(
    f"{stat}_{pool}"
    for stat in ("mean", "logvar", "loggrad", "kurt")
    for pool in ("mean", "std", "p10", "p90")
)


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class ImageRecord:
    id: int
    source_id: int
    distortion: str
    level: int
    features: np.ndarray
    oracle_scores: Mapping[str, float]
    mos: float | None = None

    def __post_init__(self):
        if (self.level == 0) != (self.distortion == PRISTINE):
            raise DataError(
                f"record {self.id}: level {self.level} inconsistent with distortion {self.distortion!r}"
            )


@dataclass(frozen=True)
class Dataset:
    records: tuple[ImageRecord, ...]
    oracle_names: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        validate(self, require_complete=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def sources(self) -> int:
        return sum(1 for r in self.records if r.distortion == PRISTINE)

    @property
    def distortion_types(self) -> tuple[str, ...]:
        return tuple(sorted({r.distortion for r in self.records if r.distortion != PRISTINE}))

    @property
    def distortion_count(self) -> int:
        return len(self.distortion_types)

    @property
    def level_count(self) -> int:
        return max((r.level for r in self.records), default=0)

    @property
    def feature_dim(self) -> int:
        return len(self.records[0].features) if self.records else 0

    @property
    def features(self) -> np.ndarray:
        """(n, d) feature matrix, row index == record id."""
        if "features" not in self._cache:
            x = np.array([r.features for r in self.records], dtype=np.float64)
            self._cache["features"] = x.reshape(len(self.records), self.feature_dim)
        return self._cache["features"]

    def scores(self, oracle: str) -> np.ndarray:
        key = ("scores", oracle)
        if key not in self._cache:
            if oracle not in self.oracle_names:
                raise KeyError(f"unknown oracle {oracle!r}")
            self._cache[key] = np.array([r.oracle_scores[oracle] for r in self.records])
        return self._cache[key]

    @property
    def score_matrix(self) -> np.ndarray:
        """(n, m) matrix of oracle scores in `oracle_names` order."""
        if not self.oracle_names:
            return np.zeros((len(self), 0))
        return np.column_stack([self.scores(name) for name in self.oracle_names])

    @property
    def source_ids(self) -> np.ndarray:
        return np.array([r.source_id for r in self.records], dtype=np.int64)

    @property
    def levels(self) -> np.ndarray:
        return np.array([r.level for r in self.records], dtype=np.int64)

    @property
    def distortions(self) -> np.ndarray:
        return np.array([r.distortion for r in self.records], dtype=object)

    @property
    def mos(self) -> np.ndarray | None:
        if not self.records or any(r.mos is None for r in self.records):
            return None
        return np.array([r.mos for r in self.records], dtype=np.float64)

    def with_scores(self, oracle: str, values: Sequence[float]) -> "Dataset":
        """Copy with one oracle column replaced (or added)."""
        if len(values) != len(self):
            raise DataError("score vector length does not match dataset")
        records = tuple(
            replace(r, oracle_scores={**r.oracle_scores, oracle: float(v)})
            for r, v in zip(self.records, values)
        )
        names = self.oracle_names if oracle in self.oracle_names else self.oracle_names + (oracle,)
        return Dataset(records, names)

    def subset(self, ids: Sequence[int]) -> "Dataset":
        """Records `ids` renumbered densely in the given order."""
        records = tuple(replace(self.records[int(i)], id=k) for k, i in enumerate(ids))
        return Dataset(records, self.oracle_names)


def validate(dataset: Dataset, require_complete: bool = True) -> None:
    records = dataset.records
    for k, r in enumerate(records):
        if r.id != k:
            raise DataError(f"record ids must be dense 0..n-1; position {k} holds id {r.id}")
    dims = {len(r.features) for r in records}
    if len(dims) > 1:
        raise DataError(f"feature dimension mismatch: {sorted(dims)}")
    names = set(dataset.oracle_names)
    for r in records:
        if set(r.oracle_scores) != names:
            raise DataError(f"record {r.id}: oracle set {sorted(r.oracle_scores)} != {sorted(names)}")
    pristine = {r.source_id: r.id for r in records if r.distortion == PRISTINE}
    if len(pristine) != sum(r.distortion == PRISTINE for r in records):
        raise DataError("more than one pristine record for a source")
    for r in records:
        if r.source_id not in pristine:
            raise DataError(f"record {r.id}: source {r.source_id} has no pristine record")
    if not require_complete:
        return
    family = defaultdict(set)
    combos = set()
    for r in records:
        if r.distortion != PRISTINE:
            key = (r.distortion, r.level)
            if key in family[r.source_id]:
                raise DataError(f"source {r.source_id}: duplicate {key}")
            family[r.source_id].add(key)
            combos.add(key)
    for source in pristine:
        missing = combos - family[source]
        if missing:
            raise DataError(f"source {source}: incomplete family, missing {sorted(missing)}")


def build_dataset(
    layout: Sequence[tuple[int, str, int]],
    features: np.ndarray,
    scores: Mapping[str, Sequence[float]] | None = None,
    mos: Sequence[float] | None = None,
) -> Dataset:
    """Assemble a Dataset from (source_id, distortion, level) rows."""
    scores = scores or {}
    names = tuple(scores)
    records = tuple(
        ImageRecord(
            id=k,
            source_id=int(src),
            distortion=dist,
            level=int(level),
            features=np.asarray(features[k], dtype=np.float64),
            oracle_scores={name: float(scores[name][k]) for name in names},
            mos=None if mos is None else float(mos[k]),
        )
        for k, (src, dist, level) in enumerate(layout)
    )
    return Dataset(records, names)


# ---------------------------------------------------------------- CSV I/O


def _fmt(value: float) -> str:
    # repr is the shortest string that round-trips
    return repr(float(value))


def _read_rows(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    return header, rows


def _parse_id(text: str, path) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{path}: bad id {text!r}") from None


def _parse_real(text: str, path) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}: bad number {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{path}: non-finite value {text!r}")
    return value


def read_features(path) -> dict[int, np.ndarray]:
    header, rows = _read_rows(path)
    if not header or header[0] != "id":
        raise DataError(f"{path}: header must start with 'id'")
    width = len(header) - 1
    out: dict[int, np.ndarray] = {}
    for row in rows:
        if len(row) - 1 != width:
            raise DataError(
                f"{path}: dimension mismatch, row for id {row[0]} has {len(row) - 1} features, expected {width}"
            )
        rid = _parse_id(row[0], path)
        if rid in out:
            raise DataError(f"{path}: duplicate id {rid}")
        out[rid] = np.array([_parse_real(v, path) for v in row[1:]], dtype=np.float64)
    return out


def read_id_values(path, column: str | None = None) -> dict[int, float]:
    """Read a two-column `id,<value>` CSV (mos.csv, predicted scores)."""
    header, rows = _read_rows(path)
    if len(header) != 2 or header[0] != "id":
        raise DataError(f"{path}: expected header 'id,<value>'")
    if column is not None and header[1] != column:
        raise DataError(f"{path}: expected column {column!r}, got {header[1]!r}")
    out: dict[int, float] = {}
    for row in rows:
        if len(row) != 2:
            raise DataError(f"{path}: malformed row {row}")
        rid = _parse_id(row[0], path)
        if rid in out:
            raise DataError(f"{path}: duplicate id {rid}")
        out[rid] = _parse_real(row[1], path)
    return out


def write_id_values(path, values: Sequence[float], column: str = "score") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", column])
        for k, v in enumerate(values):
            w.writerow([k, _fmt(v)])


def load_dataset(
    features_path=None,
    scores_path=None,
    mos_path=None,
    require_complete: bool = True,
) -> Dataset:
    """Load a dataset from features.csv, scores.csv and optional mos.csv.

    scores.csv defines the record set and layout; features.csv may be
    omitted, in which case records carry zero-length feature vectors.
    """
    if scores_path is None:
        raise DataError("scores.csv is required: it carries the source/distortion layout")
    header, rows = _read_rows(scores_path)
    fixed = ["id", "source_id", "distortion", "level"]
    if header[:4] != fixed:
        raise DataError(f"{scores_path}: header must start with {','.join(fixed)}")
    oracle_names = tuple(header[4:])
    if len(set(oracle_names)) != len(oracle_names):
        raise DataError(f"{scores_path}: duplicate oracle column")
    layout: dict[int, tuple[int, str, int, dict[str, float]]] = {}
    for row in rows:
        if len(row) != len(header):
            raise DataError(f"{scores_path}: row {row[:1]} has {len(row)} fields, expected {len(header)}")
        rid = _parse_id(row[0], scores_path)
        if rid in layout:
            raise DataError(f"{scores_path}: duplicate id {rid}")
        level = _parse_id(row[3], scores_path)
        values = {name: _parse_real(v, scores_path) for name, v in zip(oracle_names, row[4:])}
        layout[rid] = (_parse_id(row[1], scores_path), row[2], level, values)
    n = len(layout)
    if sorted(layout) != list(range(n)):
        raise DataError(f"{scores_path}: ids must be dense 0..{n - 1}")

    if features_path is not None:
        feats = read_features(features_path)
        unknown = set(feats) - set(layout)
        if unknown:
            raise DataError(f"{features_path}: unknown id(s) {sorted(unknown)[:5]}")
        missing = set(layout) - set(feats)
        if missing:
            raise DataError(f"{features_path}: missing id(s) {sorted(missing)[:5]}")
    else:
        feats = {k: np.zeros(0) for k in layout}

    mos = None
    if mos_path is not None:
        mos = read_id_values(mos_path, "mos")
        unknown = set(mos) - set(layout)
        if unknown:
            raise DataError(f"{mos_path}: unknown id(s) {sorted(unknown)[:5]}")

    records = []
    for rid in range(n):
        src, dist, level, values = layout[rid]
        try:
            records.append(
                ImageRecord(rid, src, dist, level, feats[rid], values, None if mos is None else mos.get(rid))
            )
        except DataError as exc:
            raise DataError(f"{scores_path}: {exc}") from None
    dataset = Dataset(tuple(records), oracle_names)
    if require_complete:
        validate(dataset, require_complete=True)
    return dataset


def save_dataset(dataset: Dataset, features_path=None, scores_path=None, mos_path=None) -> None:
    if features_path is not None:
        with open(features_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"] + [f"f{k}" for k in range(dataset.feature_dim)])
            for r in dataset.records:
                w.writerow([r.id] + [_fmt(v) for v in r.features])
    if scores_path is not None:
        with open(scores_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "source_id", "distortion", "level", *dataset.oracle_names])
            for r in dataset.records:
                w.writerow(
                    [r.id, r.source_id, r.distortion, r.level]
                    + [_fmt(r.oracle_scores[name]) for name in dataset.oracle_names]
                )
    if mos_path is not None:
        mos = dataset.mos
        if mos is None:
            raise DataError("dataset has no MOS to save")
        write_id_values(mos_path, mos, column="mos")


# ---------------------------------------------------------------- synthesis


def synth_sources(count: int, side: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Generate `count` pristine grayscale images of size side x side.

    Each image mixes a smooth illumination gradient, a few piecewise-constant
    shapes with sharp edges, and band-limited texture.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if side < 16:
        raise ValueError("side must be >= 16")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    images = []
    for _ in range(count):
        theta = rng.uniform(0, 2 * np.pi)
        img = 128 + rng.uniform(-30, 30) + rng.uniform(30, 80) * (
            np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)
        )
        for _ in range(rng.integers(2, 5)):
            level = rng.uniform(-60, 60)
            if rng.random() < 0.5:
                x0, y0 = rng.uniform(0, 0.8, size=2)
                w, h = rng.uniform(0.15, 0.5, size=2)
                mask = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
            else:
                cx, cy = rng.uniform(0.1, 0.9, size=2)
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 < rng.uniform(0.1, 0.3) ** 2
            img = img + level * mask
        texture = ndimage.gaussian_filter(rng.standard_normal((side, side)), rng.uniform(0.7, 1.5), mode="wrap")
        texture /= texture.std()
        img = img + rng.uniform(6, 14) * texture
        images.append(np.clip(img, 0.0, 255.0))
    return images


def _gaussian_kernel(sigma: float) -> np.ndarray:
    half = int(math.ceil(3 * sigma))
    t = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def apply_distortion(image: np.ndarray, distortion: str, level: int, seed: int = 0) -> np.ndarray:
    """Distort `image` with white noise or Gaussian blur at level 1..5.

    WN draws one standard-normal field per seed and scales it by the level's
    standard deviation, so a fixed seed gives a nested family of noisy images.
    """
    if not 1 <= level <= LEVELS:
        raise ValueError(f"level must be in [1, {LEVELS}], got {level}")
    image = np.asarray(image, dtype=np.float64)
    if distortion == WN:
        noise = np.random.default_rng(seed).standard_normal(image.shape)
        out = image + WN_STD[level - 1] * noise
    elif distortion == BLUR:
        k = _gaussian_kernel(BLUR_SIGMA[level - 1])
        out = ndimage.correlate1d(image, k, axis=0, mode="reflect")
        out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    else:
        raise ValueError(f"unsupported distortion {distortion!r}")
    return np.clip(out, 0.0, 255.0)


def _mscn(image: np.ndarray) -> np.ndarray:
    mu = ndimage.gaussian_filter(image, 7 / 6, mode="nearest", truncate=3.0)
    var = ndimage.gaussian_filter(image * image, 7 / 6, mode="nearest", truncate=3.0) - mu * mu
    return (image - mu) / (np.sqrt(np.maximum(var, 0.0)) + 1.0)


def _blocks(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[0] // BLOCK * BLOCK, a.shape[1] // BLOCK * BLOCK
    a = a[:h, :w]
    return a.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).swapaxes(1, 2).reshape(-1, BLOCK * BLOCK)


def extract_features(image: np.ndarray) -> np.ndarray:
    """16-d vector of pooled 8x8 block statistics.

    Per block: mean intensity / 255, log1p(variance) and log1p(mean squared
    gradient) both divided by log1p(255^2), and log1p(kurtosis of MSCN
    coefficients). Each is
    pooled over blocks by mean, std, 10th and 90th percentile. Images smaller
    than one block are treated as a single block.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("empty image")
    if image.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    gy = np.diff(image, axis=0, append=image[-1:, :])
    gx = np.diff(image, axis=1, append=image[:, -1:])
    grad = gx * gx + gy * gy
    mscn = _mscn(image)
    if min(image.shape) < BLOCK:
        flat = lambda a: a.reshape(1, -1)  # noqa: E731
    else:
        flat = _blocks
    pix, g, m = flat(image), flat(grad), flat(mscn)

    mean = pix.mean(axis=1) / 255.0
    var = pix.var(axis=1)
    logvar = np.log1p(var) / LOG_SCALE
    loggrad = np.log1p(g.mean(axis=1)) / LOG_SCALE
    mc = m - m.mean(axis=1, keepdims=True)
    m2 = (mc**2).mean(axis=1)
    m4 = (mc**4).mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        kurt = np.where(m2 > 1e-12, m4 / np.where(m2 > 1e-12, m2, 1.0) ** 2, 0.0)
    kurt = np.log1p(kurt)

    out = []
    for stat in (mean, logvar, loggrad, kurt):
        out += [stat.mean(), stat.std(), np.percentile(stat, 10), np.percentile(stat, 90)]
    return np.array(out, dtype=np.float64)


def iter_layout(sources: int, levels: int = LEVELS) -> Iterable[tuple[int, str, int]]:
    """Record layout for synthetic data: per source, pristine then WN and BLUR levels."""
    for s in range(sources):
        yield s, PRISTINE, 0
        for dist in BUILTIN_DISTORTIONS:
            for level in range(1, levels + 1):
                yield s, dist, level
