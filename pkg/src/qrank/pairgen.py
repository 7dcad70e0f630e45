"""Generation of quality-discriminable image pairs (DIPs) and lists (DILs).

A pair is kept only when every oracle strictly prefers the same image; its
gap is the smallest per-oracle score difference, and a raised-cosine
function of the gap gives the pair's perceptual uncertainty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .data import Dataset, DataError

DEFAULT_TC = 20.0
DEFAULT_BUCKET_WIDTH = 0.05


def uncertainty(T, Tc: float = DEFAULT_TC):
    """Raised-cosine uncertainty: 1 at T=0, falling to 0 at T >= Tc.

    Accepts a scalar or an array of gaps.
    """
    if Tc <= 0:
        raise ValueError("Tc must be positive")
    t = np.asarray(T, dtype=np.float64)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("gap T must be nonnegative")
    u = np.where(t <= Tc, 0.5 * (1.0 + np.cos(np.pi * np.minimum(t, Tc) / Tc)), 0.0)
    return float(u) if u.ndim == 0 else u


class Dip(NamedTuple):
    i: int
    j: int
    gap: float
    uncertainty: float
    label: float = 1.0


class Dil(NamedTuple):
    i: int
    j: int
    k: int
    uncertainty: float


@dataclass(frozen=True)
class DipSet:
    """Column store of pairs; row r says image i[r] is better than j[r]
    with probability label[r]."""

    i: np.ndarray
    j: np.ndarray
    gap: np.ndarray
    uncertainty: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        n = len(self.i)
        for name in ("j", "gap", "uncertainty", "label"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} length mismatch")
        if np.any(self.i == self.j):
            raise ValueError("pair with i == j")
        if np.any((self.label < 0) | (self.label > 1)):
            raise ValueError("labels must lie in [0, 1]")
        if np.any((self.uncertainty < 0) | (self.uncertainty > 1)):
            raise ValueError("uncertainty must lie in [0, 1]")

    @classmethod
    def from_rows(cls, rows: Sequence[Dip]) -> "DipSet":
        if not rows:
            return cls.empty()
        i, j, gap, u, label = zip(*rows)
        return cls(
            np.asarray(i, dtype=np.int64), np.asarray(j, dtype=np.int64),
            np.asarray(gap, dtype=np.float64), np.asarray(u, dtype=np.float64),
            np.asarray(label, dtype=np.float64),
        )

    @classmethod
    def empty(cls) -> "DipSet":
        z = np.zeros(0)
        return cls(z.astype(np.int64), z.astype(np.int64), z, z, z)

    def __len__(self) -> int:
        return len(self.i)

    def __getitem__(self, idx) -> "DipSet | Dip":
        if isinstance(idx, (int, np.integer)):
            return Dip(int(self.i[idx]), int(self.j[idx]), float(self.gap[idx]),
                       float(self.uncertainty[idx]), float(self.label[idx]))
        return DipSet(self.i[idx], self.j[idx], self.gap[idx], self.uncertainty[idx], self.label[idx])

    def __iter__(self):
        return (self[r] for r in range(len(self)))

    @property
    def members(self) -> np.ndarray:
        """(n, 2) image ids."""
        return np.column_stack([self.i, self.j])


@dataclass(frozen=True)
class DilSet:
    """Column store of lists; row r orders members[r] from best to worst."""

    members: np.ndarray
    uncertainty: np.ndarray

    def __post_init__(self):
        m = self.members
        if m.ndim != 2 or m.shape[1] < 2 or len(m) != len(self.uncertainty):
            raise ValueError("members must be (n, list_length >= 2) matching uncertainty")
        s = np.sort(m, axis=1)
        if np.any(s[:, 1:] == s[:, :-1]):
            raise ValueError("list members must be distinct")

    @classmethod
    def from_rows(cls, rows: Sequence[Dil]) -> "DilSet":
        if not rows:
            return cls(np.zeros((0, 3), dtype=np.int64), np.zeros(0))
        return cls(np.array([r[:3] for r in rows], dtype=np.int64), np.array([r[3] for r in rows], dtype=np.float64))

    @classmethod
    def from_dips(cls, dips: DipSet) -> "DilSet":
        """Recast pairs as two-element lists, best first (label 0 flips order)."""
        flip = dips.label < 0.5
        if np.any((dips.label != 0) & (dips.label != 1)):
            raise ValueError("only hard 0/1 labels can be recast as lists")
        members = np.where(flip[:, None], dips.members[:, ::-1], dips.members)
        return cls(members, dips.uncertainty.copy())

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            if self.members.shape[1] != 3:
                return tuple(int(v) for v in self.members[idx]) + (float(self.uncertainty[idx]),)
            i, j, k = (int(v) for v in self.members[idx])
            return Dil(i, j, k, float(self.uncertainty[idx]))
        return DilSet(self.members[idx], self.uncertainty[idx])

    def __iter__(self):
        return (self[r] for r in range(len(self)))


def orient_pair(a: int, b: int, scores) -> tuple[int, int, float] | None:
    """Orient (a, b) by unanimous oracle preference.

    `scores` maps image id to its per-oracle score vector. Returns
    (better, worse, gap) or None when any oracle ties or oracles disagree.
    """
    try:
        sa = np.asarray(scores[a], dtype=np.float64)
        sb = np.asarray(scores[b], dtype=np.float64)
    except (KeyError, IndexError):
        raise DataError(f"missing oracle scores for pair ({a}, {b})") from None
    if sa.shape != sb.shape or sa.size == 0 or np.any(np.isnan(sa)) or np.any(np.isnan(sb)):
        raise DataError(f"missing oracle score for pair ({a}, {b})")
    d = sa - sb
    if np.all(d > 0):
        return a, b, float(d.min())
    if np.all(d < 0):
        return b, a, float((-d).min())
    return None


def _unrank_pairs(ranks: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # lexicographic rank of (a, b), a < b, over C(n, 2)
    ranks = np.asarray(ranks, dtype=np.int64)
    before = lambda a: a * (2 * n - a - 1) // 2  # noqa: E731  pairs with first index < a
    a = np.floor(((2 * n - 1) - np.sqrt((2 * n - 1) ** 2 - 8.0 * ranks)) / 2).astype(np.int64)
    # correct floating error by at most one step either way
    a = np.where(before(a) > ranks, a - 1, a)
    a = np.where(before(a + 1) <= ranks, a + 1, a)
    b = ranks - before(a) + a + 1
    return a, b


def orient_many(scores: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Vectorized orient_pair over candidate pairs. Returns (keep, i, j, gap)."""
    d = scores[a] - scores[b]
    pos = np.all(d > 0, axis=1)
    neg = np.all(d < 0, axis=1)
    keep = pos | neg
    i = np.where(pos, a, b)
    j = np.where(pos, b, a)
    gap = np.abs(d).min(axis=1) if d.shape[1] else np.zeros(len(a))
    return keep, i[keep], j[keep], gap[keep]


def generate_dips(
    dataset: Dataset,
    Tc: float = DEFAULT_TC,
    T_min: float = 0.0,
    budget: int | None = None,
    seed: int = 0,
    ids: Sequence[int] | None = None,
) -> DipSet:
    """Sample unordered candidate pairs and keep the unanimously oriented ones.

    Candidates are drawn uniformly without replacement from all pairs of
    `ids` (default: every record), up to `budget`; with no budget, or a
    budget at least the number of candidates, all pairs are enumerated.
    Pairs with gap below T_min are dropped. Output is sorted by candidate
    rank so it depends only on (dataset, ids, budget, seed).
    """
    if budget is not None and budget < 1:
        raise ValueError("budget must be >= 1")
    if T_min < 0:
        raise ValueError("T_min must be nonnegative")
    pool = np.arange(len(dataset)) if ids is None else np.unique(np.asarray(ids, dtype=np.int64))
    n = len(pool)
    if n < 2:
        raise ValueError("need at least 2 images to form pairs")
    if not dataset.oracle_names:
        raise DataError("dataset has no oracle scores")
    scores = dataset.score_matrix
    total = n * (n - 1) // 2
    if budget is None or budget >= total:
        ranks = np.arange(total, dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        ranks = np.sort(rng.choice(total, size=budget, replace=False))

    chunks = []
    for start in range(0, len(ranks), 1 << 20):
        a, b = _unrank_pairs(ranks[start:start + (1 << 20)], n)
        keep, i, j, gap = orient_many(scores, pool[a], pool[b])
        sel = gap >= T_min
        chunks.append((i[sel], j[sel], gap[sel]))
    i = np.concatenate([c[0] for c in chunks])
    j = np.concatenate([c[1] for c in chunks])
    gap = np.concatenate([c[2] for c in chunks])
    return DipSet(i, j, gap, uncertainty(gap, Tc) if len(gap) else np.zeros(0), np.ones(len(gap)))


def chain_dils(
    dips: DipSet,
    bucket_width: float = DEFAULT_BUCKET_WIDTH,
    budget: int | None = None,
    seed: int = 0,
) -> DilSet:
    """Chain pairs <i,j> and <j,k> whose uncertainties share a bucket into <i,j,k>.

    Buckets are floor(U / bucket_width). A list inherits the larger of its
    two constituent uncertainties. With a budget smaller than the number of
    chainable combinations, combinations are sampled uniformly without
    replacement.
    """
    if bucket_width <= 0:
        raise ValueError("bucket_width must be positive")
    if len(dips) == 0:
        raise ValueError("dips must be nonempty")
    if budget is not None and budget < 1:
        raise ValueError("budget must be >= 1")
    if np.any((dips.label != 1)):
        raise ValueError("chaining requires oriented pairs (label 1)")
    bucket = np.floor(dips.uncertainty / bucket_width).astype(np.int64)

    # incoming pairs grouped by (j, bucket), outgoing by (i, bucket)
    in_key = np.stack([dips.j, bucket], axis=1)
    out_key = np.stack([dips.i, bucket], axis=1)
    in_order = np.lexsort((np.arange(len(dips)), in_key[:, 1], in_key[:, 0]))
    out_order = np.lexsort((np.arange(len(dips)), out_key[:, 1], out_key[:, 0]))
    in_groups = _group(in_key[in_order])
    out_groups = _group(out_key[out_order])

    # per shared key: (incoming slice, outgoing slice, combination count)
    blocks = []
    for key, (s0, s1) in in_groups.items():
        if key in out_groups:
            t0, t1 = out_groups[key]
            blocks.append((s0, s1, t0, t1))
    if not blocks:
        return DilSet(np.zeros((0, 3), dtype=np.int64), np.zeros(0))
    counts = np.array([(s1 - s0) * (t1 - t0) for s0, s1, t0, t1 in blocks], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])
    if budget is None or budget >= total:
        picks = np.arange(total, dtype=np.int64)
    else:
        picks = np.sort(np.random.default_rng(seed).choice(total, size=budget, replace=False))

    block = np.searchsorted(offsets, picks, side="right") - 1
    within = picks - offsets[block]
    meta = np.array(blocks, dtype=np.int64)
    width = meta[block, 3] - meta[block, 2]
    first = in_order[meta[block, 0] + within // width]
    second = out_order[meta[block, 2] + within % width]
    members = np.stack([dips.i[first], dips.j[first], dips.j[second]], axis=1)
    u = np.maximum(dips.uncertainty[first], dips.uncertainty[second])
    ok = members[:, 0] != members[:, 2]
    return DilSet(members[ok], u[ok])


def _group(sorted_keys: np.ndarray) -> dict[tuple[int, int], tuple[int, int]]:
    if len(sorted_keys) == 0:
        return {}
    change = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    starts = np.concatenate([[0], np.nonzero(change)[0] + 1])
    ends = np.concatenate([starts[1:], [len(sorted_keys)]])
    return {(int(sorted_keys[s, 0]), int(sorted_keys[s, 1])): (int(s), int(e)) for s, e in zip(starts, ends)}


# ---------------------------------------------------------------- CSV I/O


def save_dips(dips: DipSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "T", "U", "label"])
        for d in dips:
            w.writerow([d.i, d.j, repr(d.gap), repr(d.uncertainty), repr(d.label)])


def load_dips(path) -> DipSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i", "j", "T", "U", "label"]:
            raise DataError(f"{path}: expected header i,j,T,U,label")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"{path}: malformed row {row}")
            try:
                i, j = int(row[0]), int(row[1])
                gap, u, label = (float(v) for v in row[2:])
            except ValueError:
                raise DataError(f"{path}: malformed row {row}") from None
            if not all(map(math.isfinite, (gap, u, label))):
                raise DataError(f"{path}: non-finite value in row {row}")
            if label not in (0.0, 1.0):
                raise DataError(f"{path}: label must be 0 or 1, got {row[4]}")
            rows.append(Dip(i, j, gap, u, label))
    try:
        return DipSet.from_rows(rows)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_dils(dils: DilSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "k", "U"])
        for (i, j, k), u in zip(dils.members.tolist(), dils.uncertainty.tolist()):
            w.writerow([i, j, k, repr(u)])


def load_dils(path) -> DilSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i", "j", "k", "U"]:
            raise DataError(f"{path}: expected header i,j,k,U")
        rows = []
        for row in reader:
            if not row:
                continue
            try:
                i, j, k, u = int(row[0]), int(row[1]), int(row[2]), float(row[3])
            except (ValueError, IndexError):
                raise DataError(f"{path}: malformed row {row}") from None
            rows.append(Dil(i, j, k, u))
    try:
        return DilSet.from_rows(rows)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
