"""Evaluation criteria: SRCC, PLCC, D-test, L-test, P-test and the session protocol."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import PRISTINE, DataError, Dataset
from .oracles import fit_logistic
from .pairgen import DipSet


def _vectors(a, b, min_len: int = 2) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if len(a) < min_len:
        raise ValueError(f"need at least {min_len} points")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("constant vector")
    return a, b


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    r = float(da @ db / np.sqrt((da @ da) * (db @ db)))
    return max(-1.0, min(1.0, r))


def srcc(a, b) -> float:
    """Spearman correlation: Pearson correlation of average ranks.

    Without ties this equals 1 - 6 sum d^2 / (N (N^2 - 1)), which is used
    directly in that case.
    """
    a, b = _vectors(a, b)
    ra, rb = rankdata(a), rankdata(b)
    n = len(a)
    if len(np.unique(a)) == n and len(np.unique(b)) == n:
        d = ra - rb
        return float(1.0 - 6.0 * (d @ d) / (n * (n * n - 1)))
    return _pearson(ra, rb)


def plcc(predictions, mos, remap: bool = True, fit_mask=None) -> float:
    """Pearson correlation, optionally after a 4-parameter logistic remap.

    With `fit_mask`, the logistic is fitted on the masked points and the
    correlation is computed on the rest; otherwise both use all points.
    """
    q, s = np.asarray(predictions, dtype=np.float64), np.asarray(mos, dtype=np.float64)
    if q.shape != s.shape:
        raise ValueError(f"length mismatch: {q.shape} vs {s.shape}")
    if not remap:
        return _pearson(*_vectors(q, s))
    if fit_mask is None:
        fit_q, fit_s, test_q, test_s = q, s, q, s
    else:
        m = np.asarray(fit_mask, dtype=bool)
        fit_q, fit_s, test_q, test_s = q[m], s[m], q[~m], s[~m]
    params = fit_logistic(fit_q, fit_s)
    return _pearson(*_vectors(params(test_q), test_s))


@dataclass
class CorrelationSummary:
    srcc: dict[str, float] = field(default_factory=dict)
    plcc: dict[str, float] = field(default_factory=dict)
    sessions: int = 0
    split_fraction: float = 0.8
    seed: int = 0


def session_protocol(
    dataset: Dataset,
    scores,
    sessions: int = 1000,
    split: float = 0.8,
    seed: int = 0,
    remap: bool = True,
    mos=None,
) -> CorrelationSummary:
    """Median SRCC/PLCC over random source splits.

    Each session puts a `split` fraction of the sources (with all their
    versions) in the fitting side and tests on the rest; SRCC and remapped
    PLCC are computed on the test side, overall and per distortion type.
    With split == 0 and remap disabled every session tests on the full set.
    """
    mos = dataset.mos if mos is None else np.asarray(mos, dtype=np.float64)
    if mos is None:
        raise DataError("dataset has no MOS")
    q = np.asarray(scores, dtype=np.float64)
    if len(q) != len(dataset) or len(mos) != len(dataset):
        raise ValueError("scores must cover the dataset")
    if sessions < 1:
        raise ValueError("sessions must be >= 1")
    if not 0 <= split < 1:
        raise ValueError("split must be in [0, 1)")
    src = dataset.source_ids
    sources = np.unique(src)
    n_fit = int(round(split * len(sources)))
    if split > 0 and (n_fit < 1 or n_fit >= len(sources)):
        raise ValueError(f"too few sources ({len(sources)}) for a {split} split")
    if remap and n_fit == 0:
        raise ValueError("remapping needs a nonempty fitting split")
    dist = dataset.distortions
    groups = {"all": np.ones(len(dataset), dtype=bool)}
    for t in dataset.distortion_types:
        groups[t] = dist == t

    rng = np.random.default_rng(seed)
    acc_s, acc_p = defaultdict(list), defaultdict(list)
    for _ in range(sessions):
        fit_src = rng.choice(sources, size=n_fit, replace=False) if n_fit else np.zeros(0, dtype=src.dtype)
        fit_mask = np.isin(src, fit_src)
        test = ~fit_mask
        params = fit_logistic(q[fit_mask], mos[fit_mask]) if remap else None
        mapped = params(q) if remap else q
        for name, g in groups.items():
            sel = test & g
            if sel.sum() < 2:
                continue
            try:
                acc_s[name].append(srcc(q[sel], mos[sel]))
                acc_p[name].append(_pearson(*_vectors(mapped[sel], mos[sel])))
            except ValueError:
                continue
    return CorrelationSummary(
        srcc={k: float(np.median(v)) for k, v in acc_s.items()},
        plcc={k: float(np.median(v)) for k, v in acc_p.items()},
        sessions=sessions,
        split_fraction=split,
        seed=seed,
    )


def d_test(pristine_scores, distorted_scores) -> tuple[float, float]:
    """Best balanced accuracy separating pristine (q > T) from distorted (q <= T).

    Thresholds swept: -inf, +inf and midpoints of adjacent distinct scores.
    Returns (D, T*); ties in D go to the highest threshold.
    """
    p = np.sort(np.asarray(pristine_scores, dtype=np.float64))
    d = np.sort(np.asarray(distorted_scores, dtype=np.float64))
    if len(p) == 0 or len(d) == 0:
        raise ValueError("both classes must be nonempty")
    u = np.unique(np.concatenate([p, d]))
    thresholds = np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2, [np.inf]])
    above_p = len(p) - np.searchsorted(p, thresholds, side="right")
    below_d = np.searchsorted(d, thresholds, side="right")
    r = 0.5 * (above_p / len(p) + below_d / len(d))
    k = len(r) - 1 - int(np.argmax(r[::-1]))
    return float(r[k]), float(thresholds[k])


def l_test(dataset: Dataset, scores) -> float:
    """Mean over (source, distortion type) of SRCC between level and quality loss.

    Scores are quality (higher is better); they are negated before
    correlating with the distortion level so a model whose quality falls
    monotonically with level scores 1. Pristine records are excluded. A
    group whose scores are all equal contributes 0.
    """
    q = np.asarray(scores, dtype=np.float64)
    if len(q) != len(dataset):
        raise ValueError("scores must cover the dataset")
    levels = dataset.levels
    groups = defaultdict(list)
    for r in dataset.records:
        if r.distortion != PRISTINE:
            groups[(r.source_id, r.distortion)].append(r.id)
    if not groups:
        raise DataError("no distorted records")
    expected = sorted({int(levels[i]) for g in groups.values() for i in g})
    if len(expected) < 2:
        raise DataError("L-test needs at least 2 distortion levels")
    total = 0.0
    for key, ids in groups.items():
        if sorted(levels[ids].tolist()) != expected:
            raise DataError(f"group {key} is missing levels: has {sorted(levels[ids].tolist())}, expected {expected}")
        g = q[ids]
        total += 0.0 if np.ptp(g) == 0 else srcc(levels[ids], -g)
    return total / len(groups)


def p_test(dips: DipSet, scores) -> tuple[float, int, int]:
    """Fraction of pairs the scores order correctly; ties count as wrong.

    Returns (P, M_c, M_i).
    """
    if len(dips) == 0:
        raise ValueError("empty pair set")
    q = np.asarray(scores, dtype=np.float64)
    better = np.where(dips.label >= 0.5, dips.i, dips.j)
    worse = np.where(dips.label >= 0.5, dips.j, dips.i)
    m_c = int(np.sum(q[better] > q[worse]))
    return m_c / len(dips), m_c, len(dips) - m_c


@dataclass
class EvalReport:
    srcc: dict[str, float] = field(default_factory=dict)
    plcc: dict[str, float] = field(default_factory=dict)
    oracle_srcc: dict[str, float] = field(default_factory=dict)
    D: float | None = None
    threshold: float | None = None
    L_s: float | None = None
    P: float | None = None
    M: int | None = None
    M_c: int | None = None
    M_i: int | None = None
    session_count: int | None = None
    split_fraction: float | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    dataset: Dataset,
    scores,
    dips: DipSet | None = None,
    sessions: int = 1000,
    split: float = 0.8,
    seed: int = 0,
    ids=None,
) -> EvalReport:
    """Run every criterion the data supports on the records in `ids`.

    D- and L-tests need pristine/distorted records; P needs `dips`; the
    session protocol needs MOS. SRCC against each oracle column is
    reported when oracle scores are present.
    """
    q = np.asarray(scores, dtype=np.float64)
    if len(q) != len(dataset):
        raise ValueError("scores must cover the dataset")
    sub = dataset if ids is None else dataset.subset(ids)
    qs = q if ids is None else q[np.asarray(ids, dtype=np.int64)]
    rep = EvalReport()
    for name in sub.oracle_names:
        col = sub.scores(name)
        if np.ptp(col) > 0 and np.ptp(qs) > 0:
            rep.oracle_srcc[name] = srcc(qs, col)
    pristine = sub.levels == 0
    if pristine.any() and (~pristine).any():
        rep.D, rep.threshold = d_test(qs[pristine], qs[~pristine])
    if sub.level_count >= 2:
        rep.L_s = l_test(sub, qs)
    if dips is not None and len(dips):
        rep.P, rep.M_c, rep.M_i = p_test(dips, q)
        rep.M = len(dips)
    if sub.mos is not None:
        summary = session_protocol(sub, qs, sessions=sessions, split=split, seed=seed)
        rep.srcc, rep.plcc = summary.srcc, summary.plcc
        rep.session_count, rep.split_fraction, rep.seed = sessions, split, seed
    return rep

