"""gMAD pair selection: images the defender rates equal but the attacker rates far apart."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class GmadPair(NamedTuple):
    best_id: int
    worst_id: int
    defender_level: int


def level_centers(defender: np.ndarray, level_count: int) -> np.ndarray:
    """Center of each defender quantile level: the (l + 1/2) / L quantile."""
    return np.quantile(defender, (np.arange(level_count) + 0.5) / level_count)


def gmad_pairs(attacker, defender, level_count: int = 5, band_eps: float = 0.5) -> list[GmadPair]:
    """For each defender level, the attacker's best and worst image among
    images whose defender score is within `band_eps` of the level center.

    Levels whose centers coincide (e.g. a constant defender) are merged;
    levels with fewer than two candidates are skipped. Swap the arguments to
    exchange the roles of the two models.
    """
    a = np.asarray(attacker, dtype=np.float64)
    d = np.asarray(defender, dtype=np.float64)
    if a.shape != d.shape or a.ndim != 1:
        raise ValueError("attacker and defender must score the same images")
    if len(a) == 0:
        raise ValueError("empty dataset")
    if band_eps <= 0:
        raise ValueError("band_eps must be positive")
    if level_count < 1:
        raise ValueError("level_count must be >= 1")
    pairs = []
    seen = set()
    for level, center in enumerate(level_centers(d, level_count)):
        if center in seen:
            continue
        seen.add(center)
        cand = np.nonzero(np.abs(d - center) <= band_eps)[0]
        if len(cand) < 2:
            continue
        best = cand[np.argmax(a[cand])]
        rest = cand[cand != best]
        worst = rest[np.argmin(a[rest])]
        pairs.append(GmadPair(int(best), int(worst), level))
    if not pairs:
        raise ValueError("no defender level has two or more candidates; widen band_eps")
    return pairs
