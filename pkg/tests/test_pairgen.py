import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrank.data import DataError, build_dataset
from qrank.pairgen import (
    Dip,
    DilSet,
    DipSet,
    _unrank_pairs,
    chain_dils,
    generate_dips,
    load_dils,
    load_dips,
    orient_pair,
    save_dils,
    save_dips,
    uncertainty,
)


def test_uncertainty_examples():
    assert uncertainty(0, 20) == 1.0
    assert uncertainty(10, 20) == pytest.approx(0.5, abs=1e-12)
    assert uncertainty(20, 20) == pytest.approx(0.0, abs=1e-12)
    assert uncertainty(25, 20) == 0.0
    with pytest.raises(ValueError):
        uncertainty(-1, 20)


def test_uncertainty_nonincreasing_grid():
    t = np.linspace(0, 40, 1000)
    u = uncertainty(t, 20)
    assert np.all(np.diff(u) <= 0)
    assert np.all((u >= 0) & (u <= 1))


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.1, 50))
def test_uncertainty_monotone_property(a, b, tc):
    lo, hi = sorted((a, b))
    assert uncertainty(lo, tc) >= uncertainty(hi, tc)


def test_orient_examples():
    scores = {0: [50, 52, 55], 1: [30, 31, 35]}
    assert orient_pair(0, 1, scores) == (0, 1, 20.0)
    assert orient_pair(1, 0, scores) == (0, 1, 20.0)
    assert orient_pair(0, 1, {0: [50, 30], 1: [40, 40]}) is None
    assert orient_pair(0, 1, {0: [5, 5], 1: [5, 5]}) is None
    assert orient_pair(0, 1, {0: [5, 6], 1: [5, 1]}) is None
    with pytest.raises(DataError):
        orient_pair(0, 2, scores)


def _ordered(values):
    n = len(values[0])
    layout = [(k, "pristine", 0) for k in range(n)]
    return build_dataset(layout, np.zeros((n, 0)), {f"o{m}": v for m, v in enumerate(values)})


def test_three_ordered_images_all_pairs():
    ds = _ordered([[10.0, 20.0, 30.0], [1.0, 2.0, 4.0]])
    dips = generate_dips(ds)
    assert len(dips) == 3
    assert sorted(zip(dips.i.tolist(), dips.j.tolist())) == [(1, 0), (2, 0), (2, 1)]
    assert np.array_equal(dips.label, np.ones(3))


def test_generate_determinism_and_budget(small_set):
    ds, _ = small_set
    a = generate_dips(ds, budget=1000, seed=4)
    b = generate_dips(ds, budget=1000, seed=4)
    c = generate_dips(ds, budget=1000, seed=5)
    for col in ("i", "j", "gap", "uncertainty", "label"):
        assert np.array_equal(getattr(a, col), getattr(b, col))
    assert len(a) <= 1000
    assert not np.array_equal(a.i, c.i)
    with pytest.raises(ValueError):
        generate_dips(ds, budget=0)


def test_generated_dips_unanimous(small_set):
    ds, _ = small_set
    dips = generate_dips(ds, budget=3000, seed=1, T_min=1.0)
    s = ds.score_matrix
    assert np.all(s[dips.i] > s[dips.j])
    assert np.allclose(dips.gap, (s[dips.i] - s[dips.j]).min(axis=1))
    assert np.all(dips.gap >= 1.0)
    assert np.allclose(dips.uncertainty, uncertainty(dips.gap, 20.0))


def test_full_enumeration_matches_brute_force(rng):
    n = 9
    vals = [rng.integers(0, 5, n).astype(float), rng.integers(0, 5, n).astype(float)]
    ds = _ordered(vals)
    dips = generate_dips(ds, Tc=3.0)
    got = set(zip(dips.i.tolist(), dips.j.tolist(), dips.gap.tolist()))
    scores = np.column_stack(vals)
    want = set()
    for a, b in itertools.combinations(range(n), 2):
        r = orient_pair(a, b, scores)
        if r is not None:
            want.add(r)
    assert got == want


@given(st.integers(2, 60))
@settings(max_examples=30)
def test_unrank_is_lexicographic_bijection(n):
    total = n * (n - 1) // 2
    a, b = _unrank_pairs(np.arange(total), n)
    assert list(zip(a.tolist(), b.tolist())) == list(itertools.combinations(range(n), 2))


def _dips(rows):
    return DipSet.from_rows([Dip(i, j, 0.0, u) for i, j, u in rows])


def test_chain_examples():
    dils = chain_dils(_dips([(1, 2, 0.0), (2, 3, 0.0)]))
    assert [tuple(d) for d in dils] == [(1, 2, 3, 0.0)]
    assert len(chain_dils(_dips([(1, 2, 0.0), (2, 3, 0.9)]), bucket_width=0.1)) == 0
    assert len(chain_dils(_dips([(1, 2, 0.0), (3, 4, 0.0)]))) == 0
    with pytest.raises(ValueError):
        chain_dils(_dips([(1, 2, 0.0)]), bucket_width=0)
    with pytest.raises(ValueError):
        chain_dils(DipSet.empty())


def test_chain_uses_max_uncertainty_and_no_cycles():
    dils = chain_dils(_dips([(1, 2, 0.51), (2, 3, 0.53), (2, 1, 0.52)]), bucket_width=0.05)
    assert [tuple(d) for d in dils] == [(1, 2, 3, 0.53)]


def test_chain_budget_determinism(small_set):
    ds, _ = small_set
    dips = generate_dips(ds, budget=2000, seed=2)
    a = chain_dils(dips, budget=500, seed=3)
    b = chain_dils(dips, budget=500, seed=3)
    assert np.array_equal(a.members, b.members) and np.array_equal(a.uncertainty, b.uncertainty)
    assert 0 < len(a) <= 500


def test_every_dil_decomposes(small_set):
    ds, _ = small_set
    dips = generate_dips(ds, budget=3000, seed=7)
    w = 0.05
    index = {}
    for d in dips:
        index.setdefault((d.i, d.j), []).append(d.uncertainty)
    dils = chain_dils(dips, bucket_width=w, budget=2000, seed=1)
    for i, j, k, u in dils:
        assert len({i, j, k}) == 3
        ok = [
            (a, b) for a in index[(i, j)] for b in index[(j, k)]
            if math.floor(a / w) == math.floor(b / w) and max(a, b) == u
        ]
        assert ok


def test_chain_exhaustive_matches_brute_force(rng):
    rows = [(int(a), int(b), float(u)) for a, b, u in zip(rng.integers(0, 8, 40), rng.integers(0, 8, 40), rng.uniform(0, 0.3, 40)) if a != b]
    dips = _dips(rows)
    got = sorted(tuple(d) for d in chain_dils(dips, bucket_width=0.1))
    want = sorted(
        (a[0], a[1], b[1], max(a[2], b[2]))
        for a in rows for b in rows
        if a[1] == b[0] and a[0] != b[1] and math.floor(a[2] / 0.1) == math.floor(b[2] / 0.1)
    )
    assert got == want


def test_csv_round_trip(tmp_path, small_set):
    ds, _ = small_set
    dips = generate_dips(ds, budget=500, seed=1)
    save_dips(dips, tmp_path / "d.csv")
    back = load_dips(tmp_path / "d.csv")
    for col in ("i", "j", "gap", "uncertainty", "label"):
        assert np.array_equal(getattr(back, col), getattr(dips, col))
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "i,j,T,U,label"
    dils = chain_dils(dips)
    save_dils(dils, tmp_path / "l.csv")
    lb = load_dils(tmp_path / "l.csv")
    assert np.array_equal(lb.members, dils.members) and np.array_equal(lb.uncertainty, dils.uncertainty)


def test_load_rejects_bad_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("i,j,T,U,label\n0,0,1,0.5,1\n")
    with pytest.raises(DataError):
        load_dips(p)
    p.write_text("i,j,T,U,label\n0,1,1,0.5,0.3\n")
    with pytest.raises(DataError):
        load_dips(p)
    p.write_text("a,b\n")
    with pytest.raises(DataError):
        load_dips(p)


def test_dilset_from_dips_flips_label0():
    dips = DipSet.from_rows([Dip(0, 1, 1.0, 0.2, 1.0), Dip(2, 3, 1.0, 0.1, 0.0)])
    lists = DilSet.from_dips(dips)
    assert lists.members.tolist() == [[0, 1], [3, 2]]
