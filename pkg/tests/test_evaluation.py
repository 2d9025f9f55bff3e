import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcgap.dataset import TransitionSet
from hmcgap.errors import InputError
from hmcgap.evaluation import (
    NEMENYI_Q,
    PrecisionCurve,
    PrecisionPoint,
    aupnc,
    friedman_nemenyi,
    per_level_report,
    precision_at_n,
    precision_curve,
    read_aupnc_csv,
    read_curve_csv,
    write_aupnc_csv,
    write_curve_csv,
)
from hmcgap.hierarchy import ClassHierarchy
from hmcgap.reassign import n_grid

import oracles

H = ClassHierarchy({"r": None, "a": "r", "b": "r", "a1": "a"})


def truth(pairs):
    return TransitionSet(frozenset(pairs), frozenset())


def test_precision_examples(caplog):
    gained = {(f"g{k}", "a") for k in range(5)}
    sel = sorted(gained) + [(f"h{k}", "a") for k in range(15)]
    assert precision_at_n(sel, truth(gained)) == (5, 15, 0.25)
    assert precision_at_n(sorted(gained)[:3], truth(gained))[2] == 1.0
    with caplog.at_level(logging.WARNING):
        assert precision_at_n([], truth(gained)) == (0, 0, 0.0)
    assert "empty selection" in caplog.text


@settings(max_examples=50, deadline=None)
@given(st.sets(st.tuples(st.integers(0, 6), st.integers(0, 4))), st.sets(st.tuples(st.integers(0, 6), st.integers(0, 4))))
def test_precision_matches_set_oracle(sel, gained):
    tp, fp, prec = precision_at_n(sel, truth(gained))
    assert tp == len(sel & gained) and fp == len(sel - gained)
    assert prec == (tp / len(sel) if sel else 0.0)


def test_lost_transitions_ignored():
    ts = TransitionSet(frozenset({("g", "a")}), frozenset({("g", "b")}))
    assert precision_at_n([("g", "a"), ("g", "b")], ts) == (1, 1, 0.5)


def test_area_examples():
    grid = np.array(n_grid())
    assert abs(aupnc(grid, np.full(20, 0.1)) - 0.019) <= 1e-12
    ramp = (grid - 0.01) / 0.19 * 0.2
    assert abs(aupnc(grid, ramp) - 0.019) <= 1e-12
    assert aupnc(grid, np.zeros(20)) == 0.0
    with pytest.raises(InputError):
        aupnc([0.1], [0.5])
    with pytest.raises(InputError):
        aupnc([0.1, 0.1], [0.5, 0.5])


def test_area_collinear_insertion_invariant():
    n = np.array([0.01, 0.1, 0.2])
    p = np.array([0.3, 0.2, 0.5])
    mid = 0.5 * (0.1 + 0.2)
    n2 = np.array([0.01, 0.1, mid, 0.2])
    p2 = np.array([0.3, 0.2, 0.35, 0.5])
    assert aupnc(n2, p2) == pytest.approx(aupnc(n, p), abs=1e-15)


def test_curve_from_selections_and_csv(tmp_path):
    gained = {("g", "a"), ("g", "a1")}
    sels = {0.02: [("g", "a"), ("g", "b")], 0.01: [("g", "a")]}
    curve = precision_curve(sels, truth(gained))
    assert [p.n for p in curve.points] == [0.01, 0.02]
    assert curve.points[1] == PrecisionPoint(0.02, 2, 1, 1, 0.5)
    path = tmp_path / "c.csv"
    write_curve_csv(curve, path, header=["rule"])
    assert path.read_text().splitlines()[:2] == ["# rule", "n,N,tp,fp,precision"]
    assert read_curve_csv(path) == curve
    assert aupnc(curve) == pytest.approx(0.01 * 0.75)


def test_aupnc_table_round_trip(tmp_path):
    table = {"d1": {"m1": 0.1, "m2": 1 / 3}, "d2": {"m1": 0.2, "m2": 0.0}}
    path = tmp_path / "a.csv"
    write_aupnc_csv(table, ["m1", "m2"], path)
    ds, ms, vals = read_aupnc_csv(path)
    assert ds == ["d1", "d2"] and ms == ["m1", "m2"]
    assert vals.tolist() == [[0.1, 1 / 3], [0.2, 0.0]]


def test_per_level_rows():
    gained = {("g", "a"), ("g", "a1"), ("h", "b")}
    sel = [("g", "a"), ("g", "a1"), ("h", "a")]
    rows = per_level_report(sel, truth(gained), H)
    assert [r["level"] for r in rows] == [1, 2, 3, "total"]
    by = {r["level"]: r for r in rows}
    assert (by[2]["gained"], by[2]["tp"], by[2]["selected"]) == (2, 1, 2)
    assert (by[3]["gained"], by[3]["tp"], by[3]["selected"], by[3]["precision"]) == (1, 1, 1, 1.0)
    assert by[1] == {"level": 1, "gained": 0, "tp": 0, "selected": 0, "precision": 0.0}
    for k in ("gained", "tp", "selected"):
        assert by["total"][k] == sum(r[k] for r in rows[:-1])
    assert by["total"]["tp"] == precision_at_n(sel, truth(gained))[0]


def test_per_level_single_level_selection():
    rows = per_level_report([("g", "r")], truth({("g", "r")}), H)
    assert rows[0]["selected"] == 1 and all(r["selected"] == 0 for r in rows[1:-1])


def test_two_methods_a_always_wins():
    t = friedman_nemenyi([[0.9, 0.1], [0.5, 0.4], [0.3, 0.2]])
    assert t.avg_ranks.tolist() == [1.0, 2.0]


def test_handcrafted_three_by_four():
    s = np.array([[0.3, 0.2, 0.1], [0.1, 0.3, 0.2], [0.5, 0.5, 0.1], [0.4, 0.1, 0.2]])
    # long-hand ranks: [1,2,3] [3,1,2] [1.5,1.5,3] [1,3,2] -> sums 6.5, 7.5, 10
    t = friedman_nemenyi(s, 0.10)
    assert t.ranks.tolist() == [[1, 2, 3], [3, 1, 2], [1.5, 1.5, 3], [1, 3, 2]]
    assert t.avg_ranks.tolist() == [6.5 / 4, 7.5 / 4, 10 / 4]
    assert abs(t.critical_distance - 2.052 * math.sqrt(3 * 4 / 24)) <= 1e-12
    chi2 = 12 * 4 / (3 * 4) * ((6.5 / 4) ** 2 + (7.5 / 4) ** 2 + 2.5**2 - 3 * 16 / 4)
    assert t.chi2 == pytest.approx(chi2, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ranks_match_longhand_and_affine_invariance(seed):
    rng = np.random.default_rng(seed)
    d, k = int(rng.integers(2, 8)), int(rng.integers(2, 8))
    s = rng.integers(0, 4, size=(d, k)) / 4
    t = friedman_nemenyi(s)
    want = np.array([oracles.average_ranks_longhand(list(row)) for row in s])
    assert np.array_equal(t.ranks, want)
    assert np.all((t.avg_ranks >= 1) & (t.avg_ranks <= k))
    s2 = s.copy()
    s2[0] = 3.0 * s2[0] + 7.0
    assert np.array_equal(friedman_nemenyi(s2).ranks, t.ranks)


def test_groups_and_summary():
    s = np.array([[0.9, 0.8, 0.1], [0.8, 0.9, 0.2], [0.9, 0.7, 0.3], [0.7, 0.8, 0.1], [0.9, 0.6, 0.2]])
    t = friedman_nemenyi(s, methods=["A", "B", "C"])
    assert t.avg_ranks.tolist() == [1.4, 1.6, 3.0]
    # CD = 2.343 * sqrt(12 / 30) = 1.4819 -> A,B together; B,C within 1.4 too
    assert t.groups == (("A", "B"), ("B", "C"))
    text = t.summary()
    assert "critical distance" in text and "A, B" in text


def test_friedman_errors():
    with pytest.raises(InputError):
        friedman_nemenyi([[0.1, np.nan], [0.2, 0.3]])
    with pytest.raises(InputError):
        friedman_nemenyi([[0.1, 0.2]])
    with pytest.raises(InputError):
        friedman_nemenyi([[0.1, 0.2], [0.3, 0.4]], alpha=0.01)
    with pytest.raises(InputError):
        friedman_nemenyi(np.zeros((3, 11)))


def test_q_table_values():
    assert NEMENYI_Q[0.05][4] == 2.569 and NEMENYI_Q[0.10][4] == 2.291
    assert list(NEMENYI_Q[0.05]) == list(range(2, 11))
