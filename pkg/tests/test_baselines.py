import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcgap.baselines import (
    LevelThresholdRule,
    class_thresholds,
    level_threshold,
    select_no_aggr,
    select_noise_detect,
    select_random,
)
from hmcgap.dataset import LabelMatrix
from hmcgap.errors import InputError
from hmcgap.forest import OOBCounts
from hmcgap.hierarchy import ClassHierarchy

from conftest import random_problem
import oracles

H = ClassHierarchy({"r": None, "a": "r", "b": "r", "a1": "a", "a2": "a"})


def labels(rows):
    ids = tuple(f"g{k}" for k in range(len(rows)))
    vals = np.array([[c in row for c in H.classes] for row in rows], dtype=np.int8)
    return LabelMatrix(ids, H.classes, vals)


def test_level_thresholds():
    rule = LevelThresholdRule()
    assert abs(level_threshold(rule, 1) - 0.5) <= 1e-12
    assert abs(level_threshold(rule, 2) - 0.375) <= 1e-12
    assert abs(level_threshold(rule, 7) - 0.0889892578125) <= 1e-12
    assert all(rule(k + 1) < rule(k) for k in range(1, 12))
    with pytest.raises(InputError):
        level_threshold(rule, 0)
    with pytest.raises(InputError):
        LevelThresholdRule(base=1.5)
    assert class_thresholds(rule, H).tolist() == [0.5, 0.375, 0.375, 0.28125, 0.28125]


def test_no_aggr_examples():
    y = labels([{"r", "a"}])
    p = np.zeros((1, len(H)))
    p[0, H.index["r"]] = 1
    p[0, H.index["a"]] = 1
    p[0, H.index["a1"]] = 0.9
    p[0, H.index["a2"]] = 0.5
    p[0, H.index["b"]] = 0.1
    sel = select_no_aggr(y, p, H, 1)
    assert sel.annotations == (("g0", "a1"),)
    assert select_no_aggr(y, p, H, 0).annotations == ()


def test_no_aggr_tie_goes_to_lower_class_id():
    y = labels([{"r"}])
    p = np.zeros((1, len(H)))
    p[0, [H.index["r"], H.index["a"], H.index["a1"]]] = [1.0, 0.95, 0.95]
    assert select_no_aggr(y, p, H, 1).annotations == (("g0", "a"),)
    assert select_no_aggr(y, p, H, 2).annotations == (("g0", "a"), ("g0", "a1"))


def test_child_ranked_first_brings_parent_and_records_overshoot():
    # child id sorts before its parent, so on a probability tie the child is taken first
    h = ClassHierarchy({"r": None, "z": "r", "b": "z"})
    y = LabelMatrix(("g0",), h.classes, np.array([[1, 0, 0]]))
    p = np.array([[1.0, 0.6, 0.6]])
    sel = select_no_aggr(y, p, h, 1)
    assert sel.annotations == (("g0", "z"), ("g0", "b"))
    assert sel.n_annotations == 2 and sel.overshoot == 1 and sel.n_target == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 30))
def test_no_aggr_matches_brute_force(seed, n_target):
    h, y, p = random_problem(np.random.default_rng(seed), max_classes=6, max_instances=5)
    got = select_no_aggr(y, p, h, n_target)
    want = oracles.no_aggr(y.values, p, y.instance_ids, h.classes, h.parent, n_target)
    assert list(got.annotations) == want
    assert oracles.closed_per_instance(got.annotations, y.pairs(), h.parent)


def test_random_is_seeded_and_closed(rng):
    h, y, p = random_problem(rng, max_classes=15, max_instances=10)
    zeros = int((y.values == 0).sum())
    target = min(5, zeros)
    a = select_random(y, h, target, seed=3)
    assert a.annotations == select_random(y, h, target, seed=3).annotations
    for trial in range(100):
        s = select_random(y, h, target, seed=trial)
        assert oracles.closed_per_instance(s.annotations, y.pairs(), h.parent)
        assert s.n_annotations >= target
        assert all(y.values[y.instance_ids.index(i), h.index[c]] == 0 for i, c in s.annotations)


def test_random_includes_unannotated_parent():
    y = labels([{"r"}])
    for seed in range(30):
        s = select_random(y, H, 1, seed=seed)
        if ("g0", "a1") in s.as_set() or ("g0", "a2") in s.as_set():
            assert ("g0", "a") in s.as_set()


def test_random_exhaustion_selects_every_zero():
    y = labels([{"r", "a"}])
    s = select_random(y, H, 50, seed=0)
    assert s.as_set() == {("g0", "b"), ("g0", "a1"), ("g0", "a2")}
    assert s.shortfall == 47


def test_noise_detect_toy_ranking():
    y = labels([{"r", "a"}, {"r"}])
    oob = np.full((2, len(H)), 10)
    pos = np.zeros((2, len(H)), dtype=int)
    pos[0, H.index["a1"]] = 4  # rate 0.4
    pos[0, H.index["a2"]] = 4  # rate 0.4, less probable
    pos[1, H.index["b"]] = 7  # rate 0.7
    oob[1, H.index["a"]] = 0  # never out-of-bag: rate 0
    pos[1, H.index["a"]] = 0
    counts = OOBCounts(oob, pos)
    assert counts.rate()[0, H.index["a1"]] == 0.4
    p = np.zeros((2, len(H)))
    p[0, H.index["a1"]] = 0.3
    p[0, H.index["a2"]] = 0.2
    sel = select_noise_detect(y, counts, H, LevelThresholdRule(), 3, yprime=p)
    assert sel.annotations == (("g1", "b"), ("g0", "a1"), ("g0", "a2"))
    assert sel.scores == (0.7, 0.4, 0.4)
    everything = select_noise_detect(y, counts, H, LevelThresholdRule(), 100, yprime=p)
    assert everything.n_annotations == int((y.values == 0).sum())
    assert oracles.closed_per_instance(everything.annotations, y.pairs(), H.parent)


def test_noise_detect_shape_check():
    y = labels([{"r"}])
    with pytest.raises(InputError):
        select_noise_detect(y, OOBCounts(np.zeros((2, 5)), np.zeros((2, 5))), H, None, 1)
