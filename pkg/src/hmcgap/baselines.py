"""Comparison selectors: No-aggr, Random and the out-of-bag Noise-detect adaptation.

Every selector walks a ranked list of candidate pairs and, for each pair
taken, first adds the pair's unannotated ancestors (top-down), so the
selection joined with the existing annotations stays ancestor-closed.
Ancestor completion consumes budget; selection stops as soon as the
selected count reaches ``n_target``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .forest import OOBCounts
from .hierarchy import ClassHierarchy
from .reassign import SelectionResult, id_ranks


@dataclass(frozen=True)
class LevelThresholdRule:
    base: float = 0.5
    decay: float = 0.75

    def __post_init__(self):
        if not (0.0 < self.base <= 1.0 and 0.0 < self.decay <= 1.0):
            raise InputError("threshold base and decay must lie in (0, 1]")

    def __call__(self, level: int) -> float:
        return level_threshold(self, level)


def level_threshold(rule: LevelThresholdRule, level: int) -> float:
    """``base * decay ** (level - 1)``; level 1 is the root.

    With the defaults level 7 gives 0.0889892578125.  A value of 0.88989 is
    sometimes quoted for that level; it does not follow from the formula and
    is not used.
    """
    if level < 1:
        raise InputError(f"levels start at 1, got {level}")
    return rule.base * rule.decay ** (level - 1)


def class_thresholds(rule: LevelThresholdRule, h: ClassHierarchy) -> np.ndarray:
    return np.array([level_threshold(rule, int(lv)) for lv in h.levels])


def _labels(y, h: ClassHierarchy):
    yv = np.asarray(getattr(y, "values", y))
    if yv.ndim != 2 or yv.shape[1] != len(h):
        raise InputError(f"label matrix must have {len(h)} columns")
    ids = tuple(getattr(y, "instance_ids", [str(i) for i in range(len(yv))]))
    return yv, ids


def closed_greedy_selection(rows, cols, scores, yv, ids, h: ClassHierarchy, n_target: int,
                            method: str) -> SelectionResult:
    """Take ranked pairs in order, each with its missing ancestors, until ``n_target`` is reached."""
    if n_target < 0:
        raise InputError("n_target must be non-negative")
    selected = np.zeros(yv.shape, dtype=bool)
    annots, out_scores, ranks = [], [], []
    for k, (i, c) in enumerate(zip(rows, cols), 1):
        if len(annots) >= n_target:
            break
        i, c = int(i), int(c)
        if selected[i, c]:
            continue
        for a in h.ancestor_indices[c]:
            if yv[i, a] == 0 and not selected[i, a]:
                selected[i, a] = True
                annots.append((ids[i], h.classes[a]))
                out_scores.append(float(scores[k - 1]))
                ranks.append(k)
        selected[i, c] = True
        annots.append((ids[i], h.classes[c]))
        out_scores.append(float(scores[k - 1]))
        ranks.append(k)
    shortfall = max(0, n_target - len(annots))
    return SelectionResult(tuple(annots), tuple(out_scores), tuple(ranks), n_target, shortfall, method, n_target)


def select_no_aggr(y, yprime, h: ClassHierarchy, n_target: int) -> SelectionResult:
    """Rank single pairs by predicted probability (ties: instance id, class id)."""
    yv, ids = _labels(y, h)
    pv = np.asarray(getattr(yprime, "values", yprime), dtype=np.float64)
    if pv.shape != yv.shape:
        raise InputError("probabilities and labels must have the same shape")
    rows, cols = np.nonzero((yv == 0) & (pv > 0))
    score = pv[rows, cols]
    order = np.lexsort((id_ranks(h.classes)[cols], id_ranks(ids)[rows], -score))
    return closed_greedy_selection(rows[order], cols[order], score[order], yv, ids, h, n_target, "no-aggr")


def select_random(y, h: ClassHierarchy, n_target: int, seed: int = 0) -> SelectionResult:
    """Uniform draws over unannotated pairs, each completed with its missing ancestors."""
    yv, ids = _labels(y, h)
    rows, cols = np.nonzero(yv == 0)
    order = np.random.default_rng(seed).permutation(len(rows))
    score = np.full(len(rows), np.nan)
    return closed_greedy_selection(rows[order], cols[order], score, yv, ids, h, n_target, "random")


def select_noise_detect(y, counts: OOBCounts, h: ClassHierarchy, rule: LevelThresholdRule | None,
                        n_target: int, yprime=None) -> SelectionResult:
    """Rank unannotated pairs by out-of-bag misclassification rate.

    A tree misclassifies an unannotated pair when its leaf value for the
    class reaches the level threshold; the counts must have been tallied with
    ``class_thresholds(rule, h)``.  Ties fall back to the predicted
    probability, then instance id and class id.
    """
    yv, ids = _labels(y, h)
    if counts.positive.shape != yv.shape:
        raise InputError("out-of-bag counts do not match the label matrix")
    rate = counts.rate()
    pv = np.zeros(yv.shape) if yprime is None else np.asarray(getattr(yprime, "values", yprime), dtype=np.float64)
    rows, cols = np.nonzero(yv == 0)
    r = rate[rows, cols]
    order = np.lexsort((id_ranks(h.classes)[cols], id_ranks(ids)[rows], -pv[rows, cols], -r))
    return closed_greedy_selection(rows[order], cols[order], r[order], yv, ids, h, n_target, "noise-detect")
