"""Path-aggregated selection of missing annotations (REASSIGN).

For every instance and every leaf-to-root path of the hierarchy the
not-yet-annotated classes with positive predicted probability are collected;
their probabilities are aggregated (average, sum or minimum) into one path
score.  Paths are ranked by score and the annotations of the top ``N_p``
paths, deduplicated, form the selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .hierarchy import ClassHierarchy


class Aggregator(str, Enum):
    AVERAGE = "average"
    SUM = "sum"
    MINIMUM = "minimum"

    @classmethod
    def parse(cls, value) -> "Aggregator":
        if isinstance(value, Aggregator):
            return value
        aliases = {"avg": "average", "mean": "average", "min": "minimum"}
        try:
            return cls(aliases.get(str(value), str(value)))
        except ValueError:
            raise InputError(f"unknown aggregator {value!r}") from None

    @property
    def short(self) -> str:
        return {"average": "avg", "sum": "sum", "minimum": "min"}[self.value]

    def __call__(self, values: Sequence[float]) -> float:
        if not len(values):
            raise InputError("cannot aggregate an empty probability list")
        if self is Aggregator.MINIMUM:
            return min(values)
        total = 0.0
        for v in values:
            total += v
        return total / len(values) if self is Aggregator.AVERAGE else total


@dataclass(frozen=True)
class ScoredPath:
    instance: str
    path: tuple  # class ids, leaf first
    annot: tuple  # eligible (instance, class) pairs in path order
    score: float

    @property
    def leaf(self) -> str:
        return self.path[0]


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Ordered, duplicate-free annotation selection.

    ``ranks`` holds, per annotation, the 1-based rank of the first path (or
    ranked pair, for the baselines) that contributed it, and ``scores`` that
    path's or pair's score.
    """

    annotations: tuple
    scores: tuple
    ranks: tuple
    n_paths_requested: int
    shortfall: int = 0
    method: str = "reassign"
    n_target: int | None = None

    @property
    def n_annotations(self) -> int:
        return len(self.annotations)

    @property
    def per_annotation_rank(self) -> dict:
        return dict(zip(self.annotations, self.ranks))

    @property
    def overshoot(self) -> int:
        if self.n_target is None:
            return 0
        return max(0, self.n_annotations - self.n_target)

    def as_set(self) -> set:
        return set(self.annotations)


def id_ranks(ids: Sequence[str]) -> np.ndarray:
    """Lexicographic rank of every identifier."""
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    out = np.empty(len(ids), dtype=np.int64)
    out[order] = np.arange(len(ids))
    return out


def _arrays(y, yprime, h: ClassHierarchy):
    yv = np.asarray(getattr(y, "values", y))
    pv = np.asarray(getattr(yprime, "values", yprime), dtype=np.float64)
    if yv.shape != pv.shape or yv.ndim != 2 or yv.shape[1] != len(h):
        raise InputError(f"labels {yv.shape} and probabilities {pv.shape} must be aligned with {len(h)} classes")
    ids = tuple(getattr(y, "instance_ids", [str(i) for i in range(len(yv))]))
    return yv, pv, ids


@dataclass(frozen=True, eq=False)
class RankedPaths:
    """All non-empty (instance, path) candidates in selection order."""

    instance: np.ndarray  # row index per ranked candidate
    path: np.ndarray  # leaf-path index per ranked candidate
    score: np.ndarray
    eligible: np.ndarray = field(repr=False)  # (n, C) bool
    instance_ids: tuple = field(repr=False)
    hierarchy: ClassHierarchy = field(repr=False)

    def __len__(self) -> int:
        return len(self.score)

    def scored_path(self, k: int) -> ScoredPath:
        i, p = int(self.instance[k]), int(self.path[k])
        h = self.hierarchy
        cols = [c for c in h.path_indices[p] if self.eligible[i, c]]
        iid = self.instance_ids[i]
        return ScoredPath(iid, h.leaf_paths[p], tuple((iid, h.classes[c]) for c in cols), float(self.score[k]))

    def select(self, n_p: int, method: str = "reassign") -> SelectionResult:
        if n_p < 0:
            raise InputError("number of paths must be non-negative")
        take = min(n_p, len(self))
        h = self.hierarchy
        seen = set()
        annots, scores, ranks = [], [], []
        for k in range(take):
            i = int(self.instance[k])
            iid = self.instance_ids[i]
            for c in h.path_indices[int(self.path[k])]:
                if self.eligible[i, c] and (i, c) not in seen:
                    seen.add((i, c))
                    annots.append((iid, h.classes[c]))
                    scores.append(float(self.score[k]))
                    ranks.append(k + 1)
        return SelectionResult(tuple(annots), tuple(scores), tuple(ranks), n_p, n_p - take, method)


def rank_paths(y, yprime, h: ClassHierarchy, agg) -> RankedPaths:
    """Score every (instance, leaf path) and sort by score, instance id, leaf id."""
    agg = Aggregator.parse(agg)
    yv, pv, ids = _arrays(y, yprime, h)
    n = len(yv)
    eligible = (yv == 0) & (pv > 0)
    vals = np.where(eligible, pv, 0.0)
    inst, paths, scores = [], [], []
    for p, cols in enumerate(h.path_indices):
        count = eligible[:, cols].sum(axis=1)
        if agg is Aggregator.MINIMUM:
            s = np.where(eligible[:, cols], pv[:, cols], np.inf).min(axis=1)
        else:
            s = np.zeros(n)
            # sequential accumulation in path order keeps sums reproducible
            for c in cols:
                s = s + vals[:, c]
            if agg is Aggregator.AVERAGE:
                with np.errstate(invalid="ignore", divide="ignore"):
                    s = s / count
        rows = np.flatnonzero(count > 0)
        inst.append(rows)
        paths.append(np.full(len(rows), p, dtype=np.int64))
        scores.append(s[rows])
    inst = np.concatenate(inst) if inst else np.zeros(0, dtype=np.int64)
    paths = np.concatenate(paths) if paths else np.zeros(0, dtype=np.int64)
    scores = np.concatenate(scores) if scores else np.zeros(0)
    leaf_rank = id_ranks(h.leaves)
    order = np.lexsort((leaf_rank[paths], id_ranks(ids)[inst], -scores))
    return RankedPaths(inst[order], paths[order], scores[order], eligible, ids, h)


def score_paths(y, yprime, h: ClassHierarchy, agg) -> list[ScoredPath]:
    """Candidate paths in instance-major, path-minor order; empty paths omitted."""
    ranked = rank_paths(y, yprime, h, agg)
    order = np.lexsort((ranked.path, ranked.instance))
    return [ranked.scored_path(int(k)) for k in order]


def select_top(paths: Iterable[ScoredPath], n_p: int) -> SelectionResult:
    """Sort ``paths`` by decreasing score (ties: instance id, leaf id), union the first ``n_p``."""
    if n_p < 0:
        raise InputError("number of paths must be non-negative")
    ranked = sorted(paths, key=lambda sp: (-sp.score, sp.instance, sp.leaf))
    take = ranked[:n_p]
    seen = set()
    annots, scores, ranks = [], [], []
    for k, sp in enumerate(take, 1):
        for pair in sp.annot:
            if pair not in seen:
                seen.add(pair)
                annots.append(pair)
                scores.append(sp.score)
                ranks.append(k)
    return SelectionResult(tuple(annots), tuple(scores), tuple(ranks), n_p, n_p - len(take))


def compute_np(y, n: float) -> int:
    """Number of paths to select: floor of (number of annotations) * n."""
    if not 0.0 <= n <= 1.0:
        raise InputError(f"selection proportion must lie in [0, 1], got {n}")
    total = int(np.asarray(getattr(y, "values", y)).sum())
    # guard against 0.07 * 100 = 7.000000000000001 style artefacts in both directions
    return int(math.floor(total * n + 1e-9))


def n_grid(start: float = 0.01, stop: float = 0.2, step: float = 0.01) -> tuple:
    if not step > 0:
        raise InputError("n-grid step must be positive")
    if not (0.0 < start <= stop <= 1.0):
        raise InputError("n-grid must satisfy 0 < start <= stop <= 1")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + k * step, 10) for k in range(count))


def reassign_from_probabilities(y, yprime, h: ClassHierarchy, agg, grid: Sequence[float]) -> dict:
    """Per-``n`` selections from one ranking; larger ``n`` selections contain smaller ones."""
    if not len(grid):
        raise InputError("n-grid must not be empty")
    agg = Aggregator.parse(agg)
    ranked = rank_paths(y, yprime, h, agg)
    return {n: ranked.select(compute_np(y, n), f"reassign-{agg.short}") for n in grid}


def run_reassign(x, y, h: ClassHierarchy, cfg, agg, grid: Sequence[float], resubstitution: bool = False) -> dict:
    """Out-of-fold forest probabilities followed by path selection for every ``n``."""
    from .forest import predict_out_of_fold, predict_resubstitution

    yprime = predict_resubstitution(x, y, h, cfg) if resubstitution else predict_out_of_fold(x, y, h, cfg)
    return reassign_from_probabilities(y, yprime, h, agg, grid)
