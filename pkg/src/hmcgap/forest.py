"""Random forest of multi-output regression trees for hierarchical label sets.

Each tree splits on the axis-aligned threshold that maximises the reduction
of summed per-class variance of the label vectors (predictive-clustering
style) and stores mean label vectors at the leaves.  All randomness comes
from numpy's PCG64 generator: tree ``t`` of a forest with seed ``s`` uses
``np.random.default_rng(mix(s) ^ t)`` for its bootstrap draw and feature
order, where ``mix(s)`` is the first 64-bit word of ``SeedSequence(s)``.
Mixing first keeps nearby seeds from sharing the same set of tree streams.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError
from .hierarchy import ClassHierarchy, enforce_probability_monotonicity

logger = logging.getLogger(__name__)

FORMAT_TAG = "hmcgap-forest"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    min_samples_split: int = 5
    max_features: int | None = None  # None: ceil(sqrt(n_features)) per split
    folds: int = 5
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise InputError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise InputError("min_samples_split must be >= 2")
        if self.folds < 2:
            raise InputError("folds must be >= 2")
        if self.max_features is not None and self.max_features < 1:
            raise InputError("max_features must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")

    def features_per_split(self, n_features: int) -> int:
        if self.max_features is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        return min(self.max_features, n_features)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf.  Rows go left when ``x <= threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf node index reached by every row of ``x``."""
        node = np.zeros(len(x), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = x[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]


@dataclass(frozen=True, eq=False)
class FittedForest:
    trees: tuple
    bootstrap_masks: np.ndarray  # (n_trees, n_train) bool, True = in-bag
    config: ForestConfig
    n_features: int
    n_outputs: int
    ranges: np.ndarray = field(repr=False, default=None)  # (2, n_outputs) training min/max per column


def _best_split(xn, yn, features_order, m, total_sum, parent_score):
    """Scan up to ``m`` non-constant features; return (feature, threshold, gain) or None."""
    n = len(yn)
    best = None
    visited = 0
    for f in features_order:
        xs = xn[:, f]
        lo, hi = xs.min(), xs.max()
        if lo == hi:
            continue
        visited += 1
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        left = np.cumsum(yn[order], axis=0)[:-1]
        nl = np.arange(1, n, dtype=np.float64)
        right = total_sum - left
        score = (left * left).sum(axis=1) / nl + (right * right).sum(axis=1) / (n - nl)
        valid = xs[:-1] < xs[1:]
        score = np.where(valid, score, -np.inf)
        k = int(np.argmax(score))
        gain = score[k] - parent_score
        thr = 0.5 * (xs[k] + xs[k + 1])
        if thr >= xs[k + 1]:
            thr = xs[k]
        cand = (gain, f, thr)
        if best is None or gain > best[0] or (gain == best[0] and (f, thr) < (best[1], best[2])):
            best = cand
        if visited >= m:
            break
    if best is None:
        return None
    gain, f, thr = best
    if gain <= 1e-12 * max(parent_score, 1.0):
        return None
    return int(f), float(thr), float(gain)


def fit_tree(x: np.ndarray, y: np.ndarray, min_samples_split: int, m: int, rng: np.random.Generator) -> Tree:
    """Grow one unpruned tree on ``(x, y)`` (rows may repeat)."""
    n_out = y.shape[1]
    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(y[rows].mean(axis=0) if len(rows) else np.zeros(n_out))
        counts.append(len(rows))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(x))), np.arange(len(x)))]
    n_features = x.shape[1]
    while stack:
        node, rows = stack.pop()
        n = len(rows)
        if n < min_samples_split:
            continue
        yn = y[rows]
        total = yn.sum(axis=0)
        parent_score = float((total * total).sum() / n)
        sse = float((yn * yn).sum()) - parent_score
        if sse <= 1e-12 * max(parent_score, 1.0):
            continue
        split = _best_split(x[rows], yn, rng.permutation(n_features), m, total, parent_score)
        if split is None:
            continue
        f, thr, gain = split
        assert gain > 0.0
        go_left = x[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows))
        stack.append((left[node], lrows))

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64).reshape(len(feature), n_out),
        np.array(counts, dtype=np.int64),
    )


def _as_arrays(x, y=None):
    xv = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if y is None:
        return xv
    yv = np.asarray(getattr(y, "values", y), dtype=np.float64)
    if len(xv) != len(yv):
        raise InputError(f"features have {len(xv)} rows but labels have {len(yv)}")
    return xv, yv


def fit(x, y, cfg: ForestConfig = ForestConfig()) -> FittedForest:
    """Fit ``cfg.n_trees`` trees, each on a bootstrap sample of the rows."""
    xv, yv = _as_arrays(x, y)
    n = len(xv)
    if n < 1:
        raise InputError("cannot fit a forest on zero instances")
    m = cfg.features_per_split(xv.shape[1]) if xv.shape[1] else 1
    trees, masks = [], np.zeros((cfg.n_trees, n), dtype=bool)
    base = _mix_seed(cfg.seed)
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(base ^ t)
        rows = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        masks[t, rows] = True
        trees.append(fit_tree(xv[rows], yv[rows], cfg.min_samples_split, m, rng))
    ranges = np.vstack([yv.min(axis=0), yv.max(axis=0)]) if n else None
    return FittedForest(tuple(trees), masks, cfg, xv.shape[1], yv.shape[1], ranges)


def predict_raw(f: FittedForest, x) -> np.ndarray:
    xv = _as_arrays(x)
    if xv.ndim != 2 or xv.shape[1] != f.n_features:
        raise InputError(f"expected {f.n_features} feature columns, got {xv.shape}")
    acc = np.zeros((len(xv), f.n_outputs))
    for tree in f.trees:
        acc += tree.predict(xv)
    return np.clip(acc / len(f.trees), 0.0, 1.0)


def predict(f: FittedForest, x, h: ClassHierarchy) -> np.ndarray:
    """Mean leaf vector over trees, clamped to satisfy parent >= child."""
    return enforce_probability_monotonicity(predict_raw(f, x), h)


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Seeded, size-balanced fold id per row."""
    if n < folds:
        raise InputError(f"{n} instances cannot be split into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % folds
    return out


def _mix_seed(seed: int) -> int:
    return int(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0])


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1, np.uint64)[0])


def predict_out_of_fold(x, y, h: ClassHierarchy, cfg: ForestConfig = ForestConfig(),
                        fold_ids: np.ndarray | None = None) -> np.ndarray:
    """Predict each row with a forest trained on the other folds."""
    xv, yv = _as_arrays(x, y)
    n = len(xv)
    if fold_ids is None:
        fold_ids = fold_assignment(n, cfg.folds, cfg.seed)
    fold_ids = np.asarray(fold_ids)
    if fold_ids.shape != (n,):
        raise InputError("fold_ids must give one fold per instance")
    out = np.zeros(yv.shape)
    for k in np.unique(fold_ids):
        test = fold_ids == k
        sub = ForestConfig(cfg.n_trees, cfg.min_samples_split, cfg.max_features, cfg.folds,
                           _fold_seed(cfg.seed, int(k)), cfg.bootstrap)
        forest = fit(xv[~test], yv[~test], sub)
        out[test] = predict_raw(forest, xv[test])
    return enforce_probability_monotonicity(out, h)


def predict_resubstitution(x, y, h: ClassHierarchy, cfg: ForestConfig = ForestConfig()) -> np.ndarray:
    """Train on all rows and predict the same rows (sensitivity check only)."""
    return predict(fit(x, y, cfg), x, h)


@dataclass(frozen=True, eq=False)
class OOBCounts:
    oob_trees: np.ndarray  # (n, C) trees where the instance was out-of-bag
    positive: np.ndarray  # (n, C) of those, trees whose leaf value reached the class threshold

    def rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.positive / self.oob_trees
        return np.where(self.oob_trees > 0, r, 0.0)


def oob_vote_counts(f: FittedForest, x, thresholds: np.ndarray) -> OOBCounts:
    """Out-of-bag tallies on the training matrix; ``thresholds`` has one entry per class."""
    xv = _as_arrays(x)
    n = len(xv)
    if f.bootstrap_masks.shape[1] != n:
        raise InputError("x is not the training matrix of this forest")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.shape != (f.n_outputs,):
        raise InputError(f"need {f.n_outputs} class thresholds")
    oob = np.zeros(n, dtype=np.int64)
    pos = np.zeros((n, f.n_outputs), dtype=np.int64)
    for tree, mask in zip(f.trees, f.bootstrap_masks):
        rows = np.flatnonzero(~mask)
        if not rows.size:
            continue
        oob[rows] += 1
        pos[rows] += tree.predict(xv[rows]) >= thresholds
    return OOBCounts(np.repeat(oob[:, None], f.n_outputs, axis=1), pos)


def forest_to_bytes(f: FittedForest) -> bytes:
    """Self-describing ``.npz`` payload: JSON header plus concatenated node arrays."""
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "config": asdict(f.config),
        "n_features": f.n_features,
        "n_outputs": f.n_outputs,
        "n_trees": len(f.trees),
    }
    offsets = np.cumsum([0] + [t.n_nodes for t in f.trees]).astype(np.int64)
    arrays = {
        "header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
        "offsets": offsets,
        "bootstrap_masks": f.bootstrap_masks,
    }
    for name in ("feature", "threshold", "left", "right", "value", "n_samples"):
        parts = [getattr(t, name) for t in f.trees]
        arrays[name] = np.concatenate(parts) if name != "value" else np.vstack(parts)
    if f.ranges is not None:
        arrays["ranges"] = f.ranges
    # written member by member with a fixed timestamp so equal forests give equal bytes
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def forest_from_bytes(data: bytes) -> FittedForest:
    try:
        z = np.load(io.BytesIO(data), allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise InputError(f"not a saved forest: {exc}") from None
    with z:
        if "header" not in z.files:
            raise InputError("not a saved forest: header missing")
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != FORMAT_TAG or header.get("version") != FORMAT_VERSION:
            raise InputError(f"unsupported model format {header.get('format')!r} v{header.get('version')}")
        off = z["offsets"]
        cols = {k: z[k] for k in ("feature", "threshold", "left", "right", "value", "n_samples")}
        trees = tuple(
            Tree(*(cols[k][off[i]:off[i + 1]] for k in ("feature", "threshold", "left", "right", "value", "n_samples")))
            for i in range(header["n_trees"])
        )
        ranges = z["ranges"] if "ranges" in z.files else None
        return FittedForest(trees, z["bootstrap_masks"], ForestConfig(**header["config"]),
                            header["n_features"], header["n_outputs"], ranges)


def save_forest(f: FittedForest, path) -> None:
    with open(path, "wb") as fh:
        fh.write(forest_to_bytes(f))


def load_forest(path) -> FittedForest:
    with open(path, "rb") as fh:
        return forest_from_bytes(fh.read())
