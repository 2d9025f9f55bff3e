"""Feature and annotation matrices: loading, saving, closure and version diffs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Collection

import numpy as np

from .errors import InputError
from .hierarchy import ClassHierarchy, ancestor_closure, check_hierarchy_constraint

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    instance_ids: tuple
    feature_names: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape != (len(self.instance_ids), len(self.feature_names)):
            raise InputError(
                f"feature values of shape {values.shape} do not match "
                f"{len(self.instance_ids)} ids x {len(self.feature_names)} features"
            )
        if len(set(self.instance_ids)) != len(self.instance_ids):
            raise InputError("duplicate instance identifiers in feature matrix")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise InputError(f"non-finite feature value for {self.instance_ids[r]!r}, column {self.feature_names[c]!r}")
        object.__setattr__(self, "instance_ids", tuple(self.instance_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureMatrix(tuple(self.instance_ids[r] for r in rows), self.feature_names, self.values[rows])

    def hstack(self, other: "FeatureMatrix") -> "FeatureMatrix":
        if other.instance_ids != self.instance_ids:
            raise InputError("cannot join feature matrices with different instance order")
        return FeatureMatrix(self.instance_ids, self.feature_names + other.feature_names,
                             np.hstack([self.values, other.values]))


@dataclass(frozen=True, eq=False)
class LabelMatrix:
    instance_ids: tuple
    class_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (len(self.instance_ids), len(self.class_ids)):
            raise InputError(f"label values of shape {values.shape} do not match ids")
        if values.size and not np.isin(values, (0, 1)).all():
            raise InputError("label matrix must be binary")
        object.__setattr__(self, "instance_ids", tuple(self.instance_ids))
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        object.__setattr__(self, "values", values.astype(np.int8))

    @property
    def total(self) -> int:
        return int(self.values.sum())

    def pairs(self) -> set[tuple[str, str]]:
        return {(self.instance_ids[i], self.class_ids[c]) for i, c in zip(*np.nonzero(self.values))}

    def take(self, rows) -> "LabelMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return LabelMatrix(tuple(self.instance_ids[r] for r in rows), self.class_ids, self.values[rows])

    def __eq__(self, other) -> bool:
        return (isinstance(other, LabelMatrix) and self.instance_ids == other.instance_ids
                and self.class_ids == other.class_ids and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class TransitionSet:
    gained: frozenset
    lost: frozenset


def read_features_csv(path: str | Path) -> FeatureMatrix:
    """Read a CSV whose first column is ``id``; lines starting with ``#`` are comments."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(rows)
        except StopIteration:
            raise InputError(f"{path}: empty features file") from None
        if not header or header[0] != "id":
            raise InputError(f"{path}: first header column must be 'id'")
        ids, values = [], []
        for lineno, row in enumerate(rows, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: data row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                values.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise InputError(f"{path}: data row {lineno}: {exc}") from None
            ids.append(row[0])
    arr = np.array(values, dtype=np.float64).reshape(len(ids), len(header) - 1)
    return FeatureMatrix(tuple(ids), tuple(header[1:]), arr)


def write_features_csv(fm: FeatureMatrix, path: str | Path, comments: Collection[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id",) + fm.feature_names)
        for iid, row in zip(fm.instance_ids, fm.values):
            w.writerow([iid] + [repr(float(v)) for v in row])


def read_annotation_pairs(path: str | Path) -> list[tuple[int, str, str]]:
    """``(line number, instance, class)`` per non-comment line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise InputError(f"{path}:{lineno}: expected 'instance<TAB>class', got {line!r}")
            out.append((lineno, parts[0], parts[1]))
    return out


def load_annotations(path: str | Path, hierarchy: ClassHierarchy, instance_ids,
                     known_classes: Collection[str] | None = None) -> LabelMatrix:
    """Ancestor-closed label matrix over ``instance_ids`` x ``hierarchy.classes``.

    Classes listed in ``known_classes`` but outside ``hierarchy`` belong to a
    different sub-hierarchy and are skipped; any other unknown class is an
    error.  Instances missing from ``instance_ids`` are dropped with a warning.
    """
    instance_ids = tuple(instance_ids)
    row_of = {iid: r for r, iid in enumerate(instance_ids)}
    known = set(known_classes or ())
    values = np.zeros((len(instance_ids), len(hierarchy)), dtype=bool)
    bad, foreign, missing_inst = [], 0, set()
    seen = set()
    dupes = 0
    for lineno, iid, cid in read_annotation_pairs(path):
        if (iid, cid) in seen:
            dupes += 1
            continue
        seen.add((iid, cid))
        col = hierarchy.index.get(cid)
        if col is None:
            if cid in known:
                foreign += 1
            else:
                bad.append((lineno, cid))
            continue
        r = row_of.get(iid)
        if r is None:
            missing_inst.add(iid)
            continue
        values[r, col] = True
    if bad:
        listing = ", ".join(f"line {n}: {c!r}" for n, c in bad[:10])
        more = f" (+{len(bad) - 10} more)" if len(bad) > 10 else ""
        raise InputError(f"{path}: unknown class ids: {listing}{more}")
    if dupes:
        logger.info("%s: %d duplicate annotation lines ignored", path, dupes)
    if foreign:
        logger.debug("%s: %d annotations outside sub-hierarchy %s skipped", path, foreign, hierarchy.root)
    if missing_inst:
        logger.warning("%s: %d annotated instances have no features and were dropped", path, len(missing_inst))
    return LabelMatrix(instance_ids, hierarchy.classes, ancestor_closure(values, hierarchy))


def load_dataset(features_path, annotations_path, hierarchy: ClassHierarchy,
                 known_classes=None) -> tuple[FeatureMatrix, LabelMatrix]:
    x = read_features_csv(features_path)
    y = load_annotations(annotations_path, hierarchy, x.instance_ids, known_classes)
    return x, y


def write_annotations_tsv(y: LabelMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, c in zip(*np.nonzero(y.values)):
            fh.write(f"{y.instance_ids[i]}\t{y.class_ids[c]}\n")


def validate_labels(y: LabelMatrix, h: ClassHierarchy) -> None:
    violations = check_hierarchy_constraint(y, h)
    if violations:
        raise InputError(f"{len(violations)} hierarchy-constraint violations, e.g. {violations[:3]}")


def diff_versions(y_old: LabelMatrix, y_new: LabelMatrix) -> TransitionSet:
    if (y_old.instance_ids != y_new.instance_ids or y_old.class_ids != y_new.class_ids):
        raise InputError("label matrices must share instance and class order")
    old, new = y_old.values.astype(bool), y_new.values.astype(bool)
    ids, cls = y_old.instance_ids, y_old.class_ids
    gained = frozenset((ids[i], cls[c]) for i, c in zip(*np.nonzero(~old & new)))
    lost = frozenset((ids[i], cls[c]) for i, c in zip(*np.nonzero(old & ~new)))
    return TransitionSet(gained, lost)


def candidate_annotations(y, p) -> set[tuple[int, int]]:
    """Index pairs ``(row, column)`` with no annotation and positive probability."""
    yv = np.asarray(getattr(y, "values", y))
    pv = np.asarray(p)
    if yv.shape != pv.shape:
        raise InputError(f"shape mismatch: labels {yv.shape} vs probabilities {pv.shape}")
    return {(int(i), int(c)) for i, c in zip(*np.nonzero((yv == 0) & (pv > 0)))}


def annotated_rows(y: LabelMatrix, exclude_root: bool = True) -> np.ndarray:
    """Rows with at least one annotation (below the root by default)."""
    v = y.values[:, 1:] if exclude_root else y.values
    return np.flatnonzero(v.any(axis=1))
