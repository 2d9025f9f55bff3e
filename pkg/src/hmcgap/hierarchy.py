"""Class hierarchies: DAG-to-tree conversion, leaf paths and the hierarchy constraint.

Classes are opaque string identifiers.  A :class:`ClassHierarchy` is a rooted
tree whose class order is breadth-first from the root with children sorted
lexicographically, so every parent column precedes its children.  Matrices
over a hierarchy (labels, probabilities) use that column order.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, StructureError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawHierarchyDag:
    """Multi-parent hierarchy as read from an edge list."""

    classes: frozenset
    edges: frozenset  # (child, parent) pairs

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]]) -> "RawHierarchyDag":
        edges = frozenset((str(c), str(p)) for c, p in edges)
        classes = frozenset(x for e in edges for x in e)
        return cls(classes, edges)

    def roots(self) -> list[str]:
        children = {c for c, _ in self.edges}
        return sorted(self.classes - children)

    def children_map(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for c, p in self.edges:
            out.setdefault(p, []).append(c)
        for v in out.values():
            v.sort()
        return out


class ClassHierarchy:
    """Immutable rooted tree of classes.

    Parameters
    ----------
    parent : mapping
        class -> parent class; the root maps to ``None``.

    Attributes
    ----------
    classes : tuple of str
        Breadth-first order from the root, children sorted lexicographically.
    level : dict
        class -> level, root is level 1.
    leaf_paths : tuple of tuple of str
        One path per leaf, ordered leaf -> root, in depth-first leaf order.
    """

    def __init__(self, parent: Mapping[str, str | None]):
        roots = [c for c, p in parent.items() if p is None]
        if len(roots) != 1:
            raise StructureError(f"expected exactly one root, found {len(roots)}: {sorted(roots)[:5]}")
        root = roots[0]
        children: dict[str, list[str]] = {c: [] for c in parent}
        for c, p in parent.items():
            if p is None:
                continue
            if p not in children:
                raise StructureError(f"parent {p!r} of {c!r} is not a class of the hierarchy")
            children[p].append(c)
        for v in children.values():
            v.sort()

        order = []
        level = {root: 1}
        queue = deque([root])
        while queue:
            c = queue.popleft()
            order.append(c)
            for ch in children[c]:
                level[ch] = level[c] + 1
                queue.append(ch)
        if len(order) != len(parent):
            unreachable = sorted(set(parent) - set(order))
            raise StructureError(f"parent map has cycles or detached classes: {unreachable[:5]}")

        self.root = root
        self.classes = tuple(order)
        self.parent = {c: parent[c] for c in order}
        self.children = {c: tuple(children[c]) for c in order}
        self.level = level
        self.index = {c: i for i, c in enumerate(order)}
        self.parent_index = np.array(
            [-1 if self.parent[c] is None else self.index[self.parent[c]] for c in order], dtype=np.int64
        )
        self.levels = np.array([level[c] for c in order], dtype=np.int64)
        self.depth = int(self.levels.max())

        leaves = []
        stack = [root]
        while stack:
            c = stack.pop()
            if not children[c]:
                leaves.append(c)
            stack.extend(reversed(children[c]))
        self.leaves = tuple(leaves)
        self.leaf_paths = tuple(tuple(self._walk_up(leaf)) for leaf in leaves)
        self.path_indices = tuple(np.array([self.index[c] for c in p], dtype=np.int64) for p in self.leaf_paths)
        # root -> parent order, self excluded
        self.ancestor_indices = tuple(
            np.array([self.index[a] for a in reversed(self._walk_up(c)[1:])], dtype=np.int64) for c in order
        )

    def _walk_up(self, c: str) -> list[str]:
        out = [c]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out

    def __len__(self) -> int:
        return len(self.classes)

    def __repr__(self) -> str:
        return f"ClassHierarchy(root={self.root!r}, classes={len(self)}, leaves={len(self.leaves)}, depth={self.depth})"

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassHierarchy) and self.parent == other.parent

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.parent.items(), key=lambda kv: kv[0])))

    def ancestors(self, c: str) -> list[str]:
        """Ancestors of ``c`` ordered from its parent up to the root."""
        return self._walk_up(c)[1:]

    def levels_count(self) -> dict[int, int]:
        vals, counts = np.unique(self.levels, return_counts=True)
        return {int(v): int(n) for v, n in zip(vals, counts)}

    def edges(self) -> list[tuple[str, str]]:
        return [(c, p) for c, p in self.parent.items() if p is not None]


def read_hierarchy_tsv(path: str | Path) -> RawHierarchyDag:
    """Read a ``child<TAB>parent`` edge list; lines starting with ``#`` are skipped."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise InputError(f"{path}:{lineno}: expected 'child<TAB>parent', got {line!r}")
            if parts[0] == parts[1]:
                raise StructureError(f"{path}:{lineno}: self-loop on {parts[0]!r}")
            edges.append((parts[0], parts[1]))
    return RawHierarchyDag.from_edges(edges)


def write_hierarchy_tsv(h: ClassHierarchy, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c, p in h.edges():
            fh.write(f"{c}\t{p}\n")


def topological_order(dag: RawHierarchyDag, root: str) -> list[str]:
    """Kahn order of the sub-DAG reachable downward from ``root``.

    Among ready classes the lexicographically smallest is emitted first.
    """
    if root not in dag.classes:
        raise InputError(f"root {root!r} not found in hierarchy")
    children = dag.children_map()
    reach = {root}
    stack = [root]
    while stack:
        for ch in children.get(stack.pop(), ()):
            if ch not in reach:
                reach.add(ch)
                stack.append(ch)
    indeg = dict.fromkeys(reach, 0)
    for c, p in dag.edges:
        if c in reach and p in reach:
            indeg[c] += 1
    ready = [c for c, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        c = heapq.heappop(ready)
        order.append(c)
        for ch in children.get(c, ()):
            indeg[ch] -= 1
            if indeg[ch] == 0:
                heapq.heappush(ready, ch)
    if len(order) != len(reach):
        stuck = sorted(c for c, d in indeg.items() if d > 0)
        raise StructureError(f"cycle detected below root {root!r} involving {stuck[:5]}")
    if order[0] != root:
        raise StructureError(f"root {root!r} has a parent inside its own sub-hierarchy")
    return order


def dag_to_tree(dag: RawHierarchyDag, root: str) -> ClassHierarchy:
    """Keep one parent per class: the one earliest in :func:`topological_order`."""
    order = topological_order(dag, root)
    rank = {c: i for i, c in enumerate(order)}
    parent: dict[str, str | None] = {root: None}
    for c, p in dag.edges:
        if c not in rank or p not in rank or c == root:
            continue
        if c not in parent or rank[p] < rank[parent[c]]:
            parent[c] = p
    dropped = len(dag.classes) - len(order)
    if dropped:
        logger.warning("%d classes not reachable from root %s were dropped", dropped, root)
    return ClassHierarchy(parent)


def load_hierarchy(path: str | Path, root: str | None = None) -> ClassHierarchy:
    dag = read_hierarchy_tsv(path)
    if root is None:
        roots = dag.roots()
        if len(roots) != 1:
            raise InputError(f"{path}: {len(roots)} candidate roots {roots[:5]}; pass the root explicitly")
        root = roots[0]
    return dag_to_tree(dag, root)


def enumerate_leaf_paths(h: ClassHierarchy) -> list[tuple[str, ...]]:
    return list(h.leaf_paths)


def _matrix_view(y, h: ClassHierarchy) -> tuple[np.ndarray, Sequence]:
    values = np.asarray(getattr(y, "values", y))
    class_ids = tuple(getattr(y, "class_ids", h.classes))
    if class_ids != h.classes:
        raise InputError("matrix class order does not match the hierarchy")
    rows = getattr(y, "instance_ids", range(values.shape[0]))
    return values, rows


def check_hierarchy_constraint(y, h: ClassHierarchy) -> list[tuple]:
    """Pairs ``(instance, class)`` annotated while their parent class is not."""
    values, rows = _matrix_view(y, h)
    values = values.astype(bool)
    out = []
    child_cols = np.flatnonzero(h.parent_index >= 0)
    bad = values[:, child_cols] & ~values[:, h.parent_index[child_cols]]
    for r, k in zip(*np.nonzero(bad)):
        out.append((rows[r], h.classes[child_cols[k]]))
    return out


def enforce_probability_monotonicity(p: np.ndarray, h: ClassHierarchy) -> np.ndarray:
    """Top-down clamp so that no class exceeds its parent; returns a new array."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != len(h):
        raise InputError(f"probability matrix must have {len(h)} columns, got shape {p.shape}")
    if p.size and (not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0):
        raise InputError("probabilities must lie in [0, 1]")
    out = p.copy()
    for lvl in range(2, h.depth + 1):
        cols = np.flatnonzero(h.levels == lvl)
        out[:, cols] = np.minimum(out[:, cols], out[:, h.parent_index[cols]])
    return out


def ancestor_closure(values: np.ndarray, h: ClassHierarchy) -> np.ndarray:
    """Binary matrix with every ancestor of an annotated class also annotated."""
    out = np.asarray(values, dtype=bool).copy()
    # reversed breadth-first order visits every child before its parent
    for c in range(len(h) - 1, 0, -1):
        out[:, h.parent_index[c]] |= out[:, c]
    return out.astype(np.int8)
