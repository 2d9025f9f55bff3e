"""Synthetic two-version datasets with known hidden annotations."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import FeatureMatrix, LabelMatrix, write_annotations_tsv, write_features_csv
from .errors import InputError
from .hierarchy import ClassHierarchy, ancestor_closure, write_hierarchy_tsv


@dataclass(frozen=True)
class SyntheticSpec:
    n_instances: int = 200
    n_classes: int = 20
    n_clusters: int = 5
    n_features: int = 10
    leaves_per_cluster: int = 2
    separation: float = 3.0  # std of cluster centroids
    noise: float = 1.0  # std of per-instance feature noise
    hide_fraction: float = 0.1
    seed: int = 7

    def validate(self) -> None:
        if not 0.0 < self.hide_fraction < 1.0:
            raise InputError("hide fraction must lie in (0, 1)")
        if self.n_classes < 2 or self.n_instances < 2 or self.n_clusters < 1 or self.n_features < 1:
            raise InputError("synthetic sizes are degenerate")
        if self.n_clusters > self.n_instances:
            raise InputError("more clusters than instances")
        if self.leaves_per_cluster < 1:
            raise InputError("each cluster needs at least one leaf")
        if self.noise < 0 or self.separation <= 0:
            raise InputError("noise must be >= 0 and separation > 0")


PRESETS = {
    # 5 clusters, 200 instances, 20 classes, 10% hidden, noisy features
    "acceptance": SyntheticSpec(),
    "noiseless": SyntheticSpec(noise=0.0),
    "small": SyntheticSpec(n_instances=30, n_classes=12, n_clusters=3, n_features=6, seed=3),
}


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    spec: SyntheticSpec
    hierarchy: ClassHierarchy
    features: FeatureMatrix
    y_old: LabelMatrix
    y_new: LabelMatrix
    clusters: np.ndarray

    def write(self, out_dir: str | Path) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "hierarchy": out / "hierarchy.tsv",
            "features": out / "features.csv",
            "annotations_old": out / "annotations_old.tsv",
            "annotations_new": out / "annotations_new.tsv",
        }
        write_hierarchy_tsv(self.hierarchy, paths["hierarchy"])
        write_features_csv(self.features, paths["features"],
                           comments=[f"synthetic {k}={v}" for k, v in asdict(self.spec).items()])
        write_annotations_tsv(self.y_old, paths["annotations_old"])
        write_annotations_tsv(self.y_new, paths["annotations_new"])
        return {k: str(v) for k, v in paths.items()}


def random_tree(n_classes: int, rng: np.random.Generator) -> ClassHierarchy:
    """Random recursive tree; class ``k`` attaches to a uniformly chosen earlier class."""
    width = len(str(n_classes - 1))
    names = [f"c{k:0{width}d}" for k in range(n_classes)]
    parent = {names[0]: None}
    for k in range(1, n_classes):
        parent[names[k]] = names[int(rng.integers(0, k))]
    return ClassHierarchy(parent)


def hide_deepest(values: np.ndarray, h: ClassHierarchy, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Remove ``fraction`` of the non-root annotations, always peeling a pair with no annotated child."""
    y = values.astype(bool).copy()
    target = int(round(fraction * int(y[:, 1:].sum())))
    for _ in range(target):
        child_annotated = np.zeros_like(y)
        for c in range(1, len(h)):
            child_annotated[:, h.parent_index[c]] |= y[:, c]
        frontier = y & ~child_annotated
        frontier[:, 0] = False
        rows, cols = np.nonzero(frontier)
        if not len(rows):
            break
        k = int(rng.integers(0, len(rows)))
        y[rows[k], cols[k]] = False
    return y.astype(np.int8)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h = random_tree(spec.n_classes, rng)
    leaves = np.array([h.index[c] for c in h.leaves])
    per = min(spec.leaves_per_cluster, len(leaves))

    cluster_labels = np.zeros((spec.n_clusters, len(h)), dtype=bool)
    for k in range(spec.n_clusters):
        cluster_labels[k, rng.choice(leaves, size=per, replace=False)] = True
    cluster_labels = ancestor_closure(cluster_labels, h).astype(bool)
    centroids = rng.normal(0.0, spec.separation, size=(spec.n_clusters, spec.n_features))

    clusters = rng.permutation(np.arange(spec.n_instances) % spec.n_clusters)
    noise = rng.normal(0.0, 1.0, size=(spec.n_instances, spec.n_features)) * spec.noise
    feats = centroids[clusters] + noise
    y_new = cluster_labels[clusters].astype(np.int8)
    y_old = hide_deepest(y_new, h, spec.hide_fraction, rng)

    width = len(str(spec.n_instances - 1))
    ids = tuple(f"g{i:0{width}d}" for i in range(spec.n_instances))
    names = tuple(f"f{j + 1}" for j in range(spec.n_features))
    return SyntheticDataset(
        spec, h, FeatureMatrix(ids, names, feats),
        LabelMatrix(ids, h.classes, y_old), LabelMatrix(ids, h.classes, y_new), clusters,
    )
