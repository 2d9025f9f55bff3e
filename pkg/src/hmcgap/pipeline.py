"""End-to-end runs: features, out-of-fold probabilities, all selectors over the n-grid, reports."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import resource
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import LevelThresholdRule, class_thresholds, select_no_aggr, select_noise_detect, select_random
from .dataset import (FeatureMatrix, LabelMatrix, diff_versions, load_annotations, read_features_csv,
                      validate_labels)
from .errors import InputError
from .evaluation import (AREA_RULE, aupnc, friedman_nemenyi, per_level_report, precision_curve,
                         write_aupnc_csv, write_curve_csv, write_per_level_tsv)
from .forest import (ForestConfig, fit, load_forest, oob_vote_counts, predict_out_of_fold,
                     predict_resubstitution, save_forest)
from .gcn import FEATURE_NOTES, build_graph, spectral_embedding, structural_features
from .hierarchy import ClassHierarchy, RawHierarchyDag, dag_to_tree, read_hierarchy_tsv
from .reassign import Aggregator, SelectionResult, compute_np, n_grid, rank_paths

logger = logging.getLogger(__name__)

BASELINES = ("no-aggr", "random", "noise-detect")
ALL_METHODS = ("reassign-avg", "reassign-sum", "reassign-min") + BASELINES

REPORT_NOTES = (
    "old and new annotation versions are ancestor-closed before diffing",
    f"AUP@NC: {AREA_RULE}",
    "N_p = floor(sum(Y) * n); path ties broken by instance id then leaf id",
    "baselines are matched to the N achieved by the reference REASSIGN variant",
)


@dataclass
class RunConfig:
    hierarchy: str | None = None
    root: str | None = None
    roots_file: str | None = None
    all_roots: bool = False
    features: str | None = None
    edges: str | None = None
    cutoff: float = 100.0
    embed_dim: int | None = None
    annotations_old: str | None = None
    annotations_new: str | None = None
    annotated_only: bool = False
    trees: int = 200
    min_samples_split: int = 5
    max_features: int | None = None
    folds: int = 5
    seed: int = 0
    agg: tuple = ("average", "sum", "minimum")
    method: tuple = ALL_METHODS
    n_start: float = 0.01
    n_stop: float = 0.2
    n_step: float = 0.01
    threshold_base: float = 0.5
    threshold_decay: float = 0.75
    resubstitution: bool = False
    save_model: str | None = None
    load_model: str | None = None
    alpha: float = 0.05
    out: str | None = None

    def forest_config(self) -> ForestConfig:
        return ForestConfig(self.trees, self.min_samples_split, self.max_features, self.folds, self.seed)

    def grid(self) -> tuple:
        return n_grid(self.n_start, self.n_stop, self.n_step)

    def methods(self) -> tuple:
        aggs = [Aggregator.parse(a) for a in self.agg]
        out = []
        for m in self.method:
            if m.startswith("reassign"):
                if m == "reassign":
                    out.extend(f"reassign-{a.short}" for a in aggs)
                else:
                    agg = Aggregator.parse(m.split("-", 1)[1])
                    if agg in aggs:
                        out.append(f"reassign-{agg.short}")
            elif m in BASELINES:
                out.append(m)
            else:
                raise InputError(f"unknown method {m!r}; choose from {', '.join(ALL_METHODS)}")
        return tuple(dict.fromkeys(out))

    def reference_agg(self) -> Aggregator:
        return Aggregator.parse(self.agg[0])

    def validate(self) -> None:
        if not self.agg:
            raise InputError("at least one aggregator is required")
        for a in self.agg:
            Aggregator.parse(a)
        if not self.methods():
            raise InputError("no methods selected")
        self.grid()
        self.forest_config()
        LevelThresholdRule(self.threshold_base, self.threshold_decay)
        for name in ("hierarchy", "annotations_old", "annotations_new"):
            if getattr(self, name) is None:
                raise InputError(f"--{name.replace('_', '-')} is required")
        if self.features is None and self.edges is None:
            raise InputError("either --features or --edges is required")
        for name in ("hierarchy", "annotations_old", "annotations_new", "features", "edges", "roots_file",
                     "load_model"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise InputError(f"--{name.replace('_', '-')}: no such file {p}")
        if self.all_roots and self.roots_file is None:
            raise InputError("--all-roots needs --roots-file")
        if self.embed_dim is not None and self.embed_dim < 0:
            raise InputError("--embed-dim must be >= 0")
        if self.out is None:
            raise InputError("--out is required")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, (tuple, list)):
                v = ",".join(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def canonical(self) -> dict:
        d = asdict(self)
        d["agg"] = list(self.agg)
        d["method"] = list(self.method)
        return d


def _convert(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds:
        raise InputError(f"unknown config key {name!r}")
    kind = str(kinds[name])
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise InputError(f"config key {name!r} expects a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if kind == "tuple":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise InputError(f"config key {name!r}: cannot parse {raw!r}") from None
    return raw


def read_config_text(path: str | Path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment line."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            key = key.strip().replace("-", "_")
            out[key] = _convert(key, val)
    return out


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _safe_name(root: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", root)


class Timer:
    def __init__(self):
        self.stages = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            dt = time.perf_counter() - t0
            rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
            self.stages[name] = {"seconds": round(dt, 4), "max_rss_kb": int(rss)}
            logger.info("stage %s: %.2fs (max rss %d kB)", name, dt, rss)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.original = exc


@contextmanager
def _stage(timer: Timer, name: str):
    try:
        with timer.stage(name):
            yield
    except InputError as exc:
        raise InputError(f"stage '{name}': {exc}") from exc
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class DatasetResult:
    root: str
    methods: tuple
    grid: tuple
    selections: dict  # method -> {n: SelectionResult}
    curves: dict
    aupnc: dict
    manifest: dict
    yprime: np.ndarray = field(repr=False, default=None)


def write_selections_tsv(selections: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("instance\tclass\tscore\tpath_rank\tn\tmethod\n")
        for method, per_n in selections.items():
            for n, sel in per_n.items():
                for (iid, cid), s, r in zip(sel.annotations, sel.scores, sel.ranks):
                    fh.write(f"{iid}\t{cid}\t{s!r}\t{r}\t{n!r}\t{method}\n")


def read_selections_tsv(path) -> dict:
    """Inverse of :func:`write_selections_tsv`: method -> {n: SelectionResult}."""
    rows: dict = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        need = ["instance", "class", "score", "path_rank", "n"]
        if header[:5] != need:
            raise InputError(f"{path}: expected header {need} (+ method)")
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 5:
                raise InputError(f"{path}:{lineno}: too few columns")
            method = parts[5] if len(parts) > 5 else "selection"
            try:
                n = float(parts[4])
                rows.setdefault(method, {}).setdefault(n, []).append(
                    ((parts[0], parts[1]), float(parts[2]), int(parts[3])))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    out = {}
    for method, per_n in rows.items():
        out[method] = {}
        for n, items in sorted(per_n.items()):
            out[method][n] = SelectionResult(tuple(a for a, _, _ in items), tuple(s for _, s, _ in items),
                                             tuple(r for _, _, r in items), len(items), method=method)
    return out


def evaluate_selections(selections: dict, y_old: LabelMatrix, y_new: LabelMatrix, h: ClassHierarchy,
                        out: Path, dataset: str, header_extra=()) -> tuple[dict, dict]:
    """Write curve, AUP@NC and per-level reports; return (curves, aupnc)."""
    truth = diff_versions(y_old, y_new)
    header = list(REPORT_NOTES) + list(header_extra)
    curves, areas, levels = {}, {}, {}
    for method, per_n in selections.items():
        curve = precision_curve(per_n, truth)
        curves[method] = curve
        areas[method] = aupnc(curve) if len(curve.points) >= 2 else float("nan")
        write_curve_csv(curve, out / f"precision_{method}.csv", header)
        for n, sel in per_n.items():
            levels[(method, n)] = per_level_report(sel, truth, h)
    write_aupnc_csv({dataset: areas}, list(selections), out / "aupnc.csv", header)
    write_per_level_tsv(levels, out / "per_level.tsv", header)
    return curves, areas


def _load_features(cfg: RunConfig, h: ClassHierarchy, timer: Timer, cache: dict) -> tuple[FeatureMatrix, dict]:
    """Features from the CSV, or structural properties plus an embedding of size |classes|."""
    if cfg.features is not None:
        if "csv" not in cache:
            with _stage(timer, "features"):
                cache["csv"] = read_features_csv(cfg.features)
        return cache["csv"], {"features_source": "csv"}
    if "graph" not in cache:
        with _stage(timer, "graph"):
            cache["graph"] = build_graph(cfg.edges, cfg.cutoff)
        with _stage(timer, "structural_features"):
            cache["structural"] = structural_features(cache["graph"])
    g = cache["graph"]
    dim = len(h) if cfg.embed_dim is None else cfg.embed_dim
    x = cache["structural"]
    if dim > 0:
        with _stage(timer, "spectral_embedding"):
            x = x.hstack(spectral_embedding(g, dim, cap=True))
    notes = {"features_source": "edges", "graph_vertices": g.n_vertices, "graph_edges": g.n_edges,
             "embed_dim": dim, "feature_notes": list(FEATURE_NOTES)}
    return x, notes


def run_dataset(cfg: RunConfig, dag: RawHierarchyDag, root: str, out: Path,
                cache: dict | None = None) -> DatasetResult:
    """One sub-hierarchy: train, select with every method over the grid, evaluate, write reports."""
    out.mkdir(parents=True, exist_ok=True)
    timer = Timer()
    with _stage(timer, "hierarchy"):
        h = dag_to_tree(dag, root)
    x, notes = _load_features(cfg, h, timer, {} if cache is None else cache)
    with _stage(timer, "annotations"):
        y_old = load_annotations(cfg.annotations_old, h, x.instance_ids, dag.classes)
        y_new = load_annotations(cfg.annotations_new, h, x.instance_ids, dag.classes)
        validate_labels(y_old, h)
        if cfg.annotated_only:
            rows = np.flatnonzero(y_old.values.any(axis=1))
            x, y_old, y_new = x.take(rows), y_old.take(rows), y_new.take(rows)
        if len(x.instance_ids) < cfg.folds:
            raise InputError(f"{len(x.instance_ids)} instances cannot be split into {cfg.folds} folds")

    grid = cfg.grid()
    methods = cfg.methods()
    fcfg = cfg.forest_config()
    with _stage(timer, "forest_out_of_fold"):
        if cfg.resubstitution:
            yprime = predict_resubstitution(x, y_old, h, fcfg)
        else:
            yprime = predict_out_of_fold(x, y_old, h, fcfg)

    selections: dict = {}
    n_p = {n: compute_np(y_old, n) for n in grid}
    ref = cfg.reference_agg()
    aggs = [ref] + [Aggregator.parse(a) for a in cfg.agg if Aggregator.parse(a) is not ref]
    with _stage(timer, "reassign"):
        for agg in aggs:
            name = f"reassign-{agg.short}"
            if name not in methods and agg is not ref:
                continue
            ranked = rank_paths(y_old, yprime, h, agg)
            selections[name] = {n: ranked.select(n_p[n], name) for n in grid}
    ref_name = f"reassign-{ref.short}"
    target = {n: selections[ref_name][n].n_annotations for n in grid}

    if "no-aggr" in methods:
        with _stage(timer, "no_aggr"):
            selections["no-aggr"] = {n: select_no_aggr(y_old, yprime, h, target[n]) for n in grid}
    if "random" in methods:
        with _stage(timer, "random"):
            selections["random"] = {n: select_random(y_old, h, target[n], cfg.seed) for n in grid}
    if "noise-detect" in methods:
        rule = LevelThresholdRule(cfg.threshold_base, cfg.threshold_decay)
        with _stage(timer, "forest_full"):
            forest = load_forest(cfg.load_model) if cfg.load_model else fit(x, y_old, fcfg)
            if forest.bootstrap_masks.shape[1] != len(x.instance_ids) or forest.n_outputs != len(h):
                raise InputError("loaded model does not match this dataset")
            if cfg.save_model:
                save_forest(forest, cfg.save_model)
        with _stage(timer, "noise_detect"):
            counts = oob_vote_counts(forest, x, class_thresholds(rule, h))
            selections["noise-detect"] = {n: select_noise_detect(y_old, counts, h, rule, target[n], yprime)
                                          for n in grid}
    selections = {m: selections[m] for m in methods if m in selections}

    with _stage(timer, "write_selections"):
        write_selections_tsv(selections, out / "selections.tsv")
    with _stage(timer, "evaluate"):
        truth = diff_versions(y_old, y_new)
        curves, areas = evaluate_selections(selections, y_old, y_new, h, out, root)

    inputs = {k: getattr(cfg, k) for k in ("hierarchy", "features", "edges", "annotations_old", "annotations_new")}
    manifest = {
        "tool": "hmcgap",
        "version": __version__,
        "root": root,
        "seed": cfg.seed,
        "config": cfg.canonical(),
        "config_sha256": hashlib.sha256(json.dumps(cfg.canonical(), sort_keys=True).encode()).hexdigest(),
        "input_sha256": {k: _sha256(v) for k, v in inputs.items() if v is not None},
        "n_instances": len(x.instance_ids),
        "n_features": len(x.feature_names),
        "n_classes": len(h),
        "n_leaf_paths": len(h.leaf_paths),
        "levels": {str(k): v for k, v in h.levels_count().items()},
        "sum_y": y_old.total,
        "gained": len(truth.gained),
        "lost": len(truth.lost),
        "probabilities": "resubstitution" if cfg.resubstitution else f"{cfg.folds}-fold out-of-fold",
        "reference_method": ref_name,
        "notes": list(REPORT_NOTES),
        "grid": [
            {
                "n": n,
                "N_p": n_p[n],
                "N": {m: selections[m][n].n_annotations for m in selections},
                "shortfall": {m: selections[m][n].shortfall for m in selections},
                "overshoot": {m: selections[m][n].overshoot for m in selections},
            }
            for n in grid
        ],
        "aupnc": areas,
        **notes,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "run_config.txt", "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    with open(out / "timings.json", "w", encoding="utf-8") as fh:
        json.dump(timer.stages, fh, indent=2)
        fh.write("\n")
    return DatasetResult(root, tuple(selections), grid, selections, curves, areas, manifest, yprime)


def read_roots_file(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.startswith("#")]


def run_pipeline(cfg: RunConfig) -> list[DatasetResult]:
    """Run every requested sub-hierarchy; several roots get one sub-directory each plus a joint rank test."""
    cfg.validate()
    out = Path(cfg.out)
    dag = read_hierarchy_tsv(cfg.hierarchy)
    if cfg.all_roots:
        roots = read_roots_file(cfg.roots_file)
    elif cfg.root is not None:
        roots = [cfg.root]
    else:
        cands = dag.roots()
        if len(cands) != 1:
            raise InputError(f"hierarchy has {len(cands)} roots; pass --root or --all-roots")
        roots = cands
    if not roots:
        raise InputError("no roots to process")
    if len(roots) == 1 and not cfg.all_roots:
        return [run_dataset(cfg, dag, roots[0], out)]

    cache: dict = {}
    results = [run_dataset(cfg, dag, r, out / _safe_name(r), cache) for r in roots]
    methods = list(results[0].methods)
    write_aupnc_csv({r.root: r.aupnc for r in results}, methods, out / "aupnc.csv", list(REPORT_NOTES))
    if len(results) >= 2 and 2 <= len(methods) <= 10:
        scores = np.array([[r.aupnc[m] for m in methods] for r in results])
        table = friedman_nemenyi(scores, cfg.alpha, methods, [r.root for r in results])
        (out / "nemenyi.txt").write_text(table.summary(), encoding="utf-8")
    return results
