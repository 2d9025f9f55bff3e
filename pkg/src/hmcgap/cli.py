"""Command line entry point: ``hmcgap {gcn-features,synth,run,evaluate,rank}``.

Exit status is 0 on success, 2 for invalid input or configuration and 3 for
failures while running a stage.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .errors import InputError

logger = logging.getLogger("hmcgap")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _csv_list(value: str) -> tuple:
    return tuple(x.strip() for x in value.split(",") if x.strip())


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--hierarchy", help="child<TAB>parent edge list")
    p.add_argument("--root", help="root class of the sub-hierarchy")
    p.add_argument("--roots-file", help="one root per line, used with --all-roots")
    p.add_argument("--all-roots", action="store_true", default=None)
    p.add_argument("--features", help="features CSV (first column id)")
    p.add_argument("--edges", help="co-expression edge list, used when --features is absent")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--embed-dim", type=int, help="embedding size (default: number of classes)")
    p.add_argument("--annotations-old", help="instance<TAB>class pairs used for training")
    p.add_argument("--annotations-new", help="newer instance<TAB>class pairs used for evaluation")
    p.add_argument("--annotated-only", action="store_true", default=None,
                   help="restrict instances to those with an old annotation in the sub-hierarchy")
    p.add_argument("--trees", type=int)
    p.add_argument("--min-samples-split", type=int)
    p.add_argument("--max-features", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--agg", type=_csv_list, help="comma list of avg,sum,min; the first sets the matched N")
    p.add_argument("--method", type=_csv_list,
                   help="comma list of reassign-avg,reassign-sum,reassign-min,no-aggr,random,noise-detect")
    p.add_argument("--n-start", type=float)
    p.add_argument("--n-stop", type=float)
    p.add_argument("--n-step", type=float)
    p.add_argument("--threshold-base", type=float)
    p.add_argument("--threshold-decay", type=float)
    p.add_argument("--resubstitution", action="store_true", default=None,
                   help="predict training rows with a forest fit on all rows (sensitivity check)")
    p.add_argument("--save-model")
    p.add_argument("--load-model")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmcgap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gcn-features", help="structural properties and spectral embedding of a co-expression graph")
    p.add_argument("--edges", required=True)
    p.add_argument("--cutoff", type=float, default=100.0)
    p.add_argument("--embed-dim", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic two-version dataset")
    p.add_argument("--preset", default="acceptance")
    p.add_argument("--instances", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--n-features", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--hide-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="train, select with every method over the n-grid and evaluate")
    _add_run_flags(p)

    p = sub.add_parser("evaluate", help="score a selections TSV against two annotation versions")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--root")
    p.add_argument("--annotations-old", required=True)
    p.add_argument("--annotations-new", required=True)
    p.add_argument("--selections", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rank", help="Friedman-Nemenyi test over the AUP@NC of several run directories")
    p.add_argument("runs", nargs="+", help="run directories (or aupnc.csv files)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", help="write the summary here instead of stdout")
    return parser


def _run_config(args):
    from .pipeline import RunConfig, read_config_text

    values = read_config_text(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return replace(RunConfig(), **values)


def cmd_gcn_features(args) -> None:
    from .dataset import write_features_csv
    from .gcn import FEATURE_NOTES, build_graph, gcn_features

    g = build_graph(args.edges, args.cutoff)
    logger.info("graph: %d vertices, %d edges at cutoff %g", g.n_vertices, g.n_edges, args.cutoff)
    fm = gcn_features(g, args.embed_dim)
    notes = [f"edges={args.edges} cutoff={args.cutoff!r} vertices={g.n_vertices} kept_edges={g.n_edges}",
             *FEATURE_NOTES]
    write_features_csv(fm, args.out, comments=notes)


def cmd_synth(args) -> None:
    from .synthetic import PRESETS, generate_synthetic

    if args.preset not in PRESETS:
        raise InputError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
    overrides = {
        "n_instances": args.instances, "n_classes": args.classes, "n_clusters": args.clusters,
        "n_features": args.n_features, "noise": args.noise, "hide_fraction": args.hide_fraction,
        "seed": args.seed,
    }
    spec = replace(PRESETS[args.preset], **{k: v for k, v in overrides.items() if v is not None})
    ds = generate_synthetic(spec)
    paths = ds.write(args.out)
    print("\n".join(f"{k}\t{v}" for k, v in paths.items()))


def cmd_run(args) -> None:
    from .pipeline import run_pipeline

    cfg = _run_config(args)
    for res in run_pipeline(cfg):
        line = "  ".join(f"{m}={res.aupnc[m]:.6f}" for m in res.methods)
        print(f"{res.root}\tAUP@NC  {line}")


def cmd_evaluate(args) -> None:
    from .dataset import load_annotations, read_annotation_pairs
    from .hierarchy import dag_to_tree, read_hierarchy_tsv
    from .pipeline import evaluate_selections, read_selections_tsv

    dag = read_hierarchy_tsv(args.hierarchy)
    root = args.root
    if root is None:
        roots = dag.roots()
        if len(roots) != 1:
            raise InputError("hierarchy has several roots; pass --root")
        root = roots[0]
    h = dag_to_tree(dag, root)
    selections = read_selections_tsv(args.selections)
    ids = set()
    for path in (args.annotations_old, args.annotations_new):
        ids.update(iid for _, iid, _ in read_annotation_pairs(path))
    for per_n in selections.values():
        for sel in per_n.values():
            ids.update(iid for iid, _ in sel.annotations)
    ids = sorted(ids)
    y_old = load_annotations(args.annotations_old, h, ids, dag.classes)
    y_new = load_annotations(args.annotations_new, h, ids, dag.classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, areas = evaluate_selections(selections, y_old, y_new, h, out, root)
    for m, a in areas.items():
        print(f"{m}\t{a!r}")


def cmd_rank(args) -> None:
    from .evaluation import friedman_nemenyi, read_aupnc_csv

    datasets, rows, methods = [], [], None
    for run in args.runs:
        p = Path(run)
        p = p / "aupnc.csv" if p.is_dir() else p
        if not p.is_file():
            raise InputError(f"no aupnc.csv in {run}")
        ds, ms, vals = read_aupnc_csv(p)
        if methods is None:
            methods = ms
        elif set(ms) != set(methods):
            raise InputError(f"{p}: methods {ms} differ from {methods}")
        col = [ms.index(m) for m in methods]
        for name, row in zip(ds, vals):
            datasets.append(name if name not in datasets else f"{name}@{run}")
            rows.append(row[col])
    table = friedman_nemenyi(np.array(rows), args.alpha, methods, datasets)
    text = table.summary()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")


COMMANDS = {
    "gcn-features": cmd_gcn_features,
    "synth": cmd_synth,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "rank": cmd_rank,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except InputError as exc:
        print(f"hmcgap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - any stage failure maps to the runtime exit code
        print(f"hmcgap {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
