"""Precision@N curves, their area over the n-grid, per-level tallies and Friedman-Nemenyi ranks."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import InputError
from .hierarchy import ClassHierarchy

logger = logging.getLogger(__name__)

AREA_RULE = "trapezoidal rule over n"

# Studentized range statistic divided by sqrt(2), infinite degrees of freedom
# (Demsar, JMLR 7, 2006, Table 5), indexed by number of methods k = 2..10.
NEMENYI_Q = {
    0.05: {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164},
    0.10: {2: 1.645, 3: 2.052, 4: 2.291, 5: 2.459, 6: 2.589, 7: 2.693, 8: 2.780, 9: 2.855, 10: 2.920},
}


@dataclass(frozen=True)
class PrecisionPoint:
    n: float
    N: int
    tp: int
    fp: int
    precision: float


@dataclass(frozen=True)
class PrecisionCurve:
    points: tuple

    @property
    def n(self) -> np.ndarray:
        return np.array([p.n for p in self.points])

    @property
    def precision(self) -> np.ndarray:
        return np.array([p.precision for p in self.points])


def _pairs(selection) -> set:
    return set(getattr(selection, "annotations", selection))


def precision_at_n(selection, truth) -> tuple[int, int, float]:
    """``(tp, fp, precision)`` of a selection against the gained (0 -> 1) pairs."""
    sel = _pairs(selection)
    gained = getattr(truth, "gained", truth)
    tp = len(sel & gained)
    fp = len(sel) - tp
    if not sel:
        logger.warning("empty selection; precision defined as 0")
        return 0, 0, 0.0
    return tp, fp, tp / (tp + fp)


def precision_curve(selections: Mapping[float, object], truth) -> PrecisionCurve:
    points = []
    for n in sorted(selections):
        tp, fp, prec = precision_at_n(selections[n], truth)
        points.append(PrecisionPoint(float(n), tp + fp, tp, fp, prec))
    return PrecisionCurve(tuple(points))


def aupnc(curve, precision: Sequence[float] | None = None) -> float:
    """Trapezoidal area of precision over the n axis.

    Accepts a :class:`PrecisionCurve` or the two sequences ``(n, precision)``.
    """
    if precision is None:
        n, p = curve.n, curve.precision
    else:
        n, p = np.asarray(curve, dtype=np.float64), np.asarray(precision, dtype=np.float64)
    if len(n) < 2 or len(n) != len(p):
        raise InputError("area under the precision curve needs a grid of at least two n values")
    if np.any(np.diff(n) <= 0):
        raise InputError("n values must be strictly increasing")
    return float(np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(n)))


def per_level_report(selection, truth, h: ClassHierarchy) -> list[dict]:
    """Rows ``level, gained, tp, selected, precision`` per level plus a ``total`` row."""
    sel = _pairs(selection)
    gained = getattr(truth, "gained", truth)
    rows = []
    for lvl in range(1, h.depth + 1):
        g = sum(1 for _, c in gained if h.level.get(c) == lvl)
        s = [pair for pair in sel if h.level.get(pair[1]) == lvl]
        tp = sum(1 for pair in s if pair in gained)
        rows.append({"level": lvl, "gained": g, "tp": tp, "selected": len(s),
                     "precision": tp / len(s) if s else 0.0})
    tot = {k: sum(r[k] for r in rows) for k in ("gained", "tp", "selected")}
    tot["precision"] = tot["tp"] / tot["selected"] if tot["selected"] else 0.0
    rows.append({"level": "total", **tot})
    return rows


@dataclass(frozen=True, eq=False)
class RankTable:
    methods: tuple
    datasets: tuple
    scores: np.ndarray
    ranks: np.ndarray
    avg_ranks: np.ndarray
    chi2: float
    chi2_pvalue: float
    f_stat: float
    f_pvalue: float
    alpha: float
    q_alpha: float
    critical_distance: float
    groups: tuple

    def summary(self) -> str:
        lines = [
            f"Friedman-Nemenyi over {len(self.datasets)} datasets, {len(self.methods)} methods (alpha={self.alpha})",
            f"Friedman chi2 = {self.chi2:.6g} (p = {self.chi2_pvalue:.6g})",
            f"Iman-Davenport F = {self.f_stat:.6g} (p = {self.f_pvalue:.6g})",
            f"q_alpha = {self.q_alpha}, critical distance = {self.critical_distance:.6g}",
            "average ranks (1 = best):",
        ]
        for k in np.argsort(self.avg_ranks, kind="stable"):
            lines.append(f"  {self.methods[k]}\t{self.avg_ranks[k]:.6g}")
        lines.append("groups not significantly different:")
        for g in self.groups:
            lines.append("  " + ", ".join(g))
        return "\n".join(lines) + "\n"


def friedman_nemenyi(scores, alpha: float = 0.05, methods: Sequence[str] | None = None,
                     datasets: Sequence[str] | None = None) -> RankTable:
    """Rank methods per dataset (1 = highest score, ties averaged) and test for differences.

    ``scores`` is a datasets x methods matrix.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 2 or s.shape[1] < 2:
        raise InputError("need a datasets x methods matrix with at least 2 of each")
    if not np.all(np.isfinite(s)):
        raise InputError("score matrix has missing or non-finite entries")
    d, k = s.shape
    if alpha not in NEMENYI_Q:
        raise InputError(f"alpha must be one of {sorted(NEMENYI_Q)}")
    if k not in NEMENYI_Q[alpha]:
        raise InputError(f"Nemenyi table covers 2..10 methods, got {k}")
    methods = tuple(methods) if methods is not None else tuple(f"m{j}" for j in range(k))
    datasets = tuple(datasets) if datasets is not None else tuple(f"d{i}" for i in range(d))
    ranks = np.vstack([stats.rankdata(-row, method="average") for row in s])
    avg = ranks.mean(axis=0)
    chi2 = 12.0 * d / (k * (k + 1)) * (np.sum(avg ** 2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)
    chi2_p = float(stats.chi2.sf(chi2, k - 1))
    denom = d * (k - 1) - chi2
    f_stat = (d - 1) * chi2 / denom if denom > 0 else math.inf
    f_p = float(stats.f.sf(f_stat, k - 1, (k - 1) * (d - 1))) if math.isfinite(f_stat) else 0.0
    q = NEMENYI_Q[alpha][k]
    cd = q * math.sqrt(k * (k + 1) / (6.0 * d))
    return RankTable(methods, datasets, s, ranks, avg, float(chi2), chi2_p, float(f_stat), f_p,
                     alpha, q, cd, nemenyi_groups(avg, cd, methods))


def nemenyi_groups(avg_ranks, cd: float, methods: Sequence[str]) -> tuple:
    """Maximal runs of rank-sorted methods whose rank spread is at most ``cd``."""
    order = np.argsort(avg_ranks, kind="stable")
    r = np.asarray(avg_ranks)[order]
    groups = []
    last_end = -1
    for i in range(len(r)):
        j = i
        while j + 1 < len(r) and r[j + 1] - r[i] <= cd + 1e-12:
            j += 1
        if j > last_end:
            groups.append(tuple(methods[order[t]] for t in range(i, j + 1)))
            last_end = j
    return tuple(groups)


def _header(fh, lines: Iterable[str]) -> None:
    for line in lines:
        fh.write(f"# {line}\n")


def write_curve_csv(curve: PrecisionCurve, path: str | Path, header: Iterable[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _header(fh, header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "N", "tp", "fp", "precision"])
        for p in curve.points:
            w.writerow([repr(p.n), p.N, p.tp, p.fp, repr(p.precision)])


def read_curve_csv(path: str | Path) -> PrecisionCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return PrecisionCurve(tuple(PrecisionPoint(float(r["n"]), int(r["N"]), int(r["tp"]), int(r["fp"]),
                                               float(r["precision"])) for r in rows))


def write_aupnc_csv(table: Mapping[str, Mapping[str, float]], methods: Sequence[str], path: str | Path,
                    header: Iterable[str] = ()) -> None:
    """Datasets as rows, methods as columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _header(fh, header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", *methods])
        for ds, row in table.items():
            w.writerow([ds, *(repr(float(row[m])) for m in methods)])


def read_aupnc_csv(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows or rows[0][0] != "dataset":
        raise InputError(f"{path}: not an AUP@NC summary file")
    methods = rows[0][1:]
    datasets = [r[0] for r in rows[1:]]
    try:
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return datasets, methods, values.reshape(len(datasets), len(methods))


def write_per_level_tsv(rows_by_key: Mapping[tuple, list[dict]], path: str | Path,
                        header: Iterable[str] = ()) -> None:
    """``rows_by_key`` maps ``(method, n)`` to :func:`per_level_report` output."""
    with open(path, "w", encoding="utf-8") as fh:
        _header(fh, header)
        fh.write("method\tn\tlevel\tgained\ttp\tselected\tprecision\n")
        for (method, n), rows in rows_by_key.items():
            for r in rows:
                fh.write(f"{method}\t{n!r}\t{r['level']}\t{r['gained']}\t{r['tp']}\t{r['selected']}\t"
                         f"{r['precision']!r}\n")
