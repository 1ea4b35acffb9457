"""Metric tables: per-cell scoring and mean/std aggregation.

Evaluation produces four long-format CSVs (global, alert-head, partial
ranking area, uncertainty), one row per (model, labeled size, repetition[,
grid point]).  Reporting aggregates them into mean +- std tables, keeping
monetary cost both raw (head table) and in thousands (cost curve), and marks
aggregates computed from fewer repetitions than configured instead of
silently renormalising.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import HeadConfig
from . import metrics

__all__ = [
    "CellScores",
    "score_cell",
    "write_csv",
    "read_csv",
    "write_cell_reports",
    "aggregate_reports",
    "GLOBAL_CSV",
    "HEAD_CSV",
    "PARTIAL_CSV",
    "UNCERTAINTY_CSV",
    "AGGREGATE_CSV",
    "COST_CURVE_CSV",
]

GLOBAL_CSV = "global_metrics.csv"
HEAD_CSV = "head_metrics.csv"
PARTIAL_CSV = "partial_pr_auc.csv"
UNCERTAINTY_CSV = "uncertainty_metrics.csv"
AGGREGATE_CSV = "aggregate.csv"
COST_CURVE_CSV = "cost_curve.csv"


@dataclass
class CellScores:
    """All metric rows for one (model, labeled size, repetition) cell."""

    global_row: dict
    head_rows: list[dict]
    partial_rows: list[dict]
    uncertainty_row: dict


def score_cell(
    model: str,
    n_labeled: int,
    repetition: int,
    labels: np.ndarray,
    scores: np.ndarray,
    widths: np.ndarray,
    amounts: np.ndarray,
    heads: HeadConfig,
) -> CellScores:
    base = {"model": model, "n_labeled": n_labeled, "repetition": repetition}
    global_row = dict(
        base,
        macro_f1=metrics.macro_f1(labels, scores, heads.tau),
        pr_auc=metrics.pr_auc(labels, scores),
        cross_entropy=metrics.cross_entropy(labels, scores),
    )
    head_rows = [
        dict(
            base,
            k_percent=k,
            precision_at_k=metrics.precision_at_k(labels, scores, k),
            recall_at_k=metrics.recall_at_k(labels, scores, k),
            expected_cost_at_k=metrics.expected_cost_at_k(
                labels, scores, amounts, k, heads.alpha
            ),
        )
        for k in heads.k_percents
    ]
    partial_rows = [
        dict(base, recall_cap=r, partial_pr_auc=metrics.partial_pr_auc(labels, scores, r))
        for r in heads.recall_levels
    ]
    widths_cells = metrics.interval_width_by_outcome(labels, scores, widths, heads.tau)
    try:
        u_auroc = metrics.uncertainty_auroc(labels, scores, widths, heads.tau)
    except ValueError:
        u_auroc = math.nan
    uncertainty_row = dict(
        base,
        uncertainty_auroc=u_auroc,
        width_tp=widths_cells.tp,
        width_fp=widths_cells.fp,
        width_tn=widths_cells.tn,
        width_fn=widths_cells.fn,
    )
    return CellScores(global_row, head_rows, partial_rows, uncertainty_row)


def _fmt(value) -> str:
    if isinstance(value, float) or isinstance(value, np.floating):
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: list[str], rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_cell_reports(report_dir: str | Path, cells: list[CellScores]) -> list[str]:
    """Write the four long-format CSVs; returns the file names written."""
    report_dir = Path(report_dir)
    write_csv(
        report_dir / GLOBAL_CSV,
        ["model", "n_labeled", "repetition", "macro_f1", "pr_auc", "cross_entropy"],
        [c.global_row for c in cells],
    )
    write_csv(
        report_dir / HEAD_CSV,
        ["model", "n_labeled", "repetition", "k_percent",
         "precision_at_k", "recall_at_k", "expected_cost_at_k"],
        [row for c in cells for row in c.head_rows],
    )
    write_csv(
        report_dir / PARTIAL_CSV,
        ["model", "n_labeled", "repetition", "recall_cap", "partial_pr_auc"],
        [row for c in cells for row in c.partial_rows],
    )
    write_csv(
        report_dir / UNCERTAINTY_CSV,
        ["model", "n_labeled", "repetition", "uncertainty_auroc",
         "width_tp", "width_fp", "width_tn", "width_fn"],
        [c.uncertainty_row for c in cells],
    )
    return [GLOBAL_CSV, HEAD_CSV, PARTIAL_CSV, UNCERTAINTY_CSV]


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def aggregate_reports(report_dir: str | Path, expected_reps: int) -> list[str]:
    """Aggregate the per-cell CSVs into mean/std tables.

    `aggregate.csv` holds one row per (model, n_labeled, metric); metrics
    from gridded tables carry the grid point in their name.  Expected cost
    additionally lands in `cost_curve.csv` in thousands of currency units.
    """
    report_dir = Path(report_dir)
    groups: dict[tuple, list[float]] = {}

    def add(model, n_labeled, metric, value):
        groups.setdefault((model, int(n_labeled), metric), []).append(float(value))

    for row in read_csv(report_dir / GLOBAL_CSV):
        for m in ("macro_f1", "pr_auc", "cross_entropy"):
            add(row["model"], row["n_labeled"], m, row[m])
    for row in read_csv(report_dir / HEAD_CSV):
        k = row["k_percent"]
        for m in ("precision_at_k", "recall_at_k", "expected_cost_at_k"):
            add(row["model"], row["n_labeled"], f"{m}[{k}]", row[m])
    for row in read_csv(report_dir / PARTIAL_CSV):
        add(row["model"], row["n_labeled"],
            f"partial_pr_auc[{row['recall_cap']}]", row["partial_pr_auc"])
    for row in read_csv(report_dir / UNCERTAINTY_CSV):
        for m in ("uncertainty_auroc", "width_tp", "width_fp", "width_tn", "width_fn"):
            add(row["model"], row["n_labeled"], m, row[m])

    agg_rows = []
    cost_rows = []
    for (model, n_labeled, metric), values in sorted(groups.items()):
        finite = [v for v in values if not math.isnan(v)]
        mean, std = _mean_std(finite) if finite else (math.nan, 0.0)
        agg_rows.append(
            {
                "model": model,
                "n_labeled": n_labeled,
                "metric": metric,
                "mean": mean,
                "std": std,
                "n_reps": len(values),
                "complete": int(len(values) == expected_reps),
            }
        )
        if metric.startswith("expected_cost_at_k["):
            k = metric[len("expected_cost_at_k[") : -1]
            cost_rows.append(
                {
                    "model": model,
                    "n_labeled": n_labeled,
                    "k_percent": k,
                    "mean_cost_thousands": mean / 1000.0,
                    "std_cost_thousands": std / 1000.0,
                    "n_reps": len(values),
                }
            )
    write_csv(
        report_dir / AGGREGATE_CSV,
        ["model", "n_labeled", "metric", "mean", "std", "n_reps", "complete"],
        agg_rows,
    )
    write_csv(
        report_dir / COST_CURVE_CSV,
        ["model", "n_labeled", "k_percent", "mean_cost_thousands",
         "std_cost_thousands", "n_reps"],
        cost_rows,
    )
    return [AGGREGATE_CSV, COST_CURVE_CSV]
