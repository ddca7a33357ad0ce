"""Detection metrics: AUROC (rank statistic, ties half-credited) and the
false-positive rate at a fixed ID true-positive rate, plus the multi-set
benchmark report used by the CLI.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DomainError
from .model import OodClassifier
from .scores import IdStats, ScoreParams, compute_scores


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their average rank."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.shape[0])
    sorted_x = x[order]
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(id_scores: np.ndarray, ood_scores: np.ndarray) -> float:
    """P(id > ood) + 0.5 P(id == ood) via sort-and-rank; ID is positive."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    n, m = id_scores.shape[0], ood_scores.shape[0]
    if n == 0 or m == 0:
        raise DomainError("auroc needs non-empty ID and OOD score sets")
    ranks = _average_ranks(np.concatenate([id_scores, ood_scores]))
    u = ranks[:n].sum() - n * (n + 1) / 2.0
    return float(u / (n * m))


def fpr_at_tpr(id_scores: np.ndarray, ood_scores: np.ndarray, tpr: float = 0.95) -> float:
    """FPR at the largest threshold that keeps at least ``tpr`` of ID scores.

    The threshold is the ceil(tpr*n)-th largest ID score (no interpolation
    between sample points); inputs at or above it count as ID.
    """
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    n, m = id_scores.shape[0], ood_scores.shape[0]
    if n == 0 or m == 0:
        raise DomainError("fpr_at_tpr needs non-empty ID and OOD score sets")
    if not 0.0 < tpr <= 1.0:
        raise DomainError(f"tpr must lie in (0, 1], got {tpr}")
    keep = math.ceil(tpr * n)
    threshold = np.sort(id_scores)[n - keep]
    return float(np.mean(ood_scores >= threshold))


@dataclass
class ScoreReport:
    id_scores: np.ndarray
    ood_scores: np.ndarray
    auroc: float
    fpr95: float
    score_name: str
    dataset_names: tuple[str, str]


def make_report(id_scores: np.ndarray, ood_scores: np.ndarray, score_name: str,
                id_name: str, ood_name: str, tpr: float = 0.95) -> ScoreReport:
    return ScoreReport(np.asarray(id_scores), np.asarray(ood_scores),
                       auroc(id_scores, ood_scores),
                       fpr_at_tpr(id_scores, ood_scores, tpr),
                       score_name, (id_name, ood_name))


def evaluate_benchmark(model: OodClassifier, stats: IdStats | None, id_test: Dataset,
                       ood_sets: list[tuple[str, Dataset]], score_name: str,
                       params: ScoreParams | None = None,
                       id_name: str = "id_test") -> list[ScoreReport]:
    """One report per OOD set, scored against the shared ID test set."""
    if not ood_sets:
        raise DomainError("evaluate_benchmark needs at least one OOD set")
    id_scores = compute_scores(model, id_test.inputs(), score_name, stats, params)
    reports = []
    for name, ds in ood_sets:
        ood_scores = compute_scores(model, ds.inputs(), score_name, stats, params)
        reports.append(make_report(id_scores, ood_scores, score_name, id_name, name))
    return reports


def mean_metrics(reports: list[ScoreReport]) -> tuple[float, float]:
    """Unweighted (mean auroc, mean fpr95) across OOD sets."""
    return (float(np.mean([r.auroc for r in reports])),
            float(np.mean([r.fpr95 for r in reports])))


def write_report_csv(reports: list[ScoreReport], path: str) -> None:
    mean_a, mean_f = mean_metrics(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ood_set", "score", "n_id", "n_ood", "auroc", "fpr95"])
        for r in reports:
            w.writerow([r.dataset_names[1], r.score_name, len(r.id_scores),
                        len(r.ood_scores), repr(r.auroc), repr(r.fpr95)])
        w.writerow(["mean", reports[0].score_name, "", "", repr(mean_a), repr(mean_f)])


def report_table(reports: list[ScoreReport]) -> str:
    mean_a, mean_f = mean_metrics(reports)
    rows = [("ood set", "auroc", "fpr95")]
    rows += [(r.dataset_names[1], f"{r.auroc:.4f}", f"{r.fpr95:.4f}") for r in reports]
    rows.append(("mean", f"{mean_a:.4f}", f"{mean_f:.4f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
