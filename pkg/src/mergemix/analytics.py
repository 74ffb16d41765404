"""Correlation analytics and report serialization.

Correlations are computed per task and averaged unweighted across tasks.
Single-dataset mixtures are excluded by default: their surrogate and
fine-tuned models coincide, so the (x, y) pair sits on the diagonal by
construction and would inflate the correlation.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .evaluator import logit_improvement
from .mixture_search import ScoreRecord

log = logging.getLogger("mergemix.analytics")

REPORT_FORMATS = ("csv", "json")

MIN_PAIRS_PER_TASK = 3


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient.

    Requires equal lengths >= 2 and non-constant series.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValidationError("series must be 1-D and of equal length")
    if x.size < 2:
        raise ValidationError("need at least 2 pairs")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("non-finite value in series")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise ValidationError("degenerate: constant series")
    dx = x - x.mean()
    dy = y - y.mean()
    r = float((dx * dy).sum() / math.sqrt((dx * dx).sum() * (dy * dy).sum()))
    return max(-1.0, min(1.0, r))


@dataclass
class CorrelationInput:
    """One task's (x, y, n_selected) triples, one per scored mixture."""

    task_name: str
    pairs: list[tuple[float, float, int]]

    def __post_init__(self) -> None:
        if not self.task_name:
            raise ValidationError("task_name must be non-empty")
        for triple in self.pairs:
            if len(triple) != 3:
                raise ValidationError("each pair must be (x, y, n_selected)")
            if int(triple[2]) < 1:
                raise ValidationError("n_selected must be >= 1")


@dataclass
class CorrelationReport:
    per_task: dict[str, float]
    average_r: float
    excluded_count: int
    skipped_tasks: list[str] = field(default_factory=list)
    n_pairs: dict[str, int] = field(default_factory=dict)

    def csv_header(self) -> list[str]:
        return ["task", "n_pairs", "r"]

    def csv_rows(self) -> list[list]:
        return [
            [task, self.n_pairs.get(task, ""), repr(r)]
            for task, r in sorted(self.per_task.items())
        ]

    def to_json_obj(self) -> dict:
        # average_r is NaN only for the empty degraded report; emit null
        # instead so the JSON stays strictly parseable.
        avg = self.average_r if math.isfinite(self.average_r) else None
        return {
            "per_task": dict(sorted(self.per_task.items())),
            "average_r": avg,
            "excluded_count": self.excluded_count,
            "skipped_tasks": sorted(self.skipped_tasks),
            "n_pairs": dict(sorted(self.n_pairs.items())),
        }


def correlate_tasks(
    inputs: Sequence[CorrelationInput], exclude_singletons: bool = True
) -> CorrelationReport:
    """Per-task Pearson r, then the unweighted average across tasks.

    With exclusion on, pairs whose mixture selects exactly one dataset are
    dropped first. Tasks left with fewer than MIN_PAIRS_PER_TASK pairs or a
    constant series are skipped with a warning; if every task is skipped,
    that is an error.
    """
    if not inputs:
        raise ValidationError("no correlation inputs")
    per_task: dict[str, float] = {}
    n_pairs: dict[str, int] = {}
    skipped: list[str] = []
    excluded = 0
    for item in inputs:
        if item.task_name in per_task or item.task_name in skipped:
            raise ValidationError(f"duplicate task {item.task_name!r}")
        pairs = item.pairs
        if exclude_singletons:
            kept = [p for p in pairs if int(p[2]) != 1]
            excluded += len(pairs) - len(kept)
            pairs = kept
        if len(pairs) < MIN_PAIRS_PER_TASK:
            log.warning("task %s skipped: %d pairs after exclusion", item.task_name, len(pairs))
            skipped.append(item.task_name)
            continue
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        try:
            r = pearson(xs, ys)
        except ValidationError as exc:
            log.warning("task %s skipped: %s", item.task_name, exc)
            skipped.append(item.task_name)
            continue
        per_task[item.task_name] = r
        n_pairs[item.task_name] = len(pairs)
    if not per_task:
        raise ValidationError("no task has enough usable pairs for a correlation")
    average = math.fsum(per_task.values()) / len(per_task)
    return CorrelationReport(
        per_task=per_task,
        average_r=average,
        excluded_count=excluded,
        skipped_tasks=skipped,
        n_pairs=n_pairs,
    )


def plot_coordinates(
    records: Sequence[ScoreRecord],
    base_acc: float,
    surrogate: str = "merged",
    similarity_scores: Mapping[str, float] | None = None,
) -> list[tuple[float, float, int]]:
    """Scatter coordinates for surrogate-vs-fine-tuned plots.

    y is always the fine-tuned logit improvement over the base accuracy.
    x is the merged-model logit improvement ("merged") or the raw metric
    score ("similarity", which requires similarity_scores keyed by bit
    string). Single-dataset mixtures land on x == y in merged mode.
    """
    if surrogate not in ("merged", "similarity"):
        raise ValidationError(f"surrogate must be 'merged' or 'similarity', got {surrogate!r}")
    if surrogate == "similarity" and similarity_scores is None:
        raise ValidationError("similarity surrogate needs similarity_scores")
    out: list[tuple[float, float, int]] = []
    for rec in records:
        if rec.finetuned_score is None:
            raise ValidationError(f"record {rec.alpha} is missing a fine-tuned score")
        y = logit_improvement(rec.finetuned_score.accuracy, base_acc)
        if surrogate == "merged":
            x = logit_improvement(rec.merged_score.accuracy, base_acc)
        else:
            bits = str(rec.alpha)
            if bits not in similarity_scores:
                raise ValidationError(f"similarity_scores missing mixture {bits}")
            x = float(similarity_scores[bits])
        out.append((x, y, rec.alpha.n_selected))
    return out


def write_plot_csv(path: str | Path, per_task: Mapping[str, Sequence[tuple]]) -> None:
    """Write plot data rows: task, mixture_bits, n_selected, x, y, is_singleton.

    per_task maps a task name to rows of (mixture_bits, x, y, n_selected).
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["task", "mixture_bits", "n_selected", "x", "y", "is_singleton"])
        for task in sorted(per_task):
            for bits, x, y, n_selected in per_task[task]:
                writer.writerow(
                    [task, bits, n_selected, repr(float(x)), repr(float(y)), int(n_selected == 1)]
                )


def emit_report(report, format: str, path: str | Path) -> None:
    """Serialize a report deterministically as CSV or JSON.

    Any report object exposing csv_header()/csv_rows() and to_json_obj()
    (SearchReport, CorrelationReport, BenchReport) is accepted.
    """
    if format not in REPORT_FORMATS:
        raise ValidationError(f"format must be one of {REPORT_FORMATS}, got {format!r}")
    if format == "json":
        if not hasattr(report, "to_json_obj"):
            raise ValidationError(f"cannot serialize {type(report).__name__} as a report")
        text = json.dumps(report.to_json_obj(), sort_keys=True, indent=2)
        Path(path).write_text(text + "\n")
        return
    if not hasattr(report, "csv_rows"):
        raise ValidationError(f"cannot serialize {type(report).__name__} as a report")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(report.csv_header())
        writer.writerows(report.csv_rows())
