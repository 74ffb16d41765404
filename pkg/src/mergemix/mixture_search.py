"""Exhaustive mixture search driven by merged-checkpoint surrogates.

Every non-empty mixture is merged and scored; the best mixture under the
objective is reported. Ties resolve to the smaller selection first, then to
the lexicographically smallest bit string, so results are deterministic.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

from .errors import EvaluatorError, ExternalEvaluatorError, ValidationError
from .evaluator import EvalDataset, Score, evaluate_builtin
from .merge_engine import MixtureVector, ModelBank, gray_code_order, subset_merges
from .tensor_store import Checkpoint

OBJECTIVES = ("max_accuracy", "min_loss")

# eval_fn(merged checkpoint, target, mixture) -> Score; the mixture argument
# exists for bookkeeping and mock evaluators, the builtin adapter ignores it.
TargetRef = Union[EvalDataset, str]
EvalFn = Callable[[Checkpoint, TargetRef, MixtureVector], Score]


def builtin_eval_fn(ckpt: Checkpoint, target: TargetRef, alpha: MixtureVector) -> Score:
    """Adapter running the builtin toy-MLP scorer."""
    if not isinstance(target, EvalDataset):
        raise ValidationError("builtin evaluation needs an EvalDataset target")
    return evaluate_builtin(ckpt, target)


@dataclass
class SearchConfig:
    objective: str = "max_accuracy"
    candidates: Sequence[MixtureVector] | None = None
    max_exhaustive_n: int = 20
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.max_exhaustive_n < 1:
            raise ValidationError("max_exhaustive_n must be positive")
        if self.jobs < 1:
            raise ValidationError("jobs must be positive")


@dataclass
class ScoreRecord:
    alpha: MixtureVector
    merged_score: Score
    finetuned_score: Score | None = None
    elapsed_ms: int = 0


@dataclass
class SearchReport:
    records: list[ScoreRecord]
    best_alpha: MixtureVector
    objective: str
    target_name: str

    def csv_header(self) -> list[str]:
        return [
            "mixture_bits",
            "n_selected",
            "merged_accuracy",
            "merged_loss",
            "finetuned_accuracy",
            "elapsed_ms",
        ]

    def csv_rows(self) -> list[list]:
        rows = []
        for rec in self.records:
            fin = "" if rec.finetuned_score is None else repr(rec.finetuned_score.accuracy)
            rows.append(
                [
                    str(rec.alpha),
                    rec.alpha.n_selected,
                    repr(rec.merged_score.accuracy),
                    repr(rec.merged_score.mean_loss),
                    fin,
                    rec.elapsed_ms,
                ]
            )
        return rows

    def to_json_obj(self) -> dict:
        def score_obj(s: Score | None):
            if s is None:
                return None
            return {"accuracy": s.accuracy, "mean_loss": s.mean_loss, "num_samples": s.num_samples}

        return {
            "objective": self.objective,
            "target_name": self.target_name,
            "best_alpha": str(self.best_alpha),
            "records": [
                {
                    "mixture_bits": str(rec.alpha),
                    "n_selected": rec.alpha.n_selected,
                    "merged_score": score_obj(rec.merged_score),
                    "finetuned_score": score_obj(rec.finetuned_score),
                    "elapsed_ms": rec.elapsed_ms,
                }
                for rec in self.records
            ],
        }


def _objective_key(objective: str, score: Score, alpha: MixtureVector):
    """Sort key whose minimum is the search winner under the tie-break rule."""
    value = -score.accuracy if objective == "max_accuracy" else score.mean_loss
    return (value, alpha.n_selected, str(alpha))


def _score_chunk(
    bank: ModelBank, chunk: list[MixtureVector], eval_fn: EvalFn, target: TargetRef
) -> list[ScoreRecord]:
    records = []
    for alpha, merged in subset_merges(bank, chunk):
        start = time.perf_counter()
        try:
            score = eval_fn(merged, target, alpha)
        except ExternalEvaluatorError as exc:
            raise ExternalEvaluatorError(f"mixture {alpha}: {exc}") from exc
        except Exception as exc:
            raise EvaluatorError(f"evaluation failed for mixture {alpha}: {exc}") from exc
        if not isinstance(score, Score):
            raise EvaluatorError(f"evaluation failed for mixture {alpha}: evaluator returned {type(score).__name__}")
        elapsed = int(round((time.perf_counter() - start) * 1000))
        records.append(ScoreRecord(alpha=alpha, merged_score=score, elapsed_ms=elapsed))
    return records


def run_search(
    bank: ModelBank,
    eval_fn: EvalFn,
    target: TargetRef,
    config: SearchConfig | None = None,
) -> SearchReport:
    """Merge and score mixtures, returning all records and the best mixture.

    Without explicit candidates, all 2^N - 1 non-empty mixtures are
    enumerated in Gray-code order (requires N <= config.max_exhaustive_n).
    An evaluator failure aborts the search naming the offending mixture.
    """
    config = config or SearchConfig()
    n = len(bank)
    if config.candidates is not None:
        candidates = list(config.candidates)
        if not candidates:
            raise ValidationError("candidate list must not be empty")
    else:
        if n > config.max_exhaustive_n:
            raise ValidationError(
                f"exhaustive enumeration over N={n} exceeds max_exhaustive_n="
                f"{config.max_exhaustive_n}; pass explicit candidates"
            )
        candidates = list(gray_code_order(n))

    if config.jobs > 1 and len(candidates) > 1:
        jobs = min(config.jobs, len(candidates))
        step = (len(candidates) + jobs - 1) // jobs
        chunks = [candidates[i : i + step] for i in range(0, len(candidates), step)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda c: _score_chunk(bank, c, eval_fn, target), chunks))
        records = [rec for part in parts for rec in part]
    else:
        records = _score_chunk(bank, candidates, eval_fn, target)

    best = min(records, key=lambda r: _objective_key(config.objective, r.merged_score, r.alpha))
    if isinstance(target, EvalDataset):
        target_name = target.name
    else:
        target_name = str(target)
    return SearchReport(
        records=records, best_alpha=best.alpha, objective=config.objective, target_name=target_name
    )


def select_best(report: SearchReport) -> MixtureVector:
    """Recompute the winner from a report's records (consistency check)."""
    if not report.records:
        raise ValidationError("report holds no records")
    best = min(
        report.records,
        key=lambda r: _objective_key(report.objective, r.merged_score, r.alpha),
    )
    return best.alpha


def oracle_select(scores: Mapping) -> MixtureVector:
    """Best mixture by known (validation) accuracy, same tie-break as search.

    Keys may be MixtureVector or bit strings; values may be Score or floats.
    """
    if not scores:
        raise ValidationError("scores map must not be empty")
    items: list[tuple[MixtureVector, float]] = []
    for key, value in scores.items():
        alpha = key if isinstance(key, MixtureVector) else MixtureVector.from_string(str(key))
        if alpha.n_selected == 0:
            raise ValidationError("empty mixture in scores map")
        acc = value.accuracy if isinstance(value, Score) else float(value)
        if not 0.0 <= acc <= 1.0:
            raise ValidationError(f"accuracy out of range: {acc}")
        items.append((alpha, acc))
    lengths = {len(a) for a, _ in items}
    if len(lengths) != 1:
        raise ValidationError("scores map mixes mixture lengths")
    best = min(items, key=lambda it: (-it[1], it[0].n_selected, str(it[0])))
    return best[0]
