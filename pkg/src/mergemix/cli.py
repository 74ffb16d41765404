"""Command-line entry point exposing every pipeline stage.

Subcommands: merge, search, similarity, correlate, bench. stdout carries one
machine-readable JSON line per command; diagnostics go to stderr. Exit codes:
0 success, 1 validation error, 2 I/O error, 3 external-evaluator failure.
Set MERGEMIX_LOG to error/warn/info/debug to control stderr logging.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analytics import (
    CorrelationInput,
    correlate_tasks,
    emit_report,
    plot_coordinates,
    write_plot_csv,
)
from .baselines import SimilarityMetric, all_datasets_vector, similarity_table, select_from_table
from .errors import ExternalEvaluatorError, MergeMixError, ValidationError
from .evaluator import evaluate_external, read_eval_dataset
from .merge_engine import ModelBank, merge_uniform, merge_weighted
from .mixture_search import SearchConfig, builtin_eval_fn, run_search
from .tensor_store import read_checkpoint, read_embeddings, write_checkpoint
from .toy_bench import BenchConfig, TrainConfig, run_benchmark

log = logging.getLogger("mergemix.cli")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_EVALUATOR = 3

_BANK_FILE_RE = re.compile(r"^(\d+)_(.+)\.mtm$")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    level_name = os.environ.get("MERGEMIX_LOG", "warn").lower()
    level = _LOG_LEVELS.get(level_name, logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("mergemix")
    root.handlers[:] = [handler]
    root.setLevel(level)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Reproducibility record written next to each command's outputs."""

    command: str
    config: dict
    input_digests: dict[str, str]
    tool_version: str
    started_at: str
    finished_at: str
    outputs: list[str] = field(default_factory=list)

    def write_atomic(self, path: Path) -> None:
        """Write via a temp file in the same directory, then rename."""
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n"
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _manifest(command: str, args_dict: dict, inputs: list[Path], started: str, outputs: list[Path]) -> RunManifest:
    # args_dict is vars(namespace); "func" is the dispatch callable, not config
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in args_dict.items() if k != "func"}
    return RunManifest(
        command=command,
        config=config,
        input_digests={str(p): _sha256(p) for p in inputs if p.is_file()},
        tool_version=__version__,
        started_at=started,
        finished_at=_now(),
        outputs=[str(p) for p in outputs],
    )


def _print_json(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_bank_dir(path: Path) -> ModelBank:
    """Load bank/<index>_<name>.mtm checkpoints; the index defines bit order."""
    if not path.is_dir():
        raise FileNotFoundError(f"bank directory not found: {path}")
    entries = []
    for child in sorted(path.iterdir()):
        match = _BANK_FILE_RE.match(child.name)
        if match:
            entries.append((int(match.group(1)), match.group(2), child))
    if not entries:
        raise ValidationError(f"no <index>_<name>.mtm files in {path}")
    entries.sort(key=lambda e: e[0])
    indices = [e[0] for e in entries]
    if len(set(indices)) != len(indices):
        raise ValidationError(f"duplicate bank indices in {path}")
    models = [read_checkpoint(p) for _, _, p in entries]
    names = [name for _, name, _ in entries]
    return ModelBank(models=models, names=names)


def _json_path_for(csv_path: Path) -> Path:
    return csv_path.with_suffix(".json")


# ---------------------------------------------------------------------------
# subcommands


def cmd_merge(args: argparse.Namespace) -> int:
    models = [read_checkpoint(Path(p)) for p in args.models]
    bank = ModelBank(models=models)
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
        merged = merge_weighted(bank, weights)
    else:
        merged = merge_uniform(bank, all_datasets_vector(len(bank)))
    out = Path(args.out)
    write_checkpoint(merged, out)
    _print_json({"tensors": len(merged.tensors), "parameters": merged.n_parameters, "out": str(out)})
    return EXIT_OK


def cmd_search(args: argparse.Namespace) -> int:
    started = _now()
    bank_dir = Path(args.bank)
    bank = _load_bank_dir(bank_dir)
    config = SearchConfig(
        objective="max_accuracy" if args.objective == "accuracy" else "min_loss",
        jobs=args.jobs,
    )

    if args.evaluator == "builtin":
        target = read_eval_dataset(Path(args.target))
        eval_fn = builtin_eval_fn
        target_ref = target
    else:
        template = args.evaluator
        workdir = Path(tempfile.mkdtemp(prefix="mergemix-search-"))

        def eval_fn(ckpt, target, alpha):
            ckpt_path = workdir / f"merged_{alpha}.mtm"
            write_checkpoint(ckpt, ckpt_path)
            try:
                return evaluate_external(ckpt_path, target, template)
            finally:
                ckpt_path.unlink(missing_ok=True)

        target_ref = args.target

    report = run_search(bank, eval_fn, target_ref, config)
    out_csv = Path(args.out)
    out_json = _json_path_for(out_csv)
    emit_report(report, "csv", out_csv)
    emit_report(report, "json", out_json)
    manifest_inputs = [p for p in bank_dir.iterdir() if p.is_file()]
    if args.evaluator == "builtin":
        manifest_inputs.append(Path(args.target))
    manifest = _manifest("search", vars(args), manifest_inputs, started, [out_csv, out_json])
    manifest.write_atomic(out_csv.parent / (out_csv.stem + ".manifest.json"))
    best = report.best_alpha
    _print_json(
        {
            "best_alpha": str(best),
            "datasets": [bank.names[i] for i in best.selected],
            "objective": report.objective,
            "out": str(out_csv),
        }
    )
    return EXIT_OK


def cmd_similarity(args: argparse.Namespace) -> int:
    started = _now()
    target = read_embeddings(Path(args.target))
    per_dataset = [read_embeddings(Path(p)) for p in args.datasets]
    metric = SimilarityMetric.from_name(args.metric)
    table = similarity_table(target, per_dataset, metric)
    best_alpha, best_score = select_from_table(table, metric.direction)

    out_csv = Path(args.out)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["mixture_bits", "metric", "score"])
        for bits in sorted(table):
            writer.writerow([bits, metric.value, repr(table[bits])])
    out_json = _json_path_for(out_csv)
    payload = {
        "metric": metric.value,
        "direction": metric.direction,
        "best_alpha": str(best_alpha),
        "best_score": best_score,
        "scores": {bits: table[bits] for bits in sorted(table)},
    }
    out_json.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    inputs = [Path(args.target)] + [Path(p) for p in args.datasets]
    manifest = _manifest("similarity", vars(args), inputs, started, [out_csv, out_json])
    manifest.write_atomic(out_csv.parent / (out_csv.stem + ".manifest.json"))
    _print_json({"best_alpha": str(best_alpha), "metric": metric.value, "score": best_score})
    return EXIT_OK


def _read_pairs_csv(path: Path) -> list[CorrelationInput]:
    """Rows: task,x,y,n_selected (header required)."""
    by_task: dict[str, list[tuple[float, float, int]]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"task", "x", "y", "n_selected"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"pairs CSV must have columns {sorted(required)}")
        for row in reader:
            task = row["task"]
            if task not in by_task:
                by_task[task] = []
                order.append(task)
            by_task[task].append((float(row["x"]), float(row["y"]), int(row["n_selected"])))
    if not by_task:
        raise ValidationError("pairs CSV holds no rows")
    return [CorrelationInput(task_name=t, pairs=by_task[t]) for t in order]


def cmd_correlate(args: argparse.Namespace) -> int:
    started = _now()
    pairs_path = Path(args.pairs)
    inputs = _read_pairs_csv(pairs_path)
    report = correlate_tasks(inputs, exclude_singletons=not args.include_singletons)
    out_csv = Path(args.out)
    out_json = _json_path_for(out_csv)
    emit_report(report, "csv", out_csv)
    emit_report(report, "json", out_json)
    manifest = _manifest("correlate", vars(args), [pairs_path], started, [out_csv, out_json])
    manifest.write_atomic(out_csv.parent / (out_csv.stem + ".manifest.json"))
    _print_json(
        {
            "average_r": report.average_r,
            "tasks": len(report.per_task),
            "excluded": report.excluded_count,
            "out": str(out_csv),
        }
    )
    return EXIT_OK


def _write_bench_files(report, outdir: Path) -> list[Path]:
    """Write the bench report set; all files are deterministic for a seed."""
    outdir.mkdir(parents=True, exist_ok=True)
    report_json = outdir / "report.json"
    selections_csv = outdir / "selections.csv"
    mixtures_csv = outdir / "mixtures.csv"
    correlations_csv = outdir / "correlations.csv"
    plot_csv = outdir / "plot_data.csv"

    emit_report(report, "json", report_json)
    emit_report(report, "csv", selections_csv)

    with open(mixtures_csv, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "target",
                "mixture_bits",
                "n_selected",
                "merged_val_accuracy",
                "merged_test_accuracy",
                "finetuned_val_accuracy",
                "finetuned_test_accuracy",
            ]
        )
        for table in report.per_target:
            for rec_val, rec_test in zip(table.records_val, table.records_test):
                writer.writerow(
                    [
                        table.target_name,
                        str(rec_val.alpha),
                        rec_val.alpha.n_selected,
                        repr(rec_val.merged_score.accuracy),
                        repr(rec_test.merged_score.accuracy),
                        repr(rec_val.finetuned_score.accuracy),
                        repr(rec_test.finetuned_score.accuracy),
                    ]
                )

    with open(correlations_csv, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target", "series", "n_pairs", "r"])
        series = [("merged_raw", report.correlation), ("merged_logit", report.correlation_logit)]
        series += [(f"sim_{name}", rep) for name, rep in sorted(report.similarity_correlations.items())]
        for series_name, rep in series:
            for task in sorted(rep.per_task):
                writer.writerow([task, series_name, rep.n_pairs.get(task, ""), repr(rep.per_task[task])])

    per_task_rows = {}
    for table in report.per_target:
        coords = plot_coordinates(table.records_test, table.base_test_accuracy, "merged")
        per_task_rows[table.target_name] = [
            (str(rec.alpha), x, y, n_sel)
            for rec, (x, y, n_sel) in zip(table.records_test, coords)
        ]
    write_plot_csv(plot_csv, per_task_rows)
    return [report_json, selections_csv, mixtures_csv, correlations_csv, plot_csv]


def cmd_bench(args: argparse.Namespace) -> int:
    started = _now()
    bench_cfg = BenchConfig(
        input_dim=args.input_dim,
        num_clusters=args.num_clusters,
        num_datasets=args.num_datasets,
        clusters_per_dataset=args.clusters_per_dataset,
        samples_per_dataset=args.samples_per_dataset,
        cluster_noise=args.cluster_noise,
        num_targets=args.num_targets,
        clusters_per_target=args.clusters_per_target,
        seed=args.seed,
        embedding_source=args.embedding_source,
    )
    train_cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        hidden_dim=args.hidden_dim,
        seed=args.train_seed if args.train_seed is not None else args.seed,
    )
    report = run_benchmark(bench_cfg, train_cfg)
    outdir = Path(args.out)
    outputs = _write_bench_files(report, outdir)
    manifest = _manifest("bench", vars(args), [], started, outputs)
    manifest.write_atomic(outdir / "manifest.json")
    _print_json(
        {
            "out": str(outdir),
            "average_r": report.correlation.average_r,
            "average_r_logit": report.correlation_logit.average_r,
            "best_similarity_r": report.best_similarity_correlation_r,
            "targets": len(report.per_target),
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mergemix",
        description="Dataset mixture selection via uniformly merged model surrogates.",
        epilog=(
            "examples:\n"
            "  mergemix merge --models a.mtm b.mtm --out merged.mtm\n"
            "  mergemix search --bank bank/ --target val.mtm --evaluator builtin --out report.csv\n"
            "  mergemix similarity --target t.mtm --datasets a.mtm b.mtm --metric min_min_l2 --out s.csv\n"
            "  mergemix correlate --pairs pairs.csv --out corr.csv\n"
            "  mergemix bench --seed 42 --out run/\n"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_merge = sub.add_parser("merge", help="average checkpoints into one")
    p_merge.add_argument("--models", nargs="+", required=True, help="checkpoint files, bit order")
    p_merge.add_argument("--out", required=True, help="output checkpoint path")
    p_merge.add_argument("--weights", default=None, help="comma-separated non-negative weights")
    p_merge.set_defaults(func=cmd_merge)

    p_search = sub.add_parser("search", help="score every mixture and report the best")
    p_search.add_argument("--bank", required=True, help="directory of <index>_<name>.mtm files")
    p_search.add_argument("--target", required=True, help="dataset container or external data ref")
    p_search.add_argument(
        "--evaluator",
        default="builtin",
        help="'builtin' or a command template with {checkpoint} and {data}",
    )
    p_search.add_argument("--objective", choices=("accuracy", "loss"), default="accuracy")
    p_search.add_argument("--out", required=True, help="report CSV path (JSON written alongside)")
    p_search.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p_search.set_defaults(func=cmd_search)

    p_sim = sub.add_parser("similarity", help="score mixtures by embedding similarity")
    p_sim.add_argument("--target", required=True, help="target embedding container")
    p_sim.add_argument("--datasets", nargs="+", required=True, help="per-dataset embedding containers")
    p_sim.add_argument("--metric", required=True, help=f"one of {[m.value for m in SimilarityMetric]}")
    p_sim.add_argument("--out", required=True, help="scores CSV path (JSON written alongside)")
    p_sim.set_defaults(func=cmd_similarity)

    p_corr = sub.add_parser("correlate", help="per-task Pearson correlation report")
    p_corr.add_argument("--pairs", required=True, help="CSV with columns task,x,y,n_selected")
    p_corr.add_argument("--include-singletons", action="store_true", help="keep n_selected == 1 pairs")
    p_corr.add_argument("--out", required=True, help="report CSV path (JSON written alongside)")
    p_corr.set_defaults(func=cmd_correlate)

    p_bench = sub.add_parser("bench", help="run the synthetic end-to-end benchmark")
    p_bench.add_argument("--seed", type=int, default=42)
    p_bench.add_argument("--train-seed", type=int, default=None, help="defaults to --seed")
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.add_argument("--input-dim", type=int, default=10)
    p_bench.add_argument("--num-clusters", type=int, default=8)
    p_bench.add_argument("--num-datasets", type=int, default=5)
    p_bench.add_argument("--clusters-per-dataset", type=int, default=3)
    p_bench.add_argument("--samples-per-dataset", type=int, default=2000)
    p_bench.add_argument("--cluster-noise", type=float, default=0.3)
    p_bench.add_argument("--num-targets", type=int, default=4)
    p_bench.add_argument("--clusters-per-target", type=int, default=4)
    p_bench.add_argument("--embedding-source", choices=("hidden", "raw"), default="hidden")
    p_bench.add_argument("--epochs", type=int, default=10)
    p_bench.add_argument("--learning-rate", type=float, default=0.05)
    p_bench.add_argument("--batch-size", type=int, default=64)
    p_bench.add_argument("--hidden-dim", type=int, default=32)
    p_bench.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ExternalEvaluatorError as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_EVALUATOR
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO
    except (ValidationError, MergeMixError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
