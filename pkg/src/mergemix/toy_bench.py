"""Desk-scale end-to-end benchmark on synthetic cluster-classification tasks.

A universe of C Gaussian clusters yields N overlapping datasets and a few
held-out targets whose clusters come from a subset of the datasets. A small
MLP is fine-tuned per dataset and per mixture from a shared briefly
pretrained base, so uniform merging of the per-dataset models can be
compared against true mixture fine-tuning on every candidate mixture.

All randomness flows through Philox (a 64-bit counter-based generator) keyed
by (seed, stream), so runs are bit-reproducible across platforms. Universe
generation uses small stream ids; training run streams start at 2**32 plus
the integer value of the mixture bit string, so the two spaces never collide.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .analytics import CorrelationInput, CorrelationReport, correlate_tasks
from .baselines import (
    SimilarityMetric,
    all_datasets_vector,
    random_selection_mean,
    select_from_table,
    similarity_table,
)
from .errors import ValidationError
from .evaluator import (
    EvalDataset,
    Score,
    evaluate_builtin,
    logit_improvement,
    toy_mlp_dims,
    toy_mlp_hidden,
)
from .merge_engine import MixtureVector, ModelBank, gray_code_order, subset_merges
from .mixture_search import ScoreRecord
from .tensor_store import Checkpoint, EmbeddingSet

# Philox stream ids for universe generation (train streams live at >= 1 << 32)
_STREAM_CENTERS = 1
_STREAM_DATASET_BASE = 100
_STREAM_TARGET_PICK_BASE = 200
_STREAM_TARGET_DATA_BASE = 300
_STREAM_BASE_POOL = 400
_STREAM_INIT = 500
_STREAM_TRAIN_BASE = 1 << 32

_BASE_POOL_PER_CLUSTER = 100

# Targets are distribution-shifted: same clusters and labels as the candidate
# datasets, but sampled with wider noise. Without the shift every model sits
# at ceiling accuracy and mixture choice stops mattering.
TARGET_NOISE_SCALE = 5.0

EMBEDDING_SOURCES = ("hidden", "raw")

MAX_BENCH_N = 12


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


@dataclass
class BenchConfig:
    input_dim: int = 10
    num_clusters: int = 8
    num_datasets: int = 5
    clusters_per_dataset: int = 3
    samples_per_dataset: int = 2000
    cluster_noise: float = 0.3
    num_targets: int = 4
    clusters_per_target: int = 4
    seed: int = 42
    embedding_source: str = "hidden"

    def __post_init__(self) -> None:
        for name in (
            "input_dim",
            "num_clusters",
            "num_datasets",
            "clusters_per_dataset",
            "samples_per_dataset",
            "num_targets",
            "clusters_per_target",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.samples_per_dataset < 10:
            raise ValidationError("samples_per_dataset must be >= 10 so every split is non-empty")
        if self.clusters_per_dataset > self.num_clusters:
            raise ValidationError("clusters_per_dataset must not exceed num_clusters")
        if self.clusters_per_target > self.num_clusters:
            raise ValidationError("clusters_per_target must not exceed num_clusters")
        if self.num_datasets > 20:
            raise ValidationError("num_datasets must be <= 20")
        if self.cluster_noise < 0.0:
            raise ValidationError("cluster_noise must be >= 0")
        if self.seed < 0:
            raise ValidationError("seed must be an unsigned integer")
        if self.embedding_source not in EMBEDDING_SOURCES:
            raise ValidationError(f"embedding_source must be one of {EMBEDDING_SOURCES}")


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.05
    batch_size: int = 64
    hidden_dim: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.learning_rate <= 0.0 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ValidationError("learning_rate, batch_size, hidden_dim must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be an unsigned integer")


@dataclass
class DatasetTriple:
    name: str
    train: EvalDataset
    val: EvalDataset
    test: EvalDataset
    cluster_ids: tuple[int, ...]


@dataclass
class TargetPair:
    name: str
    val: EvalDataset
    test: EvalDataset
    cluster_ids: tuple[int, ...]
    source_datasets: tuple[int, ...]


@dataclass
class Universe:
    datasets: list[DatasetTriple]
    targets: list[TargetPair]
    dataset_embeddings: list[EmbeddingSet]
    target_embeddings: list[EmbeddingSet]
    base_pool: EvalDataset
    centers: np.ndarray
    config: BenchConfig


def _dataset_clusters(cfg: BenchConfig, i: int) -> tuple[int, ...]:
    """Round-robin deal: dataset i owns clusters (i + j*N) mod C, deduplicated."""
    c, n = cfg.num_clusters, cfg.num_datasets
    picked: list[int] = []
    for j in range(c):
        cand = (i + j * n) % c
        if cand not in picked:
            picked.append(cand)
        if len(picked) == cfg.clusters_per_dataset:
            return tuple(picked)
    for j in range(c):  # degenerate gcd cycles: fill with a plain scan
        cand = (i + j) % c
        if cand not in picked:
            picked.append(cand)
        if len(picked) == cfg.clusters_per_dataset:
            break
    return tuple(picked)


def _sample_clusters(
    rng: np.random.Generator,
    centers: np.ndarray,
    cluster_ids: tuple[int, ...],
    total: int,
    noise: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw `total` samples split as evenly as possible across cluster_ids."""
    k = len(cluster_ids)
    base, rem = divmod(total, k)
    counts = [base + (1 if j < rem else 0) for j in range(k)]
    xs, ys = [], []
    for cid, count in zip(cluster_ids, counts):
        if count == 0:
            continue
        pts = centers[cid] + noise * rng.standard_normal((count, centers.shape[1]))
        xs.append(pts)
        ys.append(np.full(count, cid, dtype=np.int64))
    x = np.concatenate(xs, axis=0)
    y = np.concatenate(ys, axis=0)
    perm = rng.permutation(total)
    return x[perm].astype(np.float32), y[perm]


def _make_dataset(x, y, num_classes, name, split) -> EvalDataset:
    return EvalDataset(features=x, labels=y, num_classes=num_classes, name=name, split=split)


def generate_universe(cfg: BenchConfig) -> Universe:
    """Synthesize datasets, targets, and raw-feature embeddings.

    Targets draw their clusters from the union of 2-3 datasets' clusters, so
    every target overlaps some datasets and ignores others. The returned
    embeddings are raw feature rows of the validation splits; run_benchmark
    swaps in base-model hidden activations unless configured otherwise.
    """
    c, d, n = cfg.num_clusters, cfg.input_dim, cfg.num_datasets
    centers = 2.0 * _rng(cfg.seed, _STREAM_CENTERS).standard_normal((c, d))

    datasets: list[DatasetTriple] = []
    dataset_embeddings: list[EmbeddingSet] = []
    for i in range(n):
        clusters = _dataset_clusters(cfg, i)
        rng = _rng(cfg.seed, _STREAM_DATASET_BASE + i)
        x, y = _sample_clusters(rng, centers, clusters, cfg.samples_per_dataset, cfg.cluster_noise)
        n_train = int(cfg.samples_per_dataset * 0.8)
        n_val = int(cfg.samples_per_dataset * 0.1)
        name = f"D{i + 1}"
        triple = DatasetTriple(
            name=name,
            train=_make_dataset(x[:n_train], y[:n_train], c, name, "train"),
            val=_make_dataset(x[n_train : n_train + n_val], y[n_train : n_train + n_val], c, name, "val"),
            test=_make_dataset(x[n_train + n_val :], y[n_train + n_val :], c, name, "test"),
            cluster_ids=clusters,
        )
        datasets.append(triple)
        dataset_embeddings.append(EmbeddingSet(embeddings=triple.val.features, source_name=name))

    targets: list[TargetPair] = []
    target_embeddings: list[EmbeddingSet] = []
    per_split = max(1, cfg.samples_per_dataset // 10)
    for t in range(cfg.num_targets):
        pick = _rng(cfg.seed, _STREAM_TARGET_PICK_BASE + t)
        n_src = int(pick.integers(2, 4)) if n >= 3 else min(2, n)
        n_src = min(n_src, n)
        sources = tuple(sorted(int(s) for s in pick.choice(n, size=n_src, replace=False)))
        union = sorted({cid for s in sources for cid in datasets[s].cluster_ids})
        k = min(cfg.clusters_per_target, len(union))
        clusters = tuple(sorted(int(x) for x in pick.choice(union, size=k, replace=False)))
        data_rng = _rng(cfg.seed, _STREAM_TARGET_DATA_BASE + t)
        noise = cfg.cluster_noise * TARGET_NOISE_SCALE
        x, y = _sample_clusters(data_rng, centers, clusters, 2 * per_split, noise)
        name = f"T{t + 1}"
        pair = TargetPair(
            name=name,
            val=_make_dataset(x[:per_split], y[:per_split], c, name, "val"),
            test=_make_dataset(x[per_split:], y[per_split:], c, name, "test"),
            cluster_ids=clusters,
            source_datasets=sources,
        )
        targets.append(pair)
        target_embeddings.append(EmbeddingSet(embeddings=pair.val.features, source_name=name))

    pool_rng = _rng(cfg.seed, _STREAM_BASE_POOL)
    pool_x, pool_y = _sample_clusters(
        pool_rng, centers, tuple(range(c)), _BASE_POOL_PER_CLUSTER * c, cfg.cluster_noise
    )
    base_pool = _make_dataset(pool_x, pool_y, c, "base_pool", "train")

    return Universe(
        datasets=datasets,
        targets=targets,
        dataset_embeddings=dataset_embeddings,
        target_embeddings=target_embeddings,
        base_pool=base_pool,
        centers=centers,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# toy MLP training


def _params_from_ckpt(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    toy_mlp_dims(ckpt)
    return {name: arr.astype(np.float64) for name, arr in ckpt.tensors.items()}


def _ckpt_from_params(params: dict[str, np.ndarray]) -> Checkpoint:
    return Checkpoint(tensors={name: arr.astype(np.float32) for name, arr in params.items()})


def loss_and_grads(
    params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy over a batch and its analytic gradients.

    params holds float64 arrays w1 [h,in], b1 [h], w2 [c,h], b2 [c];
    x is [b, in], y is [b] integer labels.
    """
    w1, b1, w2, b2 = params["w1"], params["b1"], params["w2"], params["b2"]
    batch = x.shape[0]
    z1 = x @ w1.T + b1
    h = np.maximum(z1, 0.0)
    logits = h @ w2.T + b2

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    idx = np.arange(batch)
    loss = float(np.mean(np.log(exp.sum(axis=1)) - shifted[idx, y]))

    dlogits = probs.copy()
    dlogits[idx, y] -= 1.0
    dlogits /= batch
    dh = dlogits @ w2
    dz1 = dh * (z1 > 0.0)
    grads = {
        "w1": dz1.T @ x,
        "b1": dz1.sum(axis=0),
        "w2": dlogits.T @ h,
        "b2": dlogits.sum(axis=0),
    }
    return loss, grads


def train(init: Checkpoint, data: EvalDataset, cfg: TrainConfig, run_key: int = 0) -> Checkpoint:
    """Minibatch SGD on softmax cross-entropy for exactly cfg.epochs epochs.

    No early stopping, no schedule, no weight decay. The sample order is
    reshuffled every epoch from the run generator, so results are
    deterministic given (init, data, cfg, run_key).
    """
    params = _params_from_ckpt(init)
    input_dim, _, classes = toy_mlp_dims(init)
    if data.features.shape[1] != input_dim:
        raise ValidationError(
            f"feature dim {data.features.shape[1]} does not match model input dim {input_dim}"
        )
    if data.num_classes != classes:
        raise ValidationError(f"dataset has {data.num_classes} classes but model head has {classes}")
    n = len(data)
    if n == 0:
        raise ValidationError("empty training data")
    x = data.features.astype(np.float64)
    y = data.labels
    rng = _rng(cfg.seed, _STREAM_TRAIN_BASE + run_key)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            _, grads = loss_and_grads(params, x[sel], y[sel])
            for name in params:
                params[name] -= cfg.learning_rate * grads[name]
    return _ckpt_from_params(params)


def init_checkpoint(rng: np.random.Generator, input_dim: int, hidden: int, classes: int) -> Checkpoint:
    """Fan-in-scaled uniform initialization for the toy MLP."""
    bound1 = 1.0 / math.sqrt(input_dim)
    bound2 = 1.0 / math.sqrt(hidden)
    params = {
        "w1": rng.uniform(-bound1, bound1, (hidden, input_dim)),
        "b1": rng.uniform(-bound1, bound1, hidden),
        "w2": rng.uniform(-bound2, bound2, (classes, hidden)),
        "b2": rng.uniform(-bound2, bound2, classes),
    }
    return _ckpt_from_params(params)


def pretrain_base(universe: Universe, cfg: TrainConfig) -> Checkpoint:
    """Briefly pretrain the shared base on a balanced all-cluster pool.

    Runs max(1, epochs // 2) epochs from a seeded fan-in-scaled uniform
    initialization; fine-tuning from this capable base keeps the per-dataset
    models mergeable.
    """
    bench_cfg = universe.config
    rng = _rng(cfg.seed, _STREAM_INIT)
    init = init_checkpoint(rng, bench_cfg.input_dim, cfg.hidden_dim, bench_cfg.num_clusters)
    pre_cfg = dataclasses.replace(cfg, epochs=max(1, cfg.epochs // 2))
    return train(init, universe.base_pool, pre_cfg, run_key=0)


def concat_datasets(parts: list[EvalDataset], name: str, split: str = "train") -> EvalDataset:
    """Concatenate datasets in the given (ascending dataset index) order."""
    if not parts:
        raise ValidationError("nothing to concatenate")
    classes = {p.num_classes for p in parts}
    if len(classes) != 1:
        raise ValidationError("datasets disagree on num_classes")
    return EvalDataset(
        features=np.concatenate([p.features for p in parts], axis=0),
        labels=np.concatenate([p.labels for p in parts], axis=0),
        num_classes=classes.pop(),
        name=name,
        split=split,
    )


# ---------------------------------------------------------------------------
# full benchmark


@dataclass
class SelectionOutcome:
    method: str
    mixture_bits: str  # "" when the method has no single mixture (random_mean)
    val_accuracy: float
    test_accuracy: float
    detail: str = ""

    def n_selected(self) -> int | str:
        return self.mixture_bits.count("1") if self.mixture_bits else ""


@dataclass
class TargetTable:
    target_name: str
    base_val_accuracy: float
    base_test_accuracy: float
    records_val: list[ScoreRecord]
    records_test: list[ScoreRecord]
    selections: dict[str, SelectionOutcome]


@dataclass
class BenchReport:
    bench_config: dict
    train_config: dict
    dataset_names: list[str]
    target_names: list[str]
    per_target: list[TargetTable]
    correlation: CorrelationReport
    correlation_logit: CorrelationReport
    similarity_correlations: dict[str, CorrelationReport]
    best_similarity_correlation_metric: str
    best_similarity_correlation_r: float
    table_similarity_metric: str
    similarity_tables: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)

    SELECTION_METHODS = (
        "merge_to_mix_merged",
        "merge_to_mix_finetuned",
        "all_datasets",
        "similarity",
        "random_mean",
        "oracle",
    )

    def csv_header(self) -> list[str]:
        return ["target", "method", "mixture_bits", "n_selected", "val_accuracy", "test_accuracy"]

    def csv_rows(self) -> list[list]:
        rows = []
        for table in self.per_target:
            for method in self.SELECTION_METHODS:
                sel = table.selections[method]
                rows.append(
                    [
                        table.target_name,
                        method,
                        sel.mixture_bits,
                        sel.n_selected(),
                        repr(sel.val_accuracy),
                        repr(sel.test_accuracy),
                    ]
                )
        return rows

    def to_json_obj(self) -> dict:
        def score_obj(s: Score | None):
            if s is None:
                return None
            return {"accuracy": s.accuracy, "mean_loss": s.mean_loss, "num_samples": s.num_samples}

        def record_obj(rec: ScoreRecord):
            return {
                "mixture_bits": str(rec.alpha),
                "n_selected": rec.alpha.n_selected,
                "merged_score": score_obj(rec.merged_score),
                "finetuned_score": score_obj(rec.finetuned_score),
            }

        return {
            "bench_config": self.bench_config,
            "train_config": self.train_config,
            "dataset_names": self.dataset_names,
            "target_names": self.target_names,
            "per_target": [
                {
                    "target_name": t.target_name,
                    "base_val_accuracy": t.base_val_accuracy,
                    "base_test_accuracy": t.base_test_accuracy,
                    "records_val": [record_obj(r) for r in t.records_val],
                    "records_test": [record_obj(r) for r in t.records_test],
                    "selections": {
                        m: dataclasses.asdict(t.selections[m]) for m in self.SELECTION_METHODS
                    },
                }
                for t in self.per_target
            ],
            "correlation": self.correlation.to_json_obj(),
            "correlation_logit": self.correlation_logit.to_json_obj(),
            "similarity_correlations": {
                k: v.to_json_obj() for k, v in sorted(self.similarity_correlations.items())
            },
            "best_similarity_correlation_metric": self.best_similarity_correlation_metric,
            "best_similarity_correlation_r": (
                self.best_similarity_correlation_r
                if math.isfinite(self.best_similarity_correlation_r)
                else None
            ),
            "table_similarity_metric": self.table_similarity_metric,
        }


def _best_by_accuracy(accs: dict[str, float]) -> str:
    """argmax with the search tie-break: smaller selection, then lex order."""
    return min(accs.items(), key=lambda kv: (-kv[1], kv[0].count("1"), kv[0]))[0]


def run_benchmark(bench_cfg: BenchConfig, train_cfg: TrainConfig) -> BenchReport:
    """Train everything, score everything, select per method, correlate.

    Ground truth: every non-empty mixture's model is actually fine-tuned
    from the shared base on the concatenated train splits. Selection happens
    on validation accuracy; reporting and correlations use test accuracy.
    """
    if bench_cfg.num_datasets > MAX_BENCH_N:
        raise ValidationError(
            f"2^N - 1 fine-tuning runs infeasible for N={bench_cfg.num_datasets} (max {MAX_BENCH_N})"
        )
    n = bench_cfg.num_datasets
    universe = generate_universe(bench_cfg)
    base = pretrain_base(universe, train_cfg)

    order = list(gray_code_order(n))
    singleton_bits = {str(MixtureVector.from_indices([i], n)): i for i in range(n)}

    # fine-tune per dataset, then per multi-dataset mixture (same TrainConfig)
    bank_models: list[Checkpoint] = []
    for i, triple in enumerate(universe.datasets):
        run_key = int(str(MixtureVector.from_indices([i], n)), 2)
        bank_models.append(train(base, triple.train, train_cfg, run_key=run_key))
    bank = ModelBank(models=bank_models, names=[t.name for t in universe.datasets])

    shared_cfg = train_cfg

    def finetune(data: EvalDataset, run_key: int, cfg: TrainConfig) -> Checkpoint:
        assert cfg is shared_cfg, "every fine-tuning run must share one TrainConfig"
        return train(base, data, cfg, run_key=run_key)

    finetuned: dict[str, Checkpoint] = {}
    for alpha in order:
        bits = str(alpha)
        if bits in singleton_bits:
            finetuned[bits] = bank_models[singleton_bits[bits]]
            continue
        mixture_data = concat_datasets(
            [universe.datasets[i].train for i in alpha.selected], name=f"mix_{bits}"
        )
        finetuned[bits] = finetune(mixture_data, int(bits, 2), train_cfg)

    merged: dict[str, Checkpoint] = {str(a): ckpt for a, ckpt in subset_merges(bank, order)}
    # singleton surrogates are literally the bank checkpoints
    for bits, i in singleton_bits.items():
        merged[bits] = bank_models[i]

    if bench_cfg.embedding_source == "hidden":
        ds_embs = [
            EmbeddingSet(toy_mlp_hidden(base, t.val.features), source_name=t.name)
            for t in universe.datasets
        ]
        tg_embs = [
            EmbeddingSet(toy_mlp_hidden(base, t.val.features), source_name=t.name)
            for t in universe.targets
        ]
    else:
        ds_embs = universe.dataset_embeddings
        tg_embs = universe.target_embeddings

    per_target: list[TargetTable] = []
    corr_inputs: list[CorrelationInput] = []
    corr_logit_inputs: list[CorrelationInput] = []
    sim_corr_inputs: dict[str, list[CorrelationInput]] = {m.value: [] for m in SimilarityMetric}
    sim_tables_all: dict[str, dict[str, dict[str, float]]] = {}

    for t_idx, target in enumerate(universe.targets):
        base_val = evaluate_builtin(base, target.val)
        base_test = evaluate_builtin(base, target.test)

        records_val: list[ScoreRecord] = []
        records_test: list[ScoreRecord] = []
        ft_val_acc: dict[str, float] = {}
        ft_test_acc: dict[str, float] = {}
        merged_val_acc: dict[str, float] = {}
        for alpha in order:
            bits = str(alpha)
            m_val = evaluate_builtin(merged[bits], target.val)
            m_test = evaluate_builtin(merged[bits], target.test)
            f_val = evaluate_builtin(finetuned[bits], target.val)
            f_test = evaluate_builtin(finetuned[bits], target.test)
            records_val.append(ScoreRecord(alpha=alpha, merged_score=m_val, finetuned_score=f_val))
            records_test.append(ScoreRecord(alpha=alpha, merged_score=m_test, finetuned_score=f_test))
            ft_val_acc[bits] = f_val.accuracy
            ft_test_acc[bits] = f_test.accuracy
            merged_val_acc[bits] = m_val.accuracy

        # correlation pairs: merged vs fine-tuned test accuracy
        pairs = [
            (rec.merged_score.accuracy, rec.finetuned_score.accuracy, rec.alpha.n_selected)
            for rec in records_test
        ]
        corr_inputs.append(CorrelationInput(task_name=target.name, pairs=pairs))
        logit_pairs = [
            (
                logit_improvement(rec.merged_score.accuracy, base_test.accuracy),
                logit_improvement(rec.finetuned_score.accuracy, base_test.accuracy),
                rec.alpha.n_selected,
            )
            for rec in records_test
        ]
        corr_logit_inputs.append(CorrelationInput(task_name=target.name, pairs=logit_pairs))

        sim_tables: dict[str, dict[str, float]] = {}
        for metric in SimilarityMetric:
            table = similarity_table(tg_embs[t_idx], ds_embs, metric)
            sim_tables[metric.value] = table
            sim_pairs = [
                (table[str(rec.alpha)], rec.finetuned_score.accuracy, rec.alpha.n_selected)
                for rec in records_test
            ]
            sim_corr_inputs[metric.value].append(
                CorrelationInput(task_name=target.name, pairs=sim_pairs)
            )
        sim_tables_all[target.name] = sim_tables

        # selections on validation, reported on test
        mtm_bits = _best_by_accuracy(merged_val_acc)
        merged_test_at = {str(r.alpha): r.merged_score.accuracy for r in records_test}
        all_bits = str(all_datasets_vector(n))
        oracle_bits = _best_by_accuracy(ft_val_acc)

        selections = {
            "merge_to_mix_merged": SelectionOutcome(
                method="merge_to_mix_merged",
                mixture_bits=mtm_bits,
                val_accuracy=merged_val_acc[mtm_bits],
                test_accuracy=merged_test_at[mtm_bits],
            ),
            "merge_to_mix_finetuned": SelectionOutcome(
                method="merge_to_mix_finetuned",
                mixture_bits=mtm_bits,
                val_accuracy=ft_val_acc[mtm_bits],
                test_accuracy=ft_test_acc[mtm_bits],
            ),
            "all_datasets": SelectionOutcome(
                method="all_datasets",
                mixture_bits=all_bits,
                val_accuracy=ft_val_acc[all_bits],
                test_accuracy=ft_test_acc[all_bits],
            ),
            "random_mean": SelectionOutcome(
                method="random_mean",
                mixture_bits="",
                val_accuracy=random_selection_mean(ft_val_acc),
                test_accuracy=random_selection_mean(ft_test_acc),
            ),
            "oracle": SelectionOutcome(
                method="oracle",
                mixture_bits=oracle_bits,
                val_accuracy=ft_val_acc[oracle_bits],
                test_accuracy=ft_test_acc[oracle_bits],
            ),
        }
        per_target.append(
            TargetTable(
                target_name=target.name,
                base_val_accuracy=base_val.accuracy,
                base_test_accuracy=base_test.accuracy,
                records_val=records_val,
                records_test=records_test,
                selections=selections,
            )
        )

    # pick the similarity metric with the best mean fine-tuned test accuracy
    metric_mean_acc: dict[str, float] = {}
    sim_selected: dict[str, dict[str, str]] = {m.value: {} for m in SimilarityMetric}
    for metric in SimilarityMetric:
        accs = []
        for t_idx, target in enumerate(universe.targets):
            alpha, _ = select_from_table(
                sim_tables_all[target.name][metric.value], metric.direction
            )
            bits = str(alpha)
            sim_selected[metric.value][target.name] = bits
            rec = next(r for r in per_target[t_idx].records_test if str(r.alpha) == bits)
            accs.append(rec.finetuned_score.accuracy)
        metric_mean_acc[metric.value] = math.fsum(accs) / len(accs)
    table_metric = _best_by_metric_value(metric_mean_acc)

    for t_idx, target in enumerate(universe.targets):
        bits = sim_selected[table_metric][target.name]
        rec_val = next(r for r in per_target[t_idx].records_val if str(r.alpha) == bits)
        rec_test = next(r for r in per_target[t_idx].records_test if str(r.alpha) == bits)
        per_target[t_idx].selections["similarity"] = SelectionOutcome(
            method="similarity",
            mixture_bits=bits,
            val_accuracy=rec_val.finetuned_score.accuracy,
            test_accuracy=rec_test.finetuned_score.accuracy,
            detail=table_metric,
        )

    correlation = _correlate_or_empty(corr_inputs)
    correlation_logit = _correlate_or_empty(corr_logit_inputs)
    similarity_correlations = {
        name: _correlate_or_empty(items) for name, items in sim_corr_inputs.items()
    }
    finite = [
        (name, rep.average_r)
        for name, rep in similarity_correlations.items()
        if math.isfinite(rep.average_r)
    ]
    if finite:
        best_sim_metric, best_sim_r = max(finite, key=lambda kv: (kv[1], kv[0]))
    else:
        best_sim_metric, best_sim_r = "", float("nan")

    report = BenchReport(
        bench_config=dataclasses.asdict(bench_cfg),
        train_config=dataclasses.asdict(train_cfg),
        dataset_names=[t.name for t in universe.datasets],
        target_names=[t.name for t in universe.targets],
        per_target=per_target,
        correlation=correlation,
        correlation_logit=correlation_logit,
        similarity_correlations=similarity_correlations,
        best_similarity_correlation_metric=best_sim_metric,
        best_similarity_correlation_r=best_sim_r,
        table_similarity_metric=table_metric,
        similarity_tables=sim_tables_all,
    )

    for table in report.per_target:  # the oracle tops every selection on validation
        oracle_val = table.selections["oracle"].val_accuracy
        for method in ("merge_to_mix_finetuned", "all_datasets", "similarity", "random_mean"):
            assert table.selections[method].val_accuracy <= oracle_val + 1e-12
    return report


def _correlate_or_empty(inputs: list[CorrelationInput]) -> CorrelationReport:
    """correlate_tasks, degrading to an empty report when N is too small.

    An N=2 run leaves one non-singleton pair per task, below the minimum,
    which correlate_tasks treats as an error. The bench still has a useful
    selection table in that regime, so correlations degrade to NaN instead.
    """
    try:
        return correlate_tasks(inputs, exclude_singletons=True)
    except ValidationError:
        return CorrelationReport(
            per_task={},
            average_r=float("nan"),
            excluded_count=sum(
                1 for item in inputs for p in item.pairs if int(p[2]) == 1
            ),
            skipped_tasks=[item.task_name for item in inputs],
            n_pairs={},
        )


def _best_by_metric_value(values: dict[str, float]) -> str:
    """argmax over metric names; ties resolve to canonical metric order."""
    canon = [m.value for m in SimilarityMetric]
    return max(values, key=lambda name: (values[name], -canon.index(name)))
