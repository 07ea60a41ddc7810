"""Budgeted annotation loop.

Protocol: seed annotation, then per iteration fit concepts on the current
ledger, fit the head, evaluate on the test split, acquire the next batch,
annotate; a final fit + evaluation closes the run, so `iterations` rounds
produce iterations + 1 metric snapshots.

The ledger is the only mutable state. Ground truth lives in the dataset and
is read exclusively by the oracle annotator and the evaluation glue; a human
annotator (the HTTP session service) plugs in through the same Annotator
protocol and everything downstream of the answers is identical.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .concepts import (
    PREDICT_SAMPLES,
    ConceptFitConfig,
    ConceptGP,
    concept_from_doc,
    concept_to_doc,
    concept_uncertainty,
    fit_concept,
    predict_mean_logits,
    predict_proba,
)
from .data import (
    AnnotationLedger,
    EmbeddingDataset,
    Standardizer,
    fit_standardizer,
    read_standardizer,
    standardize_dataset,
    write_standardizer,
)
from .forest import ForestConfig
from .head import HeadConfig, LinearHead, fit_head, head_from_doc, head_to_doc, predict_label
from .metrics import (
    MetricReport,
    calibration_report,
    dci_disentanglement,
    macro_f1_concepts,
    macro_f1_labels,
    roc_auc_concepts,
)
from .rng import substream
from .serialize import dump_json, load_json

ACQUISITION_SAMPLES = 64  # MC draws per uncertainty evaluation during acquisition


class LoopError(RuntimeError):
    """Raised when an experiment run aborts; message carries the iteration."""


@dataclass(frozen=True)
class AcquisitionConfig:
    mode: str = "active"  # "active" or "random"
    initial_samples: int = 40
    samples_per_iteration: int = 60
    iterations: int = 5
    pool_size: int = 95
    uncertainty_samples: int = ACQUISITION_SAMPLES
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("active", "random"):
            raise ValueError(f"unknown acquisition mode {self.mode!r}")
        if self.initial_samples < 1 or self.samples_per_iteration < 1:
            raise ValueError("initial_samples and samples_per_iteration must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.mode == "active" and self.pool_size < self.samples_per_iteration:
            raise ValueError("pool_size must be at least samples_per_iteration in active mode")
        if self.uncertainty_samples < 1:
            raise ValueError("uncertainty_samples must be positive")


@dataclass(frozen=True)
class EvalConfig:
    prediction_samples: int = PREDICT_SAMPLES
    dci_max_rows: int = 512  # forest rows are subsampled beyond this
    forest: ForestConfig = field(default_factory=ForestConfig)
    compute_dci: bool = True


@dataclass(frozen=True)
class AcquisitionQuery:
    """One (sample, concept) annotation request; uncertainty is None for the
    seed batch and random mode (no fitted model ranked it)."""

    sample: int
    concept: int
    uncertainty: float | None


class Annotator(Protocol):
    def annotate(self, queries: Sequence[AcquisitionQuery]) -> dict[tuple[int, int], int]:
        """Return a value for every query; blocking is allowed (human mode)."""
        ...


@dataclass(frozen=True)
class OracleAnnotator:
    """Answers every query from the dataset's ground-truth annotations."""

    dataset: EmbeddingDataset

    def annotate(self, queries: Sequence[AcquisitionQuery]) -> dict[tuple[int, int], int]:
        answers = {}
        for q in queries:
            try:
                answers[(q.sample, q.concept)] = self.dataset.annotation_value(q.sample, q.concept)
            except KeyError:
                raise ValueError(
                    f"oracle has no ground truth for sample {q.sample}, concept {q.concept}"
                ) from None
        return answers


# ---------------------------------------------------------------------------
# acquisition


def _annotated_counts(ledger: AnnotationLedger) -> dict[int, int]:
    counts: dict[int, int] = {}
    for (s, _c) in ledger.entries:
        counts[s] = counts.get(s, 0) + 1
    return counts


def seed_annotations(
    dataset: EmbeddingDataset, n0: int, rng: np.random.Generator
) -> list[AcquisitionQuery]:
    """n0 distinct train samples chosen uniformly, every concept queried."""
    train = dataset.split_indices("train")
    if n0 > train.size:
        raise ValueError(f"cannot seed {n0} samples from a train split of {train.size}")
    chosen = np.sort(rng.choice(train, size=n0, replace=False))
    k = dataset.schema.k
    return [AcquisitionQuery(int(s), c, None) for s in chosen for c in range(k)]


def acquire_active(
    gps: Sequence[ConceptGP],
    dataset: EmbeddingDataset,
    ledger: AnnotationLedger,
    config: AcquisitionConfig,
    rng: np.random.Generator,
) -> tuple[list[AcquisitionQuery], list[str]]:
    """Top-B most-uncertain (sample, concept) pairs from a fresh pool.

    Pool = pool_size train samples with at least one unannotated concept,
    drawn uniformly; candidates are that pool's unannotated pairs; B =
    samples_per_iteration * k. Ties break toward the lower sample index then
    the lower concept index. Short pools/candidate sets return fewer pairs,
    flagged.
    """
    k = dataset.schema.k
    flags: list[str] = []
    counts = _annotated_counts(ledger)
    eligible = np.array(
        [int(s) for s in dataset.split_indices("train") if counts.get(int(s), 0) < k],
        dtype=np.int64,
    )
    if eligible.size == 0:
        return [], ["acquisition pool empty: every train pair is annotated"]
    take = min(config.pool_size, eligible.size)
    if take < config.pool_size:
        flags.append(f"pool shrunk to {take} of {config.pool_size} requested samples")
    pool = np.sort(rng.choice(eligible, size=take, replace=False))

    ranked: list[tuple[float, int, int]] = []
    for ci in range(k):
        candidates = np.array([s for s in pool if not ledger.has(int(s), ci)], dtype=np.int64)
        if candidates.size == 0:
            continue
        unc = concept_uncertainty(
            gps[ci],
            dataset.embeddings[candidates],
            n_samples=config.uncertainty_samples,
            rng=rng,
        )
        for s, u in zip(candidates, np.atleast_1d(unc)):
            ranked.append((-float(u), int(s), ci))
    ranked.sort()

    budget = config.samples_per_iteration * k
    if len(ranked) < budget:
        flags.append(f"only {len(ranked)} candidate pairs for a budget of {budget}")
    chosen = ranked[:budget]
    return [AcquisitionQuery(s, c, -neg_u) for neg_u, s, c in chosen], flags


def acquire_random(
    dataset: EmbeddingDataset,
    ledger: AnnotationLedger,
    config: AcquisitionConfig,
    rng: np.random.Generator,
) -> tuple[list[AcquisitionQuery], list[str]]:
    """samples_per_iteration fully-unannotated train samples, all concepts each."""
    k = dataset.schema.k
    counts = _annotated_counts(ledger)
    fresh = np.array(
        [int(s) for s in dataset.split_indices("train") if counts.get(int(s), 0) == 0],
        dtype=np.int64,
    )
    flags: list[str] = []
    take = min(config.samples_per_iteration, fresh.size)
    if take < config.samples_per_iteration:
        flags.append(f"only {take} unannotated samples left of {config.samples_per_iteration} requested")
    if take == 0:
        return [], flags
    chosen = np.sort(rng.choice(fresh, size=take, replace=False))
    return [AcquisitionQuery(int(s), c, None) for s in chosen for c in range(k)], flags


def _apply_annotations(
    ledger: AnnotationLedger,
    dataset: EmbeddingDataset,
    queries: Sequence[AcquisitionQuery],
    answers: dict[tuple[int, int], int],
) -> None:
    cards = dataset.schema.cardinalities
    for q in queries:
        key = (q.sample, q.concept)
        if key not in answers:
            raise ValueError(f"annotator left pair {key} unanswered")
        value = int(answers[key])
        if not (0 <= value < cards[q.concept]):
            raise ValueError(f"annotation value {value} out of range for concept {q.concept}")
        ledger.add(q.sample, q.concept, value)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(
    gps: Sequence[ConceptGP],
    head: LinearHead,
    dataset: EmbeddingDataset,
    config: EvalConfig,
    rng: np.random.Generator,
) -> MetricReport:
    """Full metric report on the test split (needs test-split ground truth)."""
    k = dataset.schema.k
    test_idx = dataset.split_indices("test")
    if test_idx.size == 0:
        raise ValueError("evaluation needs a nonempty test split")
    flags: list[str] = []

    scored = np.array(
        [s for s in test_idx if all((int(s), c) in dataset.concept_annotations for c in range(k))],
        dtype=np.int64,
    )
    if scored.size == 0:
        raise ValueError("no test samples carry full concept ground truth")
    if scored.size < test_idx.size:
        flags.append(f"concept metrics restricted to {scored.size} of {test_idx.size} test samples")

    z = dataset.embeddings[scored]
    truths = [dataset.concept_truth(scored, c) for c in range(k)]
    probas = [predict_proba(gps[c], z, config.prediction_samples, rng) for c in range(k)]
    logits = [predict_mean_logits(gps[c], z) for c in range(k)]
    for cgp in gps:
        if cgp.degenerate_warning:
            flags.append(f"concept {cgp.concept_name!r}: {cgp.degenerate_warning}")

    f1 = macro_f1_concepts(probas, truths)
    try:
        auc = roc_auc_concepts(logits, truths)
        roc_mean: float = auc.mean
        if auc.skipped:
            flags.append(f"auc skipped single-class activations: {list(auc.skipped)}")
        auc_per_activation: list[float | None] = list(auc.per_activation)
    except ValueError:
        roc_mean = float("nan")
        auc_per_activation = [None] * sum(cgp.cardinality for cgp in gps)
        flags.append("auc undefined: every activation single-class")
    cal = calibration_report(probas, truths)

    label_probas = predict_label(list(gps), head, dataset.embeddings[test_idx], config.prediction_samples, rng)
    predicted_labels = np.argmax(label_probas, axis=1)
    f1_y = macro_f1_labels(predicted_labels, dataset.task_labels[test_idx])

    dci_value: float | None = None
    if config.compute_dci and k >= 2:
        x = np.concatenate(logits, axis=1)
        t = np.stack(truths, axis=1)
        if x.shape[0] > config.dci_max_rows:
            rows = np.sort(rng.choice(x.shape[0], size=config.dci_max_rows, replace=False))
            x, t = x[rows], t[rows]
        dci = dci_disentanglement(x, t, config.forest, rng)
        dci_value = dci.disentanglement
        if dci.constant_concepts:
            flags.append(f"dci forests never split for concepts: {list(dci.constant_concepts)}")

    per_concept: dict[str, dict[str, float | None]] = {}
    offset = 0
    for c, cgp in enumerate(gps):
        acts = auc_per_activation[offset : offset + cgp.cardinality]
        present = [a for a in acts if a is not None]
        per_concept[cgp.concept_name] = {
            "f1": f1.per_concept[c],
            "roc_auc": float(np.mean(present)) if present else None,
        }
        offset += cgp.cardinality

    return MetricReport(
        f1_c=f1.mean,
        f1_y=f1_y,
        roc_auc_c=roc_mean,
        ecce_r=cal.ecce_r,
        ecce_mad=cal.ecce_mad,
        ece1=cal.ece1,
        ece2=cal.ece2,
        dci=dci_value,
        per_concept=per_concept,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# the run


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    cumulative_annotations: int  # ledger size when this snapshot's models were fit
    metrics: MetricReport
    acquired_pairs: tuple[tuple[int, int], ...]  # pairs selected after this snapshot
    wall_time: float
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "cumulative_annotations": self.cumulative_annotations,
            "metrics": self.metrics.to_json(),
            "acquired_pairs": [list(p) for p in self.acquired_pairs],
            "wall_time": self.wall_time,
            "flags": list(self.flags),
        }


@dataclass
class ExperimentRun:
    config: AcquisitionConfig
    records: list[IterationRecord]
    gps: list[ConceptGP]
    head: LinearHead
    standardizer: Standardizer
    ledger: AnnotationLedger


def run_experiment(
    dataset: EmbeddingDataset,
    config: AcquisitionConfig = AcquisitionConfig(),
    fit_config: ConceptFitConfig | None = None,
    head_config: HeadConfig | None = None,
    eval_config: EvalConfig = EvalConfig(),
    annotator: Annotator | None = None,
    on_snapshot: Callable[[IterationRecord], None] | None = None,
) -> ExperimentRun:
    """Run the full protocol; deterministic given config.seed in oracle mode.

    All randomness forks from config.seed through named substreams, so the
    trajectory is independent of who answers the queries; two annotators
    giving the same answers produce identical runs.
    """
    if annotator is None:
        annotator = OracleAnnotator(dataset)
    if fit_config is None:
        fit_config = ConceptFitConfig(seed=config.seed)
    if head_config is None:
        head_config = HeadConfig(seed=config.seed)

    k = dataset.schema.k
    std = fit_standardizer(dataset.embeddings[dataset.split_indices("train")])
    ds = standardize_dataset(std, dataset)
    ledger = AnnotationLedger()

    seed_queries = seed_annotations(ds, config.initial_samples, substream(config.seed, "loop", "seed-select"))
    _apply_annotations(ledger, ds, seed_queries, annotator.annotate(seed_queries))

    records: list[IterationRecord] = []
    gps: list[ConceptGP] = []
    head = LinearHead(weights=np.zeros((ds.schema.width, ds.n_labels)), bias=np.zeros(ds.n_labels))
    for it in range(config.iterations + 1):
        started = time.perf_counter()
        fit_size = len(ledger)
        visible = replace(ds, concept_annotations=dict(ledger.entries))
        try:
            gps = [fit_concept(visible, ci, fit_config) for ci in range(k)]
            head = fit_head(gps, visible, head_config)
        except Exception as e:
            raise LoopError(f"iteration {it}: {e}") from e
        metrics = evaluate(gps, head, ds, eval_config, substream(config.seed, "loop", "eval", it))
        wall = time.perf_counter() - started

        queries: list[AcquisitionQuery] = []
        flags: list[str] = []
        if it < config.iterations:
            acq_rng = substream(config.seed, "loop", "acquire", it)
            if config.mode == "active":
                queries, flags = acquire_active(gps, ds, ledger, config, acq_rng)
            else:
                queries, flags = acquire_random(ds, ledger, config, acq_rng)

        record = IterationRecord(
            iteration=it,
            cumulative_annotations=fit_size,
            metrics=metrics,
            acquired_pairs=tuple((q.sample, q.concept) for q in queries),
            wall_time=wall,
            flags=tuple(flags),
        )
        records.append(record)
        if on_snapshot is not None:
            on_snapshot(record)
        if queries:
            _apply_annotations(ledger, ds, queries, annotator.annotate(queries))

    return ExperimentRun(
        config=config, records=records, gps=gps, head=head, standardizer=std, ledger=ledger
    )


# ---------------------------------------------------------------------------
# export

CSV_METRIC_KEYS = ("f1_c", "f1_y", "roc_auc_c", "ecce_r", "ecce_mad", "ece1", "ece2", "dci")


def run_to_jsonl(run: ExperimentRun) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in run.records)


def run_to_metric_csv(run: ExperimentRun) -> str:
    """(iteration, metric, value, seed) rows; floats via repr for stable bytes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "metric", "value", "seed"])
    for r in run.records:
        doc = r.metrics.to_json()
        for key in CSV_METRIC_KEYS:
            value = doc[key]
            w.writerow([r.iteration, key, "" if value is None else repr(float(value)), run.config.seed])
    return buf.getvalue()


def save_models(run: ExperimentRun, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_standardizer(run.standardizer, out / "standardizer.json")
    for i, cgp in enumerate(run.gps):
        dump_json(concept_to_doc(cgp), out / f"concept_{i}.json")
    dump_json(head_to_doc(run.head), out / "head.json")
    return out


def load_models(models_dir: str | Path) -> tuple[Standardizer, list[ConceptGP], LinearHead]:
    root = Path(models_dir)
    std_path = root / "standardizer.json"
    head_path = root / "head.json"
    concept_paths = sorted(root.glob("concept_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    if not std_path.exists() or not head_path.exists() or not concept_paths:
        raise FileNotFoundError(f"{root} does not hold standardizer.json, concept_*.json and head.json")
    std = read_standardizer(std_path)
    gps = [concept_from_doc(load_json(p)) for p in concept_paths]
    head = head_from_doc(load_json(head_path))
    return std, gps, head
