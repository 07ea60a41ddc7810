"""Concept-quality metric suite.

All functions take plain arrays; model glue lives in the experiment loop.
Conventions pinned for determinism:
  - per-class F1 = 2TP/(2TP+FP+FN); a vacuous class (no true, no predicted
    positives) scores 1.0 so that predictions identical to truths always
    yield F1 = 1 even on single-class slices;
  - rank AUC counts ties as 0.5 (average ranks);
  - ECCE sorts scores ascending with ties broken by original index;
  - ECE uses equal-width bins with score 1.0 landing in the top bin;
  - calibration metrics run per activation on positive-class probabilities
    and are averaged over the v activations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import xlogy
from scipy.stats import rankdata

from .forest import ForestConfig, ImportanceResult, rf_importance
from .rng import as_generator, substream

ECE_BINS = 10


# ---------------------------------------------------------------------------
# F1


def binary_f1(truth: np.ndarray, predicted: np.ndarray) -> float:
    truth = np.asarray(truth, dtype=bool)
    predicted = np.asarray(predicted, dtype=bool)
    tp = int(np.sum(truth & predicted))
    fp = int(np.sum(~truth & predicted))
    fn = int(np.sum(truth & ~predicted))
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def _activation_macro_f1(truth_on: np.ndarray, pred_on: np.ndarray) -> float:
    """Macro-F1 of one binary activation: mean of positive- and negative-class F1."""
    return 0.5 * (binary_f1(truth_on, pred_on) + binary_f1(~truth_on, ~pred_on))


@dataclass(frozen=True)
class ConceptF1Result:
    mean: float
    per_activation: tuple[float, ...]
    per_concept: tuple[float, ...]


def macro_f1_concepts(
    pred_probas: Sequence[np.ndarray], truths: Sequence[np.ndarray]
) -> ConceptF1Result:
    """Mean over all v activations of the binarized activation's macro-F1.

    Per concept the predicted value is the argmax of the simplex; activations
    are its one-hot expansion.
    """
    if len(pred_probas) == 0 or len(pred_probas) != len(truths):
        raise ValueError("need aligned, nonempty probas and truths")
    per_activation: list[float] = []
    per_concept: list[float] = []
    for probas, truth in zip(pred_probas, truths):
        probas = np.asarray(probas, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.int64)
        if probas.ndim != 2 or probas.shape[0] != truth.shape[0] or probas.shape[0] == 0:
            raise ValueError("each concept needs (n, v) probas and (n,) truths")
        predicted = np.argmax(probas, axis=1)
        scores = [
            _activation_macro_f1(truth == j, predicted == j) for j in range(probas.shape[1])
        ]
        per_activation.extend(scores)
        per_concept.append(float(np.mean(scores)))
    return ConceptF1Result(
        mean=float(np.mean(per_activation)),
        per_activation=tuple(per_activation),
        per_concept=tuple(per_concept),
    )


def macro_f1_labels(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Macro-F1 over task label classes (one-vs-rest per class, averaged)."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise ValueError("need aligned, nonempty label vectors")
    classes = np.unique(np.concatenate([predicted, truth]))
    return float(np.mean([binary_f1(truth == c, predicted == c) for c in classes]))


# ---------------------------------------------------------------------------
# ROC-AUC


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with ties counted 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("rank_auc needs both classes")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class ConceptAUCResult:
    mean: float
    per_activation: tuple[float | None, ...]  # None = skipped (single class)
    skipped: tuple[int, ...]


def roc_auc_concepts(
    mean_logits: Sequence[np.ndarray], truths: Sequence[np.ndarray]
) -> ConceptAUCResult:
    """Mean rank-AUC over activations, scored on the exact mean logits."""
    per_activation: list[float | None] = []
    skipped: list[int] = []
    offset = 0
    for logits, truth in zip(mean_logits, truths):
        logits = np.asarray(logits, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.int64)
        for j in range(logits.shape[1]):
            labels = truth == j
            if labels.all() or not labels.any():
                per_activation.append(None)
                skipped.append(offset + j)
            else:
                per_activation.append(rank_auc(logits[:, j], labels))
        offset += logits.shape[1]
    scored = [a for a in per_activation if a is not None]
    if not scored:
        raise ValueError("every activation was single-class; AUC undefined")
    return ConceptAUCResult(
        mean=float(np.mean(scored)), per_activation=tuple(per_activation), skipped=tuple(skipped)
    )


# ---------------------------------------------------------------------------
# calibration


def ecce(scores: np.ndarray, outcomes: np.ndarray) -> tuple[float, float]:
    """Cumulative calibration error: returns (range, max-absolute-deviation).

    C_k = (1/n) * sum_{j<=k} (outcome_j - score_j) over scores sorted
    ascending (ties by original index); MAD = max_k |C_k|; R = max_k C_k -
    min_k C_k over k in {0..n} with C_0 = 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.float64)
    if scores.ndim != 1 or scores.shape != outcomes.shape or scores.size == 0:
        raise ValueError("need aligned, nonempty score/outcome vectors")
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise ValueError("scores must lie in [0, 1]")
    order = np.argsort(scores, kind="stable")
    cum = np.cumsum(outcomes[order] - scores[order]) / scores.size
    mad = float(np.abs(cum).max())
    r = float(max(cum.max(), 0.0) - min(cum.min(), 0.0))
    return r, mad


def ece(scores: np.ndarray, outcomes: np.ndarray, n_bins: int = ECE_BINS, power: int = 1) -> float:
    """Binned calibration error: sum of bin_fraction * |gap|^power."""
    scores = np.asarray(scores, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.float64)
    if n_bins < 1:
        raise ValueError("need at least one bin")
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    if scores.shape != outcomes.shape or scores.size == 0:
        raise ValueError("need aligned, nonempty score/outcome vectors")
    bins = np.clip(np.floor(scores * n_bins).astype(int), 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        mask = bins == b
        count = int(mask.sum())
        if count == 0:
            continue
        gap = abs(float(outcomes[mask].mean()) - float(scores[mask].mean()))
        total += (count / scores.size) * gap**power
    return total


@dataclass(frozen=True)
class CalibrationReport:
    """Per-activation calibration plus the means over activations."""

    ecce_r: float
    ecce_mad: float
    ece1: float
    ece2: float
    per_activation: dict[str, tuple[float, ...]] = field(default_factory=dict)


def calibration_report(
    pred_probas: Sequence[np.ndarray],
    truths: Sequence[np.ndarray],
    n_bins: int = ECE_BINS,
) -> CalibrationReport:
    """Calibration of every activation's positive-class probability, averaged."""
    rs, mads, e1s, e2s = [], [], [], []
    for probas, truth in zip(pred_probas, truths):
        probas = np.asarray(probas, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.int64)
        for j in range(probas.shape[1]):
            scores = np.clip(probas[:, j], 0.0, 1.0)
            outcomes = (truth == j).astype(np.float64)
            r, mad = ecce(scores, outcomes)
            rs.append(r)
            mads.append(mad)
            e1s.append(ece(scores, outcomes, n_bins, power=1))
            e2s.append(ece(scores, outcomes, n_bins, power=2))
    if not rs:
        raise ValueError("no activations to calibrate")
    return CalibrationReport(
        ecce_r=float(np.mean(rs)),
        ecce_mad=float(np.mean(mads)),
        ece1=float(np.mean(e1s)),
        ece2=float(np.mean(e2s)),
        per_activation={
            "ecce_r": tuple(rs),
            "ecce_mad": tuple(mads),
            "ece1": tuple(e1s),
            "ece2": tuple(e2s),
        },
    )


# ---------------------------------------------------------------------------
# DCI disentanglement


def dci_from_importance(importance: np.ndarray) -> float:
    """D = sum_i rho_i D_i with D_i = 1 - H(P_i)/log k over normalized rows."""
    r = np.asarray(importance, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] < 2:
        raise ValueError("importance matrix must be (v_pred, k) with k >= 2")
    if np.any(r < 0):
        raise ValueError("importances must be nonnegative")
    total = r.sum()
    if total == 0:
        raise ValueError("all-zero importance matrix")
    row_sums = r.sum(axis=1)
    rho = row_sums / total
    k = r.shape[1]
    d = 0.0
    for i in range(r.shape[0]):
        if row_sums[i] == 0:
            continue
        p = r[i] / row_sums[i]
        d_i = 1.0 - float(-xlogy(p, p).sum()) / np.log(k)
        d += rho[i] * d_i
    return float(d)


@dataclass(frozen=True)
class DCIResult:
    disentanglement: float
    importance_matrix: np.ndarray  # (v_pred, k)
    constant_concepts: tuple[int, ...]  # concepts whose forest never split


def dci_disentanglement(
    pred_logits: np.ndarray,
    truth_values: np.ndarray,
    config: ForestConfig = ForestConfig(),
    rng: np.random.Generator | int | None = None,
) -> DCIResult:
    """Disentanglement of predicted mean logits w.r.t. ground-truth concepts."""
    x = np.asarray(pred_logits, dtype=np.float64)
    t = np.asarray(truth_values, dtype=np.int64)
    if t.ndim != 2 or t.shape[0] != x.shape[0]:
        raise ValueError("truth_values must be (n, k) aligned with pred_logits")
    if t.shape[1] < 2:
        raise ValueError("DCI needs at least 2 ground-truth concepts")
    gen = as_generator(config.seed if rng is None else rng)
    base = int(gen.integers(0, 2**63 - 1))
    r = np.empty((x.shape[1], t.shape[1]))
    constant: list[int] = []
    for j in range(t.shape[1]):
        result: ImportanceResult = rf_importance(x, t[:, j], config, substream(base, "dci", j))
        r[:, j] = result.importances
        if result.flagged_constant:
            constant.append(j)
    return DCIResult(
        disentanglement=dci_from_importance(r),
        importance_matrix=r,
        constant_concepts=tuple(constant),
    )


# ---------------------------------------------------------------------------
# the combined report


@dataclass(frozen=True)
class MetricReport:
    f1_c: float
    f1_y: float
    roc_auc_c: float
    ecce_r: float
    ecce_mad: float
    ece1: float
    ece2: float
    dci: float | None
    per_concept: dict[str, dict[str, float]]
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["flags"] = list(self.flags)
        return doc


METRIC_REPORT_SCHEMA = {
    "type": "object",
    "required": ["f1_c", "f1_y", "roc_auc_c", "ecce_r", "ecce_mad", "ece1", "ece2", "dci", "per_concept"],
    "properties": {
        "f1_c": {"type": "number"},
        "f1_y": {"type": "number"},
        "roc_auc_c": {"type": "number"},
        "ecce_r": {"type": "number"},
        "ecce_mad": {"type": "number"},
        "ece1": {"type": "number"},
        "ece2": {"type": "number"},
        "dci": {"type": ["number", "null"]},
        "per_concept": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {"type": ["number", "null"]},
            },
        },
        "flags": {"type": "array", "items": {"type": "string"}},
    },
    "additionalProperties": False,
}
