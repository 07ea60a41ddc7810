"""Synthetic embedding datasets.

Desk-scale substitute for real encoder embeddings: every concept owns a
contiguous block of dimensions; each of its values gets a block center drawn
once from the seeded generator, so each concept-value combination has a fixed
Gaussian cluster center (the concatenation). Samples scatter around their
combination's center with spread sigma_c, optionally scaled per concept to
make individual concepts harder. The task label is a fixed random linear rule
over the one-hot concept vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ConceptSchema, EmbeddingDataset
from .rng import substream


@dataclass(frozen=True)
class SynthSpec:
    cardinalities: tuple[int, ...] = (2, 2, 2, 3, 3)
    dim: int = 16
    n_samples: int = 5000
    cluster_spread: float = 0.3
    # per-concept multiplier on cluster_spread; None = all ones
    noise_scale: tuple[float, ...] | None = None
    n_labels: int = 3
    label_rule: str = "linear"
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        k = len(self.cardinalities)
        if k < 1 or any(c < 2 for c in self.cardinalities):
            raise ValueError("need >= 1 concepts, each with cardinality >= 2")
        if self.dim < k:
            raise ValueError(f"dim {self.dim} < number of concepts {k}")
        if self.n_labels < 2:
            raise ValueError("n_labels must be >= 2")
        if self.noise_scale is not None and len(self.noise_scale) != k:
            raise ValueError("noise_scale must have one entry per concept")
        if self.label_rule != "linear":
            raise ValueError(f"unknown label rule {self.label_rule!r}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ValueError("split fractions must be nonnegative and sum to 1")

    @property
    def k(self) -> int:
        return len(self.cardinalities)

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthSpec":
        kwargs = dict(obj)
        for key in ("cardinalities", "noise_scale", "split_fractions"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _dim_blocks(spec: SynthSpec) -> list[np.ndarray]:
    """Partition the dim axis into k near-equal contiguous blocks."""
    edges = np.linspace(0, spec.dim, spec.k + 1).round().astype(int)
    return [np.arange(edges[i], edges[i + 1]) for i in range(spec.k)]


def rule_weights(spec: SynthSpec) -> np.ndarray:
    """The label rule's weight matrix over activations, shape (v, n_labels).

    Recomputable from the spec alone so analyses can compare explanations
    against the generating rule.
    """
    v = sum(spec.cardinalities)
    return substream(spec.seed, "synth", "rule").normal(size=(v, spec.n_labels))


def synth_generate(spec: SynthSpec) -> EmbeddingDataset:
    k = spec.k
    blocks = _dim_blocks(spec)
    scales = np.array(spec.noise_scale if spec.noise_scale is not None else [1.0] * k)

    # one center per concept value, per concept block
    centers = [
        substream(spec.seed, "synth", "centers", i).normal(size=(card, len(blocks[i])))
        for i, card in enumerate(spec.cardinalities)
    ]

    value_rng = substream(spec.seed, "synth", "values")
    values = np.column_stack(
        [value_rng.integers(0, card, size=spec.n_samples) for card in spec.cardinalities]
    )

    noise_rng = substream(spec.seed, "synth", "noise")
    embeddings = np.empty((spec.n_samples, spec.dim))
    for i in range(k):
        block = blocks[i]
        eps = noise_rng.normal(size=(spec.n_samples, len(block)))
        embeddings[:, block] = centers[i][values[:, i]] + spec.cluster_spread * scales[i] * eps
    # keep only what the f32 bundle format can represent, so that writing a
    # bundle and reloading it reproduces the dataset bitwise
    embeddings = embeddings.astype(np.float32).astype(np.float64)

    weights = rule_weights(spec)
    onehot = np.zeros((spec.n_samples, sum(spec.cardinalities)))
    offset = 0
    for i, card in enumerate(spec.cardinalities):
        onehot[np.arange(spec.n_samples), offset + values[:, i]] = 1.0
        offset += card
    scores = onehot @ weights
    # argmax with ties broken toward the lowest label index
    labels = np.argmax(scores, axis=1).astype(np.int64)

    split_rng = substream(spec.seed, "synth", "splits")
    order = split_rng.permutation(spec.n_samples)
    n_train = int(round(spec.split_fractions[0] * spec.n_samples))
    n_val = int(round(spec.split_fractions[1] * spec.n_samples))
    splits = np.array(["test"] * spec.n_samples, dtype=object)
    splits[order[:n_train]] = "train"
    splits[order[n_train : n_train + n_val]] = "val"

    schema = ConceptSchema(tuple((f"concept_{i}", c) for i, c in enumerate(spec.cardinalities)))
    annotations = {
        (s, i): int(values[s, i]) for s in range(spec.n_samples) for i in range(k)
    }
    return EmbeddingDataset(
        embeddings=embeddings,
        task_labels=labels,
        schema=schema,
        concept_annotations=annotations,
        splits=splits.astype(str),
    )
