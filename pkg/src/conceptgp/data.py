"""Embedding datasets with partial concept annotations.

Datasets are immutable after construction: the embedding matrix, task labels,
splits and the ground-truth annotation table never change. The only mutable
structure in the pipeline is the AnnotationLedger (what has been revealed to
the models so far), owned by one experiment run or service session at a time.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .serialize import FORMAT_VERSION, decode_array, dump_json, encode_array, load_json

SPLITS = ("train", "val", "test")
STD_FLOOR = 1e-8

BUNDLE_VERSION = 1


class BundleError(ValueError):
    """Raised when an embedding bundle fails validation."""


@dataclass(frozen=True)
class ConceptSchema:
    """Ordered concept vocabulary: (name, cardinality) per concept."""

    concepts: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        names = [n for n, _ in self.concepts]
        if len(set(names)) != len(names):
            raise ValueError("concept names must be unique")
        for name, card in self.concepts:
            if card < 2:
                raise ValueError(f"concept {name!r} has cardinality {card}; minimum is 2")

    @property
    def k(self) -> int:
        return len(self.concepts)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(c for _, c in self.concepts)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.concepts)

    @property
    def width(self) -> int:
        """Total activation width v = sum of cardinalities."""
        return sum(self.cardinalities)

    def activation_offset(self, concept_index: int) -> int:
        return sum(self.cardinalities[:concept_index])

    def activation_names(self) -> list[str]:
        out = []
        for name, card in self.concepts:
            out.extend(f"{name}={j}" for j in range(card))
        return out


@dataclass(frozen=True)
class EmbeddingDataset:
    """n×d embeddings, task labels, splits, and (ground-truth) annotations.

    concept_annotations maps (sample_index, concept_index) -> value. For
    synthetic data it holds the full ground truth; experiment code never reads
    it directly except through the oracle annotator and test-split metrics.
    """

    embeddings: np.ndarray
    task_labels: np.ndarray
    schema: ConceptSchema
    concept_annotations: dict[tuple[int, int], int]
    splits: np.ndarray  # length-n array of "train"/"val"/"test"
    image_refs: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        n, _ = self.embeddings.shape
        if self.task_labels.shape != (n,):
            raise ValueError(f"expected {n} task labels, found {self.task_labels.shape}")
        if self.splits.shape != (n,):
            raise ValueError(f"expected {n} split tags, found {self.splits.shape}")
        bad = set(np.unique(self.splits)) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags: {sorted(bad)}")
        if self.image_refs is not None and len(self.image_refs) != n:
            raise ValueError("image_refs length must match sample count")
        cards = self.schema.cardinalities
        for (s, c), val in self.concept_annotations.items():
            if not (0 <= s < n):
                raise ValueError(f"annotation references missing sample {s}")
            if not (0 <= c < self.schema.k):
                raise ValueError(f"annotation references missing concept {c} (sample {s})")
            if not (0 <= val < cards[c]):
                raise ValueError(
                    f"annotation value {val} out of range for concept {c} (sample {s})"
                )

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def n_labels(self) -> int:
        return int(self.task_labels.max()) + 1 if self.n else 0

    def split_indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.splits == split)

    def annotation_value(self, sample: int, concept: int) -> int:
        return self.concept_annotations[(sample, concept)]

    def concept_truth(self, indices: np.ndarray, concept: int) -> np.ndarray:
        """Ground-truth values of one concept for the given samples."""
        try:
            return np.array(
                [self.concept_annotations[(int(s), concept)] for s in indices], dtype=np.int64
            )
        except KeyError as e:
            raise ValueError(f"sample missing ground-truth annotation: {e}") from e

    def with_embeddings(self, embeddings: np.ndarray) -> "EmbeddingDataset":
        if embeddings.shape != self.embeddings.shape:
            raise ValueError("replacement embeddings must keep the same shape")
        return replace(self, embeddings=embeddings)


@dataclass
class AnnotationLedger:
    """Monotone record of revealed (sample, concept) -> value annotations."""

    entries: dict[tuple[int, int], int] = field(default_factory=dict)

    def add(self, sample: int, concept: int, value: int) -> None:
        key = (int(sample), int(concept))
        if key in self.entries:
            raise ValueError(f"pair {key} already annotated; ledger entries are immutable")
        self.entries[key] = int(value)

    def has(self, sample: int, concept: int) -> bool:
        return (int(sample), int(concept)) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def samples_for_concept(self, concept: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted sample indices annotated for `concept`, with their values."""
        pairs = sorted((s, v) for (s, c), v in self.entries.items() if c == concept)
        if not pairs:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        samples, values = zip(*pairs)
        return np.array(samples, dtype=np.int64), np.array(values, dtype=np.int64)

    def annotated_concepts(self, sample: int) -> set[int]:
        return {c for (s, c) in self.entries if s == sample}

    def copy(self) -> "AnnotationLedger":
        return AnnotationLedger(dict(self.entries))


# ---------------------------------------------------------------------------
# Standardization


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-score (population variance, floored) then L2 normalize."""

    mean: np.ndarray
    deviation: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.deviation <= 0):
            raise ValueError("deviations must be strictly positive after flooring")


def fit_standardizer(train_embeddings: np.ndarray) -> Standardizer:
    x = np.asarray(train_embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("standardizer needs a 2-D matrix with at least 2 rows")
    mean = x.mean(axis=0)
    # population convention (divide by n), floored for constant columns
    dev = np.maximum(x.std(axis=0), STD_FLOOR)
    return Standardizer(mean=mean, deviation=dev)


def apply_standardizer(s: Standardizer, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    rows = z[None, :] if single else z
    if rows.shape[1] != s.mean.shape[0]:
        raise ValueError(f"expected dimension {s.mean.shape[0]}, found {rows.shape[1]}")
    centered = (rows - s.mean) / s.deviation
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    out = np.divide(centered, norms, out=np.zeros_like(centered), where=norms > 0)
    return out[0] if single else out


def standardize_dataset(s: Standardizer, dataset: EmbeddingDataset) -> EmbeddingDataset:
    return dataset.with_embeddings(apply_standardizer(s, dataset.embeddings))


def write_standardizer(s: Standardizer, path: str | Path) -> None:
    dump_json(
        {
            "kind": "standardizer",
            "version": FORMAT_VERSION,
            "mean": encode_array(s.mean),
            "deviation": encode_array(s.deviation),
        },
        path,
    )


def read_standardizer(path: str | Path) -> Standardizer:
    from .serialize import check_version

    doc = load_json(path)
    check_version(doc, "standardizer")
    return Standardizer(mean=decode_array(doc["mean"]), deviation=decode_array(doc["deviation"]))


# ---------------------------------------------------------------------------
# Bundle I/O
#
# On disk a dataset is a directory: manifest.json describing a raw float32
# blob (row-major, little-endian) plus CSV tables for labels, annotations and
# splits. The manifest carries a sha-256 of the blob.


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_bundle(dataset: EmbeddingDataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    blob = np.ascontiguousarray(dataset.embeddings, dtype="<f4").tobytes()
    (out / "embeddings.bin").write_bytes(blob)

    with open(out / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_index", "label"])
        for i, y in enumerate(dataset.task_labels):
            w.writerow([i, int(y)])

    with open(out / "annotations.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_index", "concept_index", "value"])
        for (s, c) in sorted(dataset.concept_annotations):
            w.writerow([s, c, dataset.concept_annotations[(s, c)]])

    with open(out / "splits.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_index", "split"])
        for i, tag in enumerate(dataset.splits):
            w.writerow([i, tag])

    manifest = {
        "version": BUNDLE_VERSION,
        "n": dataset.n,
        "d": dataset.d,
        "byte_order": "little",
        "dtype": "f32",
        "blob": "embeddings.bin",
        "checksum": hashlib.sha256(blob).hexdigest(),
        "schema": [{"name": n, "cardinality": c} for n, c in dataset.schema.concepts],
        "labels": "labels.csv",
        "annotations": "annotations.csv",
        "splits": "splits.csv",
    }
    if dataset.image_refs is not None:
        with open(out / "image_refs.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_index", "image_ref"])
            for i, ref in enumerate(dataset.image_refs):
                w.writerow([i, ref])
        manifest["image_refs"] = "image_refs.csv"

    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out / "manifest.json"


def _read_csv(path: Path, columns: list[str]) -> list[list[str]]:
    if not path.exists():
        raise BundleError(f"missing bundle file: {path}")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != columns:
        raise BundleError(f"{path.name}: expected header {columns}, found {rows[0] if rows else 'empty file'}")
    return rows[1:]


def load_bundle(manifest_path: str | Path) -> EmbeddingDataset:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise BundleError(f"missing manifest: {path}")
    root = path.parent
    manifest = json.loads(path.read_text())

    if manifest.get("version") != BUNDLE_VERSION:
        raise BundleError(f"unsupported bundle version {manifest.get('version')!r}")
    if manifest.get("dtype") != "f32" or manifest.get("byte_order") != "little":
        raise BundleError("bundle blob must be little-endian f32")

    n, d = int(manifest["n"]), int(manifest["d"])
    blob_path = root / manifest["blob"]
    if not blob_path.exists():
        raise BundleError(f"missing blob: {blob_path}")
    blob = blob_path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["checksum"]:
        raise BundleError("blob checksum mismatch")
    if len(blob) != n * d * 4:
        raise BundleError(f"blob holds {len(blob)} bytes, expected n*d*4 = {n * d * 4}")
    embeddings = np.frombuffer(blob, dtype="<f4").reshape(n, d).astype(np.float64)

    schema = ConceptSchema(tuple((e["name"], int(e["cardinality"])) for e in manifest["schema"]))

    labels = np.zeros(n, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    for idx, row in enumerate(_read_csv(root / manifest["labels"], ["sample_index", "label"])):
        s, y = int(row[0]), int(row[1])
        if not (0 <= s < n):
            raise BundleError(f"labels.csv record {idx}: sample {s} out of range")
        labels[s], seen[s] = y, True
    if not seen.all():
        raise BundleError(f"labels.csv missing sample {int(np.flatnonzero(~seen)[0])}")

    annotations: dict[tuple[int, int], int] = {}
    rows = _read_csv(root / manifest["annotations"], ["sample_index", "concept_index", "value"])
    for idx, row in enumerate(rows):
        s, c, v = int(row[0]), int(row[1]), int(row[2])
        if not (0 <= s < n) or not (0 <= c < schema.k):
            raise BundleError(f"annotations.csv record {idx}: ({s},{c}) out of range")
        if not (0 <= v < schema.cardinalities[c]):
            raise BundleError(f"annotations.csv record {idx}: value {v} out of range for concept {c}")
        annotations[(s, c)] = v

    splits = np.array([""] * n, dtype=object)
    for idx, row in enumerate(_read_csv(root / manifest["splits"], ["sample_index", "split"])):
        s, tag = int(row[0]), row[1]
        if not (0 <= s < n):
            raise BundleError(f"splits.csv record {idx}: sample {s} out of range")
        if tag not in SPLITS:
            raise BundleError(f"splits.csv record {idx}: unknown split {tag!r}")
        splits[s] = tag
    if (splits == "").any():
        raise BundleError(f"splits.csv missing sample {int(np.flatnonzero(splits == '')[0])}")

    image_refs = None
    if "image_refs" in manifest:
        refs = [""] * n
        rows = _read_csv(root / manifest["image_refs"], ["sample_index", "image_ref"])
        for idx, row in enumerate(rows):
            s = int(row[0])
            if not (0 <= s < n):
                raise BundleError(f"image_refs.csv record {idx}: sample {s} out of range")
            refs[s] = row[1]
        image_refs = tuple(refs)

    return EmbeddingDataset(
        embeddings=embeddings,
        task_labels=labels,
        schema=schema,
        concept_annotations=annotations,
        splits=splits.astype(str),
        image_refs=image_refs,
    )
