import json
from dataclasses import replace

import numpy as np
import pytest

from conceptgp.data import (
    AnnotationLedger,
    BundleError,
    ConceptSchema,
    EmbeddingDataset,
    apply_standardizer,
    fit_standardizer,
    load_bundle,
    read_standardizer,
    standardize_dataset,
    write_bundle,
    write_standardizer,
)
from conceptgp.synth import SynthSpec, synth_generate


def make_dataset(n=10, d=4, k=2):
    rng = np.random.default_rng(0)
    return EmbeddingDataset(
        embeddings=rng.standard_normal((n, d)),
        task_labels=rng.integers(0, 2, size=n),
        schema=ConceptSchema((("shape", 2), ("color", 3))[:k]),
        concept_annotations={(0, 0): 1, (1, 1): 2},
        splits=np.array(["train"] * (n - 4) + ["val"] * 2 + ["test"] * 2),
    )


class TestSchema:
    def test_width_and_offsets(self):
        schema = ConceptSchema((("a", 2), ("b", 3), ("c", 2)))
        assert schema.width == 7
        assert schema.activation_offset(0) == 0
        assert schema.activation_offset(2) == 5
        assert schema.activation_names()[:3] == ["a=0", "a=1", "b=0"]

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            ConceptSchema((("a", 2), ("a", 3)))

    def test_unary_concept_rejected(self):
        with pytest.raises(ValueError, match="cardinality"):
            ConceptSchema((("a", 1),))


class TestDataset:
    def test_annotation_out_of_range_rejected(self):
        ds = make_dataset()
        with pytest.raises(ValueError, match="out of range"):
            replace(ds, concept_annotations={(0, 0): 5})

    def test_annotation_for_missing_sample_rejected(self):
        ds = make_dataset()
        with pytest.raises(ValueError, match="missing sample"):
            replace(ds, concept_annotations={(99, 0): 1})

    def test_split_indices_partition(self):
        ds = make_dataset()
        parts = [ds.split_indices(s) for s in ("train", "val", "test")]
        assert sum(p.size for p in parts) == ds.n
        assert ds.split_indices("test").tolist() == [8, 9]

    def test_concept_truth_reads_annotations(self):
        ds = make_dataset()
        assert ds.concept_truth(np.array([0]), 0).tolist() == [1]
        with pytest.raises(ValueError, match="missing ground-truth"):
            ds.concept_truth(np.array([5]), 0)


class TestLedger:
    def test_duplicate_pair_rejected(self):
        ledger = AnnotationLedger()
        ledger.add(3, 1, 0)
        with pytest.raises(ValueError, match="already annotated"):
            ledger.add(3, 1, 2)

    def test_samples_for_concept_sorted(self):
        ledger = AnnotationLedger()
        for s, v in [(9, 1), (2, 0), (5, 1)]:
            ledger.add(s, 0, v)
        ledger.add(1, 1, 0)
        samples, values = ledger.samples_for_concept(0)
        assert samples.tolist() == [2, 5, 9]
        assert values.tolist() == [0, 1, 1]

    def test_copy_is_independent(self):
        ledger = AnnotationLedger()
        ledger.add(0, 0, 1)
        other = ledger.copy()
        other.add(1, 0, 0)
        assert len(ledger) == 1 and len(other) == 2


class TestStandardizer:
    def test_rows_are_unit_norm(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((50, 6)) * 3 + 1
        s = fit_standardizer(x)
        z = apply_standardizer(s, x)
        assert np.allclose(np.linalg.norm(z, axis=1), 1.0)

    def test_population_deviation(self):
        x = np.array([[0.0, 2.0], [2.0, 2.0]])
        s = fit_standardizer(x)
        # population std of column 0 is 1; constant column floors at 1e-8
        assert s.deviation[0] == pytest.approx(1.0)
        assert s.deviation[1] == pytest.approx(1e-8)

    def test_zero_vector_stays_zero(self):
        x = np.random.default_rng(2).standard_normal((20, 4))
        s = fit_standardizer(x)
        z = apply_standardizer(s, s.mean.copy())  # centered to exactly zero
        assert np.all(z == 0.0)

    def test_single_query_matches_batch(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((30, 5))
        s = fit_standardizer(x)
        batch = apply_standardizer(s, x)
        row = apply_standardizer(s, x[7])
        assert np.array_equal(batch[7], row)

    def test_round_trip_file(self, tmp_path):
        s = fit_standardizer(np.random.default_rng(4).standard_normal((20, 3)))
        write_standardizer(s, tmp_path / "s.json")
        s2 = read_standardizer(tmp_path / "s.json")
        assert np.array_equal(s.mean, s2.mean)
        assert np.array_equal(s.deviation, s2.deviation)


class TestBundle:
    def test_round_trip_bitwise(self, tmp_path):
        ds = synth_generate(SynthSpec(cardinalities=(2, 3), dim=6, n_samples=80, seed=5))
        write_bundle(ds, tmp_path / "b")
        loaded = load_bundle(tmp_path / "b")
        # synthetic embeddings are f32-representable, so the f32 blob is lossless
        assert np.array_equal(loaded.embeddings, ds.embeddings)
        assert np.array_equal(loaded.task_labels, ds.task_labels)
        assert loaded.schema == ds.schema
        assert loaded.concept_annotations == ds.concept_annotations
        assert np.array_equal(loaded.splits, ds.splits)

    def test_checksum_mismatch_rejected(self, tmp_path):
        ds = synth_generate(SynthSpec(cardinalities=(2, 2), dim=4, n_samples=40, seed=5))
        write_bundle(ds, tmp_path / "b")
        blob = tmp_path / "b" / "embeddings.bin"
        raw = bytearray(blob.read_bytes())
        raw[0] ^= 0xFF
        blob.write_bytes(bytes(raw))
        with pytest.raises(BundleError, match="checksum"):
            load_bundle(tmp_path / "b")

    def test_bad_header_names_record(self, tmp_path):
        ds = synth_generate(SynthSpec(cardinalities=(2, 2), dim=4, n_samples=40, seed=5))
        write_bundle(ds, tmp_path / "b")
        labels = tmp_path / "b" / "labels.csv"
        labels.write_text("wrong,header\n0,0\n")
        with pytest.raises(BundleError, match="header"):
            load_bundle(tmp_path / "b")

    def test_out_of_range_annotation_names_record_index(self, tmp_path):
        ds = synth_generate(SynthSpec(cardinalities=(2, 2), dim=4, n_samples=40, seed=5))
        write_bundle(ds, tmp_path / "b")
        ann = tmp_path / "b" / "annotations.csv"
        lines = ann.read_text().splitlines()
        lines[1] = "0,0,7"  # record 0: value out of range
        ann.write_text("\n".join(lines) + "\n")
        with pytest.raises(BundleError, match="record 0"):
            load_bundle(tmp_path / "b")

    def test_unsupported_version_rejected(self, tmp_path):
        ds = synth_generate(SynthSpec(cardinalities=(2, 2), dim=4, n_samples=40, seed=5))
        write_bundle(ds, tmp_path / "b")
        manifest = tmp_path / "b" / "manifest.json"
        doc = json.loads(manifest.read_text())
        doc["version"] = 99
        manifest.write_text(json.dumps(doc))
        with pytest.raises(BundleError, match="version"):
            load_bundle(tmp_path / "b")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(BundleError, match="manifest"):
            load_bundle(tmp_path / "nope")
