import numpy as np
import pytest

from conceptgp.baselines import linear_probe_accuracy
from conceptgp.head import (
    HeadConfig,
    LinearHead,
    block_mixing,
    explain,
    fit_head,
    head_from_doc,
    head_to_doc,
    predict_label,
    sample_stacked_scores,
    stacked_mean_logits,
)
from conceptgp.rng import substream


@pytest.fixture(scope="module")
def trained_head(small_dataset, fitted_concepts):
    return fit_head(list(fitted_concepts), small_dataset, HeadConfig(seed=5))


def one_hot_concepts(ds, idx):
    width = sum(card for _, card in ds.schema.concepts)
    out = np.zeros((idx.size, width))
    offset = 0
    for c, (_, card) in enumerate(ds.schema.concepts):
        out[np.arange(idx.size), offset + ds.concept_truth(idx, c)] = 1.0
        offset += card
    return out


class TestFit:
    def test_zero_epochs_is_uniform(self, small_dataset, fitted_concepts):
        head = fit_head(list(fitted_concepts), small_dataset, HeadConfig(max_epochs=0))
        assert not head.weights.any()
        assert not head.bias.any()
        z = small_dataset.embeddings[:4]
        probas = predict_label(list(fitted_concepts), head, z, 16, substream(0, "uniform"))
        # zero logits make every entry the same float; the MC mean of equal
        # values rounds by one ulp on strided axes, so compare approximately
        assert np.unique(probas).size == 1
        assert probas[0, 0] == pytest.approx(1.0 / small_dataset.n_labels, abs=1e-15)

    def test_learns_linear_label_rule(self, small_dataset, fitted_concepts, trained_head):
        ds = small_dataset
        train, test = ds.split_indices("train"), ds.split_indices("test")
        # the rule is linear in the true activations, so a probe on ground
        # truth is near-perfect; that makes the head bound non-vacuous
        probe_acc = linear_probe_accuracy(
            one_hot_concepts(ds, train), ds.task_labels[train], one_hot_concepts(ds, test), ds.task_labels[test]
        )
        assert probe_acc >= 0.99

        probas = predict_label(list(fitted_concepts), trained_head, ds.embeddings[test], 256, substream(6, "head-eval"))
        acc = float(np.mean(np.argmax(probas, axis=1) == ds.task_labels[test]))
        assert acc >= 0.9

    def test_deterministic(self, small_dataset, fitted_concepts):
        cfg = HeadConfig(max_epochs=20, seed=11)
        a = fit_head(list(fitted_concepts), small_dataset, cfg)
        b = fit_head(list(fitted_concepts), small_dataset, cfg)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)

    def test_leaves_gp_state_untouched(self, small_dataset, fitted_concepts):
        before = [
            (g.variational_mean.copy(), g.variational_chol.copy(), g.kernel)
            for cgp in fitted_concepts
            for g in cgp.latent_gps
        ]
        fit_head(list(fitted_concepts), small_dataset, HeadConfig(max_epochs=5))
        after = [
            (g.variational_mean, g.variational_chol, g.kernel)
            for cgp in fitted_concepts
            for g in cgp.latent_gps
        ]
        for (m0, c0, k0), (m1, c1, k1) in zip(before, after):
            assert np.array_equal(m0, m1)
            assert np.array_equal(c0, c1)
            assert k0 == k1

    def test_unfitted_concept_rejected(self, small_dataset, fitted_concepts):
        with pytest.raises(ValueError, match="no fitted classifier"):
            fit_head([fitted_concepts[0], None], small_dataset)

    def test_requires_validation_split(self, small_dataset, fitted_concepts):
        from dataclasses import replace

        no_val = replace(
            small_dataset,
            splits=np.where(small_dataset.splits == "val", "train", small_dataset.splits),
        )
        with pytest.raises(ValueError, match="train and val"):
            fit_head(list(fitted_concepts), no_val)


class TestStackedScores:
    def test_block_mixing_is_block_diagonal(self, fitted_concepts):
        a = block_mixing(list(fitted_concepts))
        v0 = fitted_concepts[0].cardinality
        assert np.array_equal(a[:v0, :v0], fitted_concepts[0].mixing)
        assert np.array_equal(a[v0:, v0:], fitted_concepts[1].mixing)
        assert not a[:v0, v0:].any()
        assert not a[v0:, :v0].any()

    def test_sample_shapes(self, small_dataset, fitted_concepts):
        v = sum(cgp.cardinality for cgp in fitted_concepts)
        z = small_dataset.embeddings[:3]
        draws = sample_stacked_scores(list(fitted_concepts), z, 7, substream(1, "draws"))
        assert draws.shape == (3, 7, v)
        single = sample_stacked_scores(list(fitted_concepts), z[0], 7, substream(1, "draws"))
        assert single.shape == (7, v)

    def test_mean_logits_match_per_concept(self, small_dataset, fitted_concepts):
        from conceptgp.concepts import predict_mean_logits

        z = small_dataset.embeddings[:5]
        stacked = stacked_mean_logits(list(fitted_concepts), z)
        parts = np.concatenate([predict_mean_logits(cgp, z) for cgp in fitted_concepts], axis=1)
        assert np.array_equal(stacked, parts)


class TestExplain:
    def test_contributions_sum_to_logit(self, small_dataset, fitted_concepts, trained_head):
        z = small_dataset.embeddings[17]
        label = 1
        pairs = explain(list(fitted_concepts), trained_head, z, label)
        logits = stacked_mean_logits(list(fitted_concepts), z)
        expected = float(logits @ trained_head.weights[:, label] + trained_head.bias[label])
        total = sum(c for _, c in pairs) + trained_head.bias[label]
        assert total == pytest.approx(expected, abs=1e-9)

    def test_sorted_by_magnitude(self, small_dataset, fitted_concepts, trained_head):
        pairs = explain(list(fitted_concepts), trained_head, small_dataset.embeddings[3], 0)
        mags = [abs(c) for _, c in pairs]
        assert mags == sorted(mags, reverse=True)
        v = sum(cgp.cardinality for cgp in fitted_concepts)
        assert len(pairs) == v
        names = {name for name, _ in pairs}
        for cgp in fitted_concepts:
            for j in range(cgp.cardinality):
                assert f"{cgp.concept_name}={j}" in names

    def test_rejects_batch_input(self, small_dataset, fitted_concepts, trained_head):
        with pytest.raises(ValueError, match="single query"):
            explain(list(fitted_concepts), trained_head, small_dataset.embeddings[:2], 0)


class TestSerialization:
    def test_round_trip_exact(self, trained_head):
        back = head_from_doc(head_to_doc(trained_head))
        assert np.array_equal(back.weights, trained_head.weights)
        assert np.array_equal(back.bias, trained_head.bias)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="matching bias"):
            LinearHead(weights=np.zeros((4, 3)), bias=np.zeros(2))
