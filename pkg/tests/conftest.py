import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable

from conceptgp.concepts import ConceptFitConfig, fit_concept
from conceptgp.data import fit_standardizer, standardize_dataset
from conceptgp.gp import OptSchedule
from conceptgp.rng import substream
from conceptgp.synth import SynthSpec, synth_generate

# short schedule for functional tests; acceptance runs pick their own
FAST_SCHEDULE = OptSchedule(epochs=120, learning_rate=0.02)


@pytest.fixture(scope="session")
def small_dataset():
    """Two concepts (cardinalities 2 and 3), 600 samples, standardized."""
    ds = synth_generate(SynthSpec(cardinalities=(2, 3), dim=8, n_samples=600, seed=7))
    std = fit_standardizer(ds.embeddings[ds.split_indices("train")])
    return standardize_dataset(std, ds)


@pytest.fixture(scope="session")
def annotated_dataset(small_dataset):
    """small_dataset restricted to 60 annotated train samples (the ledger view)."""
    train = small_dataset.split_indices("train")
    chosen = np.sort(substream(3, "fixture-annotations").choice(train, size=60, replace=False))
    visible = {
        (int(s), c): small_dataset.concept_annotations[(int(s), c)]
        for s in chosen
        for c in range(small_dataset.schema.k)
    }
    return replace(small_dataset, concept_annotations=visible)


@pytest.fixture(scope="session")
def fitted_concepts(annotated_dataset):
    """Both concepts fit once and shared across the suite (read-only)."""
    cfg = ConceptFitConfig(schedule=FAST_SCHEDULE, seed=3)
    return [fit_concept(annotated_dataset, ci, cfg) for ci in range(annotated_dataset.schema.k)]
