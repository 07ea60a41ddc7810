"""Per-concept multi-class classifiers.

A concept with cardinality v gets v latent GPs plus a learnable v x v mixing
matrix. Class labels become heteroscedastic regression targets through the
Dirichlet transform (alpha = a_eps + one-hot; moment-matched lognormal):

    sigma2_j = log(1/alpha_j + 1)
    ytilde_j = log(alpha_j) - sigma2_j / 2

so ELBO regression on (ytilde, sigma2) yields calibrated class probabilities
after a softmax over sampled mixed scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.special import xlogy

from .data import EmbeddingDataset
from .gp import (
    FitTrace,
    OptSchedule,
    ParamBank,
    SparseVariationalGP,
    _sq_dists_t,
    bank_elbo,
    fit_bank,
    gp_from_doc,
    gp_to_doc,
    make_gp,
    predict_latent,
)
from .rng import as_generator, substream
from .serialize import FORMAT_VERSION, check_version, decode_array, encode_array

DIRICHLET_NOISE = 0.01
PREDICT_SAMPLES = 256
TRAIN_SAMPLES = 16

_DT = torch.float64


@dataclass(frozen=True)
class DirichletTargets:
    """Regression targets and per-entry noise for one concept's annotations."""

    transformed_targets: np.ndarray  # (n_a, v)
    noise_variances: np.ndarray  # (n_a, v), strictly positive
    dirichlet_noise: float

    def __post_init__(self) -> None:
        if self.transformed_targets.shape != self.noise_variances.shape:
            raise ValueError("targets and noise variances must share shape")
        if np.any(self.noise_variances <= 0):
            raise ValueError("noise variances must be strictly positive")


def dirichlet_transform(label: int, cardinality: int, a_eps: float = DIRICHLET_NOISE) -> tuple[np.ndarray, np.ndarray]:
    """Transform one label into (ytilde, sigma2) rows of length `cardinality`."""
    if not (0 <= label < cardinality):
        raise ValueError(f"label {label} out of range for cardinality {cardinality}")
    if a_eps <= 0:
        raise ValueError("dirichlet noise must be positive")
    alpha = np.full(cardinality, a_eps)
    alpha[label] += 1.0
    sigma2 = np.log(1.0 / alpha + 1.0)
    ytilde = np.log(alpha) - sigma2 / 2.0
    return ytilde, sigma2


def dirichlet_targets(values: np.ndarray, cardinality: int, a_eps: float = DIRICHLET_NOISE) -> DirichletTargets:
    values = np.asarray(values, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() >= cardinality):
        raise ValueError("annotation value out of range")
    onehot = np.zeros((values.shape[0], cardinality))
    onehot[np.arange(values.shape[0]), values] = 1.0
    alpha = a_eps + onehot
    sigma2 = np.log(1.0 / alpha + 1.0)
    ytilde = np.log(alpha) - sigma2 / 2.0
    return DirichletTargets(transformed_targets=ytilde, noise_variances=sigma2, dirichlet_noise=a_eps)


@dataclass(frozen=True)
class ConceptFitConfig:
    schedule: OptSchedule = field(default_factory=OptSchedule)
    dirichlet_noise: float = DIRICHLET_NOISE
    learn_mixing: bool = True
    seed: int = 0  # only consumed by mini-batch shuffles (n > batch_size)


@dataclass(frozen=True)
class ConceptGP:
    """One concept's classifier: v latent GPs plus the mixing matrix."""

    concept_index: int
    concept_name: str
    latent_gps: tuple[SparseVariationalGP, ...]
    mixing: np.ndarray  # (v, v)
    dirichlet_noise: float
    training_samples: np.ndarray  # sample indices the fit used (the ledger cache)
    degenerate_warning: str | None = None
    trace: FitTrace | None = None  # not serialized

    def __post_init__(self) -> None:
        v = len(self.latent_gps)
        if self.mixing.shape != (v, v):
            raise ValueError("mixing matrix must be cardinality x cardinality")

    @property
    def cardinality(self) -> int:
        return len(self.latent_gps)


def latent_predictives(cgp: ConceptGP, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-latent predictive means and variances at queries, each (q, v)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    means = np.empty((z.shape[0], cgp.cardinality))
    variances = np.empty_like(means)
    for j, gp in enumerate(cgp.latent_gps):
        means[:, j], variances[:, j] = predict_latent(gp, z)
    return means, variances


def sample_mixed_scores(
    cgp: ConceptGP, z: np.ndarray, n_samples: int, rng: np.random.Generator | int | None = None
) -> np.ndarray:
    """Joint draws of mixed scores A^T s at queries, shape (q, S, v)."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    gen = as_generator(rng)
    means, variances = latent_predictives(cgp, z)
    eps = gen.standard_normal((means.shape[0], n_samples, cgp.cardinality))
    raw = means[:, None, :] + np.sqrt(variances)[:, None, :] * eps
    return raw @ cgp.mixing


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(
    cgp: ConceptGP,
    z: np.ndarray,
    n_samples: int = PREDICT_SAMPLES,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Monte-Carlo class probabilities (1/S) sum softmax(A^T s); (q, v) or (v,)."""
    single = np.asarray(z).ndim == 1
    mixed = sample_mixed_scores(cgp, z, n_samples, rng)
    probas = _softmax(mixed).mean(axis=1)
    return probas[0] if single else probas


def predict_mean_logits(cgp: ConceptGP, z: np.ndarray) -> np.ndarray:
    """Exact expectation A^T mu(z), no sampling; (q, v) or (v,)."""
    single = np.asarray(z).ndim == 1
    means, _ = latent_predictives(cgp, z)
    out = means @ cgp.mixing
    return out[0] if single else out


def normalized_entropy(p: np.ndarray) -> np.ndarray:
    """H(p)/log(len(p)) clamped into [0, 1]; 0*log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    h = -xlogy(p, p).sum(axis=-1)
    return np.clip(h / np.log(p.shape[-1]), 0.0, 1.0)


def concept_uncertainty(
    cgp: ConceptGP,
    z: np.ndarray,
    n_samples: int = PREDICT_SAMPLES,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray | float:
    """Normalized predictive entropy in [0, 1]."""
    p = predict_proba(cgp, z, n_samples, rng)
    out = normalized_entropy(p)
    return float(out) if np.asarray(z).ndim == 1 else out


# ---------------------------------------------------------------------------
# fitting


def _concept_annotations(dataset: EmbeddingDataset, concept_index: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = sorted(
        (s, v) for (s, c), v in dataset.concept_annotations.items() if c == concept_index
    )
    if not pairs:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    samples, values = zip(*pairs)
    return np.array(samples, dtype=np.int64), np.array(values, dtype=np.int64)


def fit_concept(
    dataset: EmbeddingDataset, concept_index: int, config: ConceptFitConfig = ConceptFitConfig()
) -> ConceptGP:
    """Jointly fit the v latent GPs and the mixing matrix of one concept.

    Trains on exactly the samples annotated for this concept in `dataset`
    (partial annotations are first-class); those samples double as the frozen
    inducing set. `dataset` must already be standardized.
    """
    if not (0 <= concept_index < dataset.schema.k):
        raise ValueError(f"concept index {concept_index} out of range")
    name, cardinality = dataset.schema.concepts[concept_index]
    samples, values = _concept_annotations(dataset, concept_index)
    if samples.size == 0:
        raise ValueError(f"concept {name!r} has no annotations")

    x = dataset.embeddings[samples]
    targets = dirichlet_targets(values, cardinality, config.dirichlet_noise)
    gps = [make_gp(x) for _ in range(cardinality)]
    bank = ParamBank(
        gps,
        learn_hyperparams=config.schedule.learn_hyperparams,
        learn_mean=config.schedule.learn_mean,
    )
    mixing = torch.eye(cardinality, dtype=_DT)
    mixing.requires_grad_(config.learn_mixing)

    trace = fit_bank(
        bank,
        x,
        targets.transformed_targets,
        targets.noise_variances,
        config.schedule,
        mixing=mixing,
        batch_rng=substream(config.seed, "concept-fit-batches", concept_index),
    )

    warning = None
    observed = np.unique(values)
    if observed.size == 1:
        warning = (
            f"concept {name!r} saw a single annotated class ({int(observed[0])}); "
            "predictions will collapse toward it"
        )
    return ConceptGP(
        concept_index=concept_index,
        concept_name=name,
        latent_gps=tuple(bank.write_back(gps)),
        mixing=mixing.detach().numpy().copy(),
        dirichlet_noise=config.dirichlet_noise,
        training_samples=samples,
        degenerate_warning=warning,
        trace=trace,
    )


def concept_elbo_gradients(
    cgp: ConceptGP, inputs: np.ndarray, values: np.ndarray, n_total: int
) -> dict[str, np.ndarray]:
    """Concept-level ELBO gradients, including the mixing matrix.

    Gradient keys mirror the optimizer's parameterization: per-latent arrays
    stacked on axis 0, plus "mixing".
    """
    x = np.asarray(inputs, dtype=np.float64)
    targets = dirichlet_targets(np.asarray(values), cgp.cardinality, cgp.dirichlet_noise)
    bank = ParamBank(list(cgp.latent_gps))
    mixing = torch.tensor(cgp.mixing, dtype=_DT, requires_grad=True)
    dzz = _sq_dists_t(bank.inducing, bank.inducing)
    dzx = _sq_dists_t(bank.inducing, torch.as_tensor(x, dtype=_DT))
    value = bank_elbo(
        bank,
        dzz,
        dzx,
        torch.as_tensor(targets.transformed_targets, dtype=_DT),
        torch.as_tensor(targets.noise_variances, dtype=_DT),
        n_total,
        mixing=mixing,
    )
    value.backward()
    return {
        "log_output_scale": bank.log_alpha.grad.numpy().copy(),
        "log_length_scale": bank.log_rho.grad.numpy().copy(),
        "constant_mean": bank.mean.grad.numpy().copy(),
        "variational_mean": bank.mu.grad.numpy().copy(),
        "variational_chol_raw": bank.chol_raw.grad.numpy().copy(),
        "mixing": mixing.grad.numpy().copy(),
    }


def concept_elbo(cgp: ConceptGP, inputs: np.ndarray, values: np.ndarray, n_total: int) -> float:
    """Concept-level ELBO value (mixed likelihood), for gradient oracles."""
    x = np.asarray(inputs, dtype=np.float64)
    targets = dirichlet_targets(np.asarray(values), cgp.cardinality, cgp.dirichlet_noise)
    bank = ParamBank(list(cgp.latent_gps))
    mixing = torch.tensor(cgp.mixing, dtype=_DT)
    dzz = _sq_dists_t(bank.inducing, bank.inducing)
    dzx = _sq_dists_t(bank.inducing, torch.as_tensor(x, dtype=_DT))
    with torch.no_grad():
        value = bank_elbo(
            bank,
            dzz,
            dzx,
            torch.as_tensor(targets.transformed_targets, dtype=_DT),
            torch.as_tensor(targets.noise_variances, dtype=_DT),
            n_total,
            mixing=mixing,
        )
    return float(value)


# ---------------------------------------------------------------------------
# serialization


def concept_to_doc(cgp: ConceptGP) -> dict:
    return {
        "kind": "concept_gp",
        "version": FORMAT_VERSION,
        "concept_index": cgp.concept_index,
        "concept_name": cgp.concept_name,
        "dirichlet_noise": cgp.dirichlet_noise,
        "mixing": encode_array(cgp.mixing),
        "training_samples": [int(s) for s in cgp.training_samples],
        "degenerate_warning": cgp.degenerate_warning,
        "latent_gps": [gp_to_doc(gp) for gp in cgp.latent_gps],
    }


def concept_from_doc(doc: dict) -> ConceptGP:
    check_version(doc, "concept_gp")
    return ConceptGP(
        concept_index=int(doc["concept_index"]),
        concept_name=doc["concept_name"],
        latent_gps=tuple(gp_from_doc(d) for d in doc["latent_gps"]),
        mixing=decode_array(doc["mixing"]),
        dirichlet_noise=float(doc["dirichlet_noise"]),
        training_samples=np.array(doc["training_samples"], dtype=np.int64),
        degenerate_warning=doc.get("degenerate_warning"),
    )
