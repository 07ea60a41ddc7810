"""Linear task head over stacked sampled concept scores.

Trained by Monte-Carlo maximum likelihood of the true label: the objective is
sum_n log E_s[softmax(W^T s(z_n) + b)_y_n] with the expectation over GP score
draws estimated by S_train samples per example per step (log of the mean
softmax, not mean of the log). The GPs are frozen inputs here; fitting the
head never touches their state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .concepts import ConceptGP, _softmax, latent_predictives
from .data import EmbeddingDataset
from .rng import as_generator, substream
from .serialize import FORMAT_VERSION, check_version, decode_array, encode_array

_DT = torch.float64

PREDICT_SAMPLES = 256


@dataclass(frozen=True)
class HeadConfig:
    learning_rate: float = 0.001
    patience: int = 3  # early stop after this many non-improving validation epochs
    mc_train_samples: int = 16
    max_epochs: int = 200
    batch_size: int = 512
    seed: int = 0


@dataclass(frozen=True)
class LinearHead:
    weights: np.ndarray  # (v, n_labels)
    bias: np.ndarray  # (n_labels,)

    def __post_init__(self) -> None:
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("head weights must be (v, labels) with a matching bias")


def _check_fitted(gps: list[ConceptGP | None]) -> list[ConceptGP]:
    out = []
    for i, cgp in enumerate(gps):
        if cgp is None:
            raise ValueError(f"concept {i} has no fitted classifier")
        out.append(cgp)
    return out


def _stacked_predictives(gps: list[ConceptGP], z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated per-latent means and variances at queries, each (q, v)."""
    means, variances = zip(*(latent_predictives(cgp, z) for cgp in gps))
    return np.concatenate(means, axis=1), np.concatenate(variances, axis=1)


def block_mixing(gps: list[ConceptGP]) -> np.ndarray:
    """Block-diagonal A = diag(A_1, ..., A_k) over the stacked score vector."""
    v = sum(cgp.cardinality for cgp in gps)
    out = np.zeros((v, v))
    offset = 0
    for cgp in gps:
        c = cgp.cardinality
        out[offset : offset + c, offset : offset + c] = cgp.mixing
        offset += c
    return out


def sample_stacked_scores(
    gps: list[ConceptGP], z: np.ndarray, n_samples: int, rng: np.random.Generator | int | None = None
) -> np.ndarray:
    """Joint draws of the stacked mixed score vector; (S, v) or (q, S, v).

    Each row concatenates one mixed draw per concept (concepts independent),
    in schema order.
    """
    gps = _check_fitted(gps)
    gen = as_generator(rng)
    z_arr = np.asarray(z, dtype=np.float64)
    single = z_arr.ndim == 1
    means, variances = _stacked_predictives(gps, z_arr)
    eps = gen.standard_normal((means.shape[0], n_samples, means.shape[1]))
    raw = means[:, None, :] + np.sqrt(variances)[:, None, :] * eps
    mixed = raw @ block_mixing(gps)
    return mixed[0] if single else mixed


def stacked_mean_logits(gps: list[ConceptGP], z: np.ndarray) -> np.ndarray:
    """Concatenated exact mean logits A_i^T mu_i(z); (q, v) or (v,)."""
    gps = _check_fitted(gps)
    z_arr = np.asarray(z, dtype=np.float64)
    single = z_arr.ndim == 1
    means, _ = _stacked_predictives(gps, z_arr)
    out = means @ block_mixing(gps)
    return out[0] if single else out


def fit_head(
    gps: list[ConceptGP], dataset: EmbeddingDataset, config: HeadConfig = HeadConfig()
) -> LinearHead:
    """Fit W, b on the full training split; early-stops on validation loss.

    Initialization is zeros, so a zero-epoch fit returns the uniform head.
    Validation draws are fixed once per fit so the early-stop signal is not
    resampling noise; the best-validation weights are returned.
    """
    gps = _check_fitted(gps)
    train_idx = dataset.split_indices("train")
    val_idx = dataset.split_indices("val")
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("head fit needs nonempty train and val splits")

    v = sum(cgp.cardinality for cgp in gps)
    n_labels = dataset.n_labels
    weights = np.zeros((v, n_labels))
    bias = np.zeros(n_labels)
    if config.max_epochs == 0:
        return LinearHead(weights=weights, bias=bias)

    mixing = torch.as_tensor(block_mixing(gps), dtype=_DT)
    mean_tr, var_tr = _stacked_predictives(gps, dataset.embeddings[train_idx])
    mean_va, var_va = _stacked_predictives(gps, dataset.embeddings[val_idx])
    t_mean_tr = torch.as_tensor(mean_tr, dtype=_DT)
    t_std_tr = torch.as_tensor(np.sqrt(var_tr), dtype=_DT)
    t_mean_va = torch.as_tensor(mean_va, dtype=_DT)
    t_std_va = torch.as_tensor(np.sqrt(var_va), dtype=_DT)
    y_tr = torch.as_tensor(dataset.task_labels[train_idx], dtype=torch.long)
    y_va = torch.as_tensor(dataset.task_labels[val_idx], dtype=torch.long)

    w = torch.zeros((v, n_labels), dtype=_DT, requires_grad=True)
    b = torch.zeros(n_labels, dtype=_DT, requires_grad=True)
    opt = torch.optim.Adam([w, b], lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)

    def mc_loss(mean: torch.Tensor, std: torch.Tensor, y: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        # scores: (n, S, v) -> log of the MC-mean softmax probability of y
        scores = (mean[:, None, :] + std[:, None, :] * eps) @ mixing
        logits = scores @ w + b
        logp = torch.log_softmax(logits, dim=-1)
        logp_y = logp.gather(2, y[:, None, None].expand(-1, eps.shape[1], 1)).squeeze(2)
        obj = torch.logsumexp(logp_y, dim=1) - np.log(eps.shape[1])
        return -obj.mean()

    val_eps = torch.as_tensor(
        substream(config.seed, "head-val").standard_normal((val_idx.size, config.mc_train_samples, v)),
        dtype=_DT,
    )
    train_rng = substream(config.seed, "head-train")
    order_rng = substream(config.seed, "head-batches")

    best_val = np.inf
    best_state = (w.detach().clone(), b.detach().clone())
    stall = 0
    n_tr = train_idx.size
    for _epoch in range(config.max_epochs):
        eps = torch.as_tensor(
            train_rng.standard_normal((n_tr, config.mc_train_samples, v)), dtype=_DT
        )
        if n_tr <= config.batch_size:
            batches = [np.arange(n_tr)]
        else:
            perm = order_rng.permutation(n_tr)
            batches = [perm[i : i + config.batch_size] for i in range(0, n_tr, config.batch_size)]
        for rows in batches:
            opt.zero_grad()
            loss = mc_loss(t_mean_tr[rows], t_std_tr[rows], y_tr[rows], eps[rows])
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite head training loss")
            loss.backward()
            opt.step()

        with torch.no_grad():
            val_loss = float(mc_loss(t_mean_va, t_std_va, y_va, val_eps))
        if val_loss < best_val:
            best_val = val_loss
            best_state = (w.detach().clone(), b.detach().clone())
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    return LinearHead(weights=best_state[0].numpy().copy(), bias=best_state[1].numpy().copy())


def predict_label(
    gps: list[ConceptGP],
    head: LinearHead,
    z: np.ndarray,
    n_samples: int = PREDICT_SAMPLES,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """MC-averaged label simplex (1/S) sum softmax(W^T s + b); (q, l) or (l,)."""
    single = np.asarray(z).ndim == 1
    scores = sample_stacked_scores(gps, z, n_samples, rng)
    if single:
        scores = scores[None]
    probas = _softmax(scores @ head.weights + head.bias).mean(axis=1)
    return probas[0] if single else probas


def explain(
    gps: list[ConceptGP], head: LinearHead, z: np.ndarray, label: int
) -> list[tuple[str, float]]:
    """Additive per-activation contributions to one label's mean logit.

    contribution_j = W[j, label] * mean_logit_j; the contributions plus
    b[label] sum exactly to the head logit of `label` at the mean scores.
    Sorted by |contribution| descending.
    """
    gps = _check_fitted(gps)
    logits = stacked_mean_logits(gps, np.asarray(z, dtype=np.float64))
    if logits.ndim != 1:
        raise ValueError("explain takes a single query vector")
    contributions = head.weights[:, label] * logits
    names = []
    for cgp in gps:
        names.extend(f"{cgp.concept_name}={j}" for j in range(cgp.cardinality))
    pairs = list(zip(names, contributions.tolist()))
    pairs.sort(key=lambda item: -abs(item[1]))
    return pairs


def head_to_doc(head: LinearHead) -> dict:
    return {
        "kind": "linear_head",
        "version": FORMAT_VERSION,
        "weights": encode_array(head.weights),
        "bias": encode_array(head.bias),
    }


def head_from_doc(doc: dict) -> LinearHead:
    check_version(doc, "linear_head")
    return LinearHead(weights=decode_array(doc["weights"]), bias=decode_array(doc["bias"]))
