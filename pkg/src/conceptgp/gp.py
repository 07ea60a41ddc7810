"""Single-output sparse variational GP regression.

RBF kernel, constant mean, heteroscedastic Gaussian likelihood, whitened
variational parameterization. The variational state lives in whitened
coordinates: u = L v with L = chol(K_mm + jitter I) and q(v) = N(mu_w,
S_w S_w^T), which keeps the KL term prior-independent:

    predictive mean at x:  m + k_x^T L^{-T} mu_w
    predictive var at x:   k_xx - ||L^{-1} k_x||^2 + ||S_w^T L^{-1} k_x||^2
    KL(q || prior):        0.5 (||mu_w||^2 + ||S_w||_F^2 - m - 2 sum log diag S_w)

Fitting maximizes the scaled ELBO with an adaptive-moment optimizer (decay
0.9/0.999, stabilizer 1e-8) under a plateau schedule. torch supplies autodiff
and the optimizer only; all model math is written out here. Everything runs
in float64.

A "bank" fits several latent GPs sharing one inducing set jointly (batched
over the leading axis); the per-concept classifiers build on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
from scipy.linalg import solve_triangular

from .serialize import FORMAT_VERSION, decode_array, encode_array

INIT_LENGTH_SCALE = 1.41
INIT_OUTPUT_SCALE = 1.0
INIT_CONSTANT_MEAN = 0.0
JITTER_START = 1e-6
JITTER_MAX = 1e-2
FULL_BATCH_LIMIT = 512

_DT = torch.float64


class GPNumericsError(RuntimeError):
    """Cholesky failed even at the maximum jitter (degenerate inducing set)."""


class GPFitError(RuntimeError):
    """Optimization produced a non-finite loss."""


@dataclass(frozen=True)
class RBFKernel:
    """K(a,b) = alpha^2 exp(-||a-b||^2 / (2 rho^2)), parameters stored as logs."""

    log_output_scale: float = math.log(INIT_OUTPUT_SCALE)
    log_length_scale: float = math.log(INIT_LENGTH_SCALE)

    @property
    def output_scale(self) -> float:
        return math.exp(self.log_output_scale)

    @property
    def length_scale(self) -> float:
        return math.exp(self.log_length_scale)


def kernel_eval(k: RBFKernel, a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"kernel_eval expects equal-length vectors, got {a.shape} vs {b.shape}")
    sq = float(np.sum((a - b) ** 2))
    return k.output_scale**2 * math.exp(-sq / (2.0 * k.length_scale**2))


@dataclass(frozen=True)
class OptSchedule:
    """First-order fit schedule with plateau learning-rate decay."""

    learning_rate: float = 0.01
    epochs: int = 8000
    plateau_patience: int = 80
    plateau_decay: float = 0.8
    improvement_threshold: float = 1e-9
    loss_threshold: float = 1e-7
    batch_size: int = FULL_BATCH_LIMIT
    learn_hyperparams: bool = True
    learn_mean: bool = True


@dataclass(frozen=True)
class SparseVariationalGP:
    """One latent GP: kernel, constant mean, inducing set, whitened state."""

    kernel: RBFKernel
    constant_mean: float
    inducing_inputs: np.ndarray  # (m, d)
    variational_mean: np.ndarray  # (m,), whitened
    variational_chol: np.ndarray  # (m, m) lower-triangular, positive diagonal
    jitter: float = JITTER_START

    def __post_init__(self) -> None:
        m = self.inducing_inputs.shape[0]
        if self.variational_mean.shape != (m,):
            raise ValueError("variational mean length must match inducing count")
        if self.variational_chol.shape != (m, m):
            raise ValueError("variational factor must be m x m")
        if np.any(np.diag(self.variational_chol) <= 0):
            raise ValueError("variational factor needs a strictly positive diagonal")

    @property
    def num_inducing(self) -> int:
        return self.inducing_inputs.shape[0]


def make_gp(inducing_inputs: np.ndarray) -> SparseVariationalGP:
    """Prior-initialized GP on a frozen inducing set."""
    z = np.asarray(inducing_inputs, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError("inducing_inputs must be a nonempty (m, d) matrix")
    m = z.shape[0]
    return SparseVariationalGP(
        kernel=RBFKernel(),
        constant_mean=INIT_CONSTANT_MEAN,
        inducing_inputs=z,
        variational_mean=np.zeros(m),
        variational_chol=np.eye(m),
        jitter=JITTER_START,
    )


# ---------------------------------------------------------------------------
# numpy prediction path (no gradients needed)


def _np_chol_jitter(kmm: np.ndarray, jitter: float) -> tuple[np.ndarray, float]:
    j = jitter
    eye = np.eye(kmm.shape[0])
    while True:
        try:
            return np.linalg.cholesky(kmm + j * eye), j
        except np.linalg.LinAlgError:
            if j >= JITTER_MAX:
                raise GPNumericsError(f"Cholesky failed at maximum jitter {JITTER_MAX}") from None
            j *= 10.0


def _sq_dists_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def predict_latent(gp: SparseVariationalGP, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predictive means and variances at query points, shape (q,) each."""
    x = np.asarray(queries, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != gp.inducing_inputs.shape[1]:
        raise ValueError(f"query dimension {x.shape[1]} != inducing dimension {gp.inducing_inputs.shape[1]}")

    alpha2 = gp.kernel.output_scale**2
    rho2 = gp.kernel.length_scale**2
    kmm = alpha2 * np.exp(-_sq_dists_np(gp.inducing_inputs, gp.inducing_inputs) / (2 * rho2))
    L, _ = _np_chol_jitter(kmm, gp.jitter)
    kmq = alpha2 * np.exp(-_sq_dists_np(gp.inducing_inputs, x) / (2 * rho2))

    a = solve_triangular(L, kmq, lower=True)  # (m, q)
    mean = gp.constant_mean + a.T @ gp.variational_mean
    st_a = gp.variational_chol.T @ a
    var = np.maximum(alpha2 - np.sum(a * a, axis=0) + np.sum(st_a * st_a, axis=0), 0.0)
    if single:
        return mean[0], var[0]
    return mean, var


# ---------------------------------------------------------------------------
# torch bank: joint state for B latents sharing one inducing set


def chol_raw_from_factor(L: np.ndarray) -> np.ndarray:
    """Unconstrained parameterization of a positive-diagonal triangular factor."""
    raw = np.tril(L, -1)
    raw[np.diag_indices_from(raw)] = np.log(np.diag(L))
    return raw


def factor_from_chol_raw(raw: np.ndarray) -> np.ndarray:
    L = np.tril(raw, -1)
    L[np.diag_indices_from(L)] = np.exp(np.diag(raw))
    return L


def _realize_chol_t(raw: torch.Tensor) -> torch.Tensor:
    lower = torch.tril(raw, diagonal=-1)
    diag = torch.diag_embed(torch.exp(torch.diagonal(raw, dim1=-2, dim2=-1)))
    return lower + diag


def _sq_dists_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    aa = (a * a).sum(dim=1)[:, None]
    bb = (b * b).sum(dim=1)[None, :]
    return torch.clamp(aa + bb - 2.0 * (a @ b.T), min=0.0)


class ParamBank:
    """Torch parameters for B latent GPs on one shared inducing set."""

    def __init__(
        self,
        gps: Sequence[SparseVariationalGP],
        learn_hyperparams: bool = True,
        learn_mean: bool = True,
    ):
        if not gps:
            raise ValueError("empty bank")
        z0 = gps[0].inducing_inputs
        for gp in gps[1:]:
            if gp.inducing_inputs.shape != z0.shape:
                raise ValueError("bank members must share one inducing set")
        self.inducing = torch.as_tensor(z0, dtype=_DT)
        self.jitter = max(gp.jitter for gp in gps)
        self.log_alpha = torch.tensor(
            [gp.kernel.log_output_scale for gp in gps], dtype=_DT, requires_grad=learn_hyperparams
        )
        self.log_rho = torch.tensor(
            [gp.kernel.log_length_scale for gp in gps], dtype=_DT, requires_grad=learn_hyperparams
        )
        self.mean = torch.tensor(
            [gp.constant_mean for gp in gps], dtype=_DT, requires_grad=learn_mean
        )
        self.mu = torch.tensor(
            np.stack([gp.variational_mean for gp in gps]), dtype=_DT, requires_grad=True
        )
        self.chol_raw = torch.tensor(
            np.stack([chol_raw_from_factor(gp.variational_chol) for gp in gps]),
            dtype=_DT,
            requires_grad=True,
        )

    @property
    def size(self) -> int:
        return self.log_alpha.shape[0]

    def parameters(self) -> list[torch.Tensor]:
        return [t for t in (self.log_alpha, self.log_rho, self.mean, self.mu, self.chol_raw) if t.requires_grad]

    def write_back(self, gps: Sequence[SparseVariationalGP]) -> list[SparseVariationalGP]:
        out = []
        with torch.no_grad():
            chols = _realize_chol_t(self.chol_raw).numpy()
            for b, gp in enumerate(gps):
                out.append(
                    replace(
                        gp,
                        kernel=RBFKernel(
                            log_output_scale=float(self.log_alpha[b]),
                            log_length_scale=float(self.log_rho[b]),
                        ),
                        constant_mean=float(self.mean[b]),
                        variational_mean=self.mu[b].numpy().copy(),
                        variational_chol=chols[b].copy(),
                        jitter=self.jitter,
                    )
                )
        return out


def _chol_escalate_t(kmm: torch.Tensor, jitter: float) -> tuple[torch.Tensor, float]:
    """Batched Cholesky of kmm + jitter I, escalating jitter x10 on failure."""
    m = kmm.shape[-1]
    eye = torch.eye(m, dtype=_DT)
    j = jitter
    while True:
        L, info = torch.linalg.cholesky_ex(kmm + j * eye)
        if int(info.abs().sum()) == 0 and bool(torch.isfinite(L).all()):
            return L, j
        if j >= JITTER_MAX:
            raise GPNumericsError(f"Cholesky failed at maximum jitter {JITTER_MAX}")
        j *= 10.0


def bank_elbo(
    bank: ParamBank,
    dists_zz: torch.Tensor,  # (m, m) squared distances between inducing points
    dists_zx: torch.Tensor,  # (m, n) squared distances inducing -> batch inputs
    ytilde: torch.Tensor,  # (n, B) regression targets
    noise_var: torch.Tensor,  # (n, B) per-entry noise variances
    n_total: int,
    mixing: torch.Tensor | None = None,  # (B, B); None = no mixing (identity)
) -> torch.Tensor:
    """Scaled ELBO: (n_total/|batch|) * expected log-likelihood - KL.

    With a mixing matrix A the likelihood channel c regresses the mixed
    Gaussian (A^T mu(x), diag(A^T diag(var(x)) A)) onto ytilde[:, c].
    """
    n = ytilde.shape[0]
    alpha2 = torch.exp(2.0 * bank.log_alpha)  # (B,)
    rho2 = torch.exp(2.0 * bank.log_rho)

    kmm = alpha2[:, None, None] * torch.exp(-dists_zz[None] / (2.0 * rho2[:, None, None]))
    L, bank.jitter = _chol_escalate_t(kmm, bank.jitter)
    kmx = alpha2[:, None, None] * torch.exp(-dists_zx[None] / (2.0 * rho2[:, None, None]))

    a = torch.linalg.solve_triangular(L, kmx, upper=False)  # (B, m, n)
    mean_f = bank.mean[:, None] + torch.einsum("bmn,bm->bn", a, bank.mu)  # (B, n)
    sw = _realize_chol_t(bank.chol_raw)  # (B, m, m)
    st_a = sw.transpose(1, 2) @ a  # (B, m, n)
    var_f = torch.clamp(alpha2[:, None] - (a * a).sum(dim=1) + (st_a * st_a).sum(dim=1), min=0.0)

    if mixing is None:
        mixed_mean = mean_f.T  # (n, B)
        mixed_var = var_f.T
    else:
        mixed_mean = mean_f.T @ mixing
        mixed_var = var_f.T @ (mixing * mixing)

    log_norm = -0.5 * torch.log(2.0 * math.pi * noise_var) - (ytilde - mixed_mean) ** 2 / (2.0 * noise_var)
    lik = (log_norm - mixed_var / (2.0 * noise_var)).sum()

    m = bank.mu.shape[1]
    sw_logdiag = torch.diagonal(bank.chol_raw, dim1=-2, dim2=-1)  # log diag by construction
    kl = 0.5 * ((bank.mu * bank.mu).sum(dim=1) + (sw * sw).sum(dim=(1, 2)) - m - 2.0 * sw_logdiag.sum(dim=1))
    return (n_total / n) * lik - kl.sum()


@dataclass
class FitTrace:
    """Per-epoch loss (negative ELBO) and the learning-rate path."""

    losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    final_jitter: float = JITTER_START


def fit_bank(
    bank: ParamBank,
    inputs: np.ndarray,  # (n, d) training inputs
    ytilde: np.ndarray,  # (n, B)
    noise_var: np.ndarray,  # (n, B)
    schedule: OptSchedule,
    mixing: torch.Tensor | None = None,
    batch_rng: np.random.Generator | None = None,
) -> FitTrace:
    """Adam ascent on the ELBO; mutates bank (and mixing) in place."""
    x = torch.as_tensor(np.asarray(inputs, dtype=np.float64), dtype=_DT)
    yt = torch.as_tensor(np.asarray(ytilde, dtype=np.float64), dtype=_DT)
    sv = torch.as_tensor(np.asarray(noise_var, dtype=np.float64), dtype=_DT)
    if torch.any(sv <= 0):
        raise ValueError("noise variances must be strictly positive")
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one training point")

    # distances are constants during the fit: inducing points are frozen
    dists_zz = _sq_dists_t(bank.inducing, bank.inducing)
    dists_zx = _sq_dists_t(bank.inducing, x)

    trace = FitTrace(final_jitter=bank.jitter)
    if schedule.epochs == 0:
        return trace

    params = bank.parameters()
    if mixing is not None and mixing.requires_grad:
        params = params + [mixing]
    opt = torch.optim.Adam(params, lr=schedule.learning_rate, betas=(0.9, 0.999), eps=1e-8)

    best = math.inf
    stall = 0
    lr = schedule.learning_rate
    full_batch = n <= schedule.batch_size

    for epoch in range(schedule.epochs):
        if full_batch:
            batch_cols = [slice(None)]
        else:
            if batch_rng is None:
                raise ValueError("mini-batched fit needs a batch_rng for the shuffle")
            perm = batch_rng.permutation(n)
            batch_cols = [perm[i : i + schedule.batch_size] for i in range(0, n, schedule.batch_size)]

        epoch_losses = []
        for cols in batch_cols:
            opt.zero_grad()
            loss = -bank_elbo(bank, dists_zz, dists_zx[:, cols], yt[cols], sv[cols], n, mixing)
            if not torch.isfinite(loss):
                raise GPFitError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))

        epoch_loss = float(np.mean(epoch_losses))
        trace.losses.append(epoch_loss)
        trace.learning_rates.append(lr)

        if epoch_loss < best - schedule.improvement_threshold:
            best = epoch_loss
            stall = 0
        else:
            stall += 1
            if stall >= schedule.plateau_patience:
                lr *= schedule.plateau_decay
                for group in opt.param_groups:
                    group["lr"] = lr
                stall = 0
        if epoch_loss < schedule.loss_threshold:
            break

    trace.final_jitter = bank.jitter
    return trace


# ---------------------------------------------------------------------------
# single-GP public operations


def _single_batch(batch: tuple[np.ndarray, np.ndarray, np.ndarray]):
    x, yt, sv = batch
    x = np.asarray(x, dtype=np.float64)
    yt = np.asarray(yt, dtype=np.float64).reshape(-1, 1)
    sv = np.asarray(sv, dtype=np.float64).reshape(-1, 1)
    if x.shape[0] != yt.shape[0] or x.shape[0] != sv.shape[0]:
        raise ValueError("batch inputs, targets and noise variances must share length")
    if np.any(sv <= 0):
        raise ValueError("noise variances must be strictly positive")
    return x, yt, sv


def elbo(gp: SparseVariationalGP, batch: tuple[np.ndarray, np.ndarray, np.ndarray], n_total: int) -> float:
    """ELBO of one latent GP on a batch (inputs, targets, noise variances)."""
    x, yt, sv = _single_batch(batch)
    bank = ParamBank([gp])
    dzz = _sq_dists_t(bank.inducing, bank.inducing)
    dzx = _sq_dists_t(bank.inducing, torch.as_tensor(x, dtype=_DT))
    with torch.no_grad():
        value = bank_elbo(bank, dzz, dzx, torch.as_tensor(yt, dtype=_DT), torch.as_tensor(sv, dtype=_DT), n_total)
    return float(value)


def elbo_gradients(
    gp: SparseVariationalGP, batch: tuple[np.ndarray, np.ndarray, np.ndarray], n_total: int
) -> dict[str, np.ndarray]:
    """ELBO gradients w.r.t. every unconstrained parameter (autodiff path).

    Keys: log_output_scale, log_length_scale, constant_mean,
    variational_mean, variational_chol_raw. The factor gradient is w.r.t. the
    raw parameterization (log-diagonal), matching what the optimizer updates.
    """
    x, yt, sv = _single_batch(batch)
    bank = ParamBank([gp])
    dzz = _sq_dists_t(bank.inducing, bank.inducing)
    dzx = _sq_dists_t(bank.inducing, torch.as_tensor(x, dtype=_DT))
    value = bank_elbo(bank, dzz, dzx, torch.as_tensor(yt, dtype=_DT), torch.as_tensor(sv, dtype=_DT), n_total)
    value.backward()
    return {
        "log_output_scale": bank.log_alpha.grad.numpy().copy()[0],
        "log_length_scale": bank.log_rho.grad.numpy().copy()[0],
        "constant_mean": bank.mean.grad.numpy().copy()[0],
        "variational_mean": bank.mu.grad.numpy().copy()[0],
        "variational_chol_raw": bank.chol_raw.grad.numpy().copy()[0],
    }


@dataclass
class FitResult:
    gp: SparseVariationalGP
    trace: FitTrace


def fit(
    gp: SparseVariationalGP,
    data: tuple[np.ndarray, np.ndarray, np.ndarray],
    schedule: OptSchedule,
    batch_rng: np.random.Generator | None = None,
) -> FitResult:
    """Fit one latent GP; returns the new state plus the loss trace."""
    x, yt, sv = _single_batch(data)
    bank = ParamBank([gp], learn_hyperparams=schedule.learn_hyperparams, learn_mean=schedule.learn_mean)
    trace = fit_bank(bank, x, yt, sv, schedule, batch_rng=batch_rng)
    return FitResult(gp=bank.write_back([gp])[0], trace=trace)


# ---------------------------------------------------------------------------
# serialization


def gp_to_doc(gp: SparseVariationalGP) -> dict:
    return {
        "kind": "sparse_variational_gp",
        "version": FORMAT_VERSION,
        "log_output_scale": gp.kernel.log_output_scale,
        "log_length_scale": gp.kernel.log_length_scale,
        "constant_mean": gp.constant_mean,
        "jitter": gp.jitter,
        "inducing_inputs": encode_array(gp.inducing_inputs),
        "variational_mean": encode_array(gp.variational_mean),
        "variational_chol": encode_array(gp.variational_chol),
    }


def gp_from_doc(doc: dict) -> SparseVariationalGP:
    from .serialize import check_version

    check_version(doc, "sparse_variational_gp")
    return SparseVariationalGP(
        kernel=RBFKernel(
            log_output_scale=float(doc["log_output_scale"]),
            log_length_scale=float(doc["log_length_scale"]),
        ),
        constant_mean=float(doc["constant_mean"]),
        inducing_inputs=decode_array(doc["inducing_inputs"]),
        variational_mean=decode_array(doc["variational_mean"]),
        variational_chol=decode_array(doc["variational_chol"]),
        jitter=float(doc["jitter"]),
    )
