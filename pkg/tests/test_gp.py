import math
from dataclasses import replace

import numpy as np
import pytest

from conceptgp.gp import (
    JITTER_START,
    GPNumericsError,
    OptSchedule,
    RBFKernel,
    SparseVariationalGP,
    _np_chol_jitter,
    chol_raw_from_factor,
    elbo,
    elbo_gradients,
    factor_from_chol_raw,
    fit,
    gp_from_doc,
    gp_to_doc,
    kernel_eval,
    make_gp,
    predict_latent,
)
from conceptgp.rng import substream
from oracles import central_difference, exact_gp_posterior


def random_state(seed: int, m: int = 5, d: int = 2) -> tuple[SparseVariationalGP, np.random.Generator]:
    """A GP with non-trivial variational state so gradients are informative."""
    rng = substream(seed, "gp-test")
    gp = make_gp(rng.standard_normal((m, d)) * 1.5)
    raw = np.tril(rng.standard_normal((m, m)) * 0.2, -1)
    raw[np.diag_indices(m)] = rng.standard_normal(m) * 0.1
    gp = replace(
        gp,
        kernel=RBFKernel(log_output_scale=0.12, log_length_scale=0.4),
        constant_mean=0.25,
        variational_mean=rng.standard_normal(m) * 0.4,
        variational_chol=factor_from_chol_raw(raw),
    )
    return gp, rng


def random_batch(rng: np.random.Generator, n: int, d: int = 2):
    x = rng.standard_normal((n, d)) * 1.5
    y = rng.standard_normal((n, 1))
    sv = rng.uniform(0.3, 1.5, size=(n, 1))
    return x, y, sv


class TestKernel:
    def test_known_value(self):
        k = RBFKernel()  # alpha 1, rho 1.41
        a, b = np.zeros(3), np.array([1.0, 0.0, 0.0])
        expected = math.exp(-1.0 / (2 * 1.41**2))
        assert kernel_eval(k, a, b) == pytest.approx(expected, abs=1e-15)
        assert kernel_eval(k, a, a) == 1.0

    def test_symmetry(self):
        k = RBFKernel(log_output_scale=0.3, log_length_scale=-0.2)
        rng = substream(0, "kernel")
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        assert kernel_eval(k, a, b) == kernel_eval(k, b, a)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="equal-length"):
            kernel_eval(RBFKernel(), np.zeros(2), np.zeros(3))


class TestPriorState:
    def test_prior_reproduces_mean_and_scale_exactly(self):
        rng = substream(1, "prior")
        gp = make_gp(rng.standard_normal((6, 3)))
        queries = rng.standard_normal((10, 3))
        mean, var = predict_latent(gp, queries)
        # whitened identity factor cancels the inducing correction bitwise
        assert np.all(mean == 0.0)
        assert np.all(var == gp.kernel.output_scale**2)

    def test_prior_with_shifted_mean(self):
        gp = make_gp(np.zeros((3, 2)))
        gp = replace(gp, constant_mean=1.5)
        mean, var = predict_latent(gp, np.ones((4, 2)))
        assert np.all(mean == 1.5)
        assert np.all(var == 1.0)

    def test_single_query_matches_batch(self):
        gp, rng = random_state(2)
        q = rng.standard_normal((5, 2))
        means, variances = predict_latent(gp, q)
        m0, v0 = predict_latent(gp, q[3])
        # BLAS rounds gemv and gemm differently, so only near-bitwise equality holds
        assert means[3] == pytest.approx(m0, abs=1e-12)
        assert variances[3] == pytest.approx(v0, abs=1e-12)

    def test_query_dim_checked(self):
        gp, _ = random_state(3)
        with pytest.raises(ValueError, match="dimension"):
            predict_latent(gp, np.zeros((2, 7)))


class TestElboValue:
    def test_single_point_hand_value(self):
        # prior state, y~ = mean, sigma~^2 = 1, alpha^2 = 1:
        # log N(0|0,1) - var/2 = -log(2 pi)/2 - 1/2, KL = 0
        gp = make_gp(np.zeros((1, 2)))
        value = elbo(gp, (np.zeros((1, 2)), np.zeros(1), np.ones(1)), n_total=1)
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5, abs=1e-12)

    def test_minibatch_scaling(self):
        # n_total/|batch| rescales the likelihood sum, KL is unscaled (0 here)
        gp = make_gp(np.zeros((1, 2)))
        one = elbo(gp, (np.zeros((1, 2)), np.zeros(1), np.ones(1)), n_total=4)
        four = elbo(gp, (np.zeros((4, 2)), np.zeros(4), np.ones(4)), n_total=4)
        assert one == pytest.approx(four, rel=1e-12)

    def test_input_validation(self):
        gp = make_gp(np.zeros((1, 2)))
        with pytest.raises(ValueError, match="share length"):
            elbo(gp, (np.zeros((2, 2)), np.zeros(1), np.ones(1)), 1)
        with pytest.raises(ValueError, match="strictly positive"):
            elbo(gp, (np.zeros((1, 2)), np.zeros(1), np.zeros(1)), 1)


class TestGradients:
    def flatten(self, gp: SparseVariationalGP) -> np.ndarray:
        m = gp.num_inducing
        raw = chol_raw_from_factor(gp.variational_chol)
        return np.concatenate(
            [
                [gp.kernel.log_output_scale, gp.kernel.log_length_scale, gp.constant_mean],
                gp.variational_mean,
                raw[np.tril_indices(m)],
            ]
        )

    def rebuild(self, gp: SparseVariationalGP, theta: np.ndarray) -> SparseVariationalGP:
        m = gp.num_inducing
        raw = np.zeros((m, m))
        raw[np.tril_indices(m)] = theta[3 + m :]
        return replace(
            gp,
            kernel=RBFKernel(log_output_scale=theta[0], log_length_scale=theta[1]),
            constant_mean=theta[2],
            variational_mean=theta[3 : 3 + m].copy(),
            variational_chol=factor_from_chol_raw(raw),
        )

    def test_autodiff_matches_central_differences(self):
        gp, rng = random_state(11, m=4)
        batch = random_batch(rng, 6)
        grads = elbo_gradients(gp, batch, n_total=6)
        m = gp.num_inducing
        analytic = np.concatenate(
            [
                [grads["log_output_scale"], grads["log_length_scale"], grads["constant_mean"]],
                grads["variational_mean"],
                grads["variational_chol_raw"][np.tril_indices(m)],
            ]
        )
        numeric = central_difference(lambda t: elbo(self.rebuild(gp, t), batch, 6), self.flatten(gp))
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)
        assert rel.max() < 1e-4, f"worst relative error {rel.max():.2e}"

    def test_upper_triangle_carries_no_gradient(self):
        gp, rng = random_state(12, m=4)
        grads = elbo_gradients(gp, random_batch(rng, 5), n_total=5)
        upper = np.triu_indices(gp.num_inducing, 1)
        assert np.all(grads["variational_chol_raw"][upper] == 0.0)


class TestFit:
    def test_fit_improves_elbo(self):
        gp, rng = random_state(21, m=6)
        gp = make_gp(gp.inducing_inputs)  # start at the prior
        batch = random_batch(rng, 6)
        before = elbo(gp, batch, 6)
        result = fit(gp, batch, OptSchedule(epochs=200, learning_rate=0.05))
        after = elbo(result.gp, batch, 6)
        assert after > before
        assert len(result.trace.losses) <= 200
        assert result.trace.losses[0] == pytest.approx(-before, rel=1e-9)

    def test_zero_epochs_returns_same_state(self):
        gp, rng = random_state(22)
        result = fit(gp, random_batch(rng, 4), OptSchedule(epochs=0))
        assert result.trace.losses == []
        assert np.array_equal(result.gp.variational_mean, gp.variational_mean)
        assert np.array_equal(result.gp.variational_chol, gp.variational_chol)

    def test_fit_deterministic(self):
        gp, rng = random_state(23)
        batch = random_batch(rng, 5)
        schedule = OptSchedule(epochs=50, learning_rate=0.05)
        a = fit(gp, batch, schedule).gp
        b = fit(gp, batch, schedule).gp
        assert np.array_equal(a.variational_mean, b.variational_mean)
        assert np.array_equal(a.variational_chol, b.variational_chol)
        assert a.kernel == b.kernel

    def test_plateau_decays_learning_rate(self):
        gp, rng = random_state(24, m=3)
        batch = random_batch(rng, 3)
        # a huge improvement threshold makes every epoch a stall, so the rate
        # must decay by 0.8 exactly every `plateau_patience` epochs
        schedule = OptSchedule(
            epochs=25, learning_rate=0.05, plateau_patience=10, improvement_threshold=1e9
        )
        trace = fit(gp, batch, schedule).trace
        # epoch 0 always improves on best=inf; the stall counter then walks to
        # patience at epoch 10, decaying the rate used from epoch 11 on
        assert trace.learning_rates[:11] == [0.05] * 11
        assert trace.learning_rates[11] == pytest.approx(0.05 * 0.8)
        assert trace.learning_rates[21] == pytest.approx(0.05 * 0.8**2)

    def test_minibatch_needs_rng(self):
        gp, rng = random_state(25, m=4)
        x, y, sv = random_batch(rng, 30)
        schedule = OptSchedule(epochs=2, batch_size=8)
        with pytest.raises(ValueError, match="batch_rng"):
            fit(gp, (x, y, sv), schedule)
        result = fit(gp, (x, y, sv), schedule, batch_rng=substream(0, "mb"))
        assert len(result.trace.losses) == 2

    def test_frozen_hyperparameters_stay_put(self):
        gp, rng = random_state(26)
        batch = random_batch(rng, 5)
        schedule = OptSchedule(epochs=30, learn_hyperparams=False, learn_mean=False)
        out = fit(gp, batch, schedule).gp
        assert out.kernel == gp.kernel
        assert out.constant_mean == gp.constant_mean
        assert not np.array_equal(out.variational_mean, gp.variational_mean)

    def test_converged_variational_fit_matches_exact_gp(self):
        # inducing = training inputs makes the sparse model exact at optimum
        rng = substream(27, "oracle")
        x = rng.standard_normal((7, 2))
        y = np.sin(x[:, 0]) + 0.3 * x[:, 1]
        noise = 0.1
        gp = make_gp(x)
        schedule = OptSchedule(
            epochs=4000, learning_rate=0.05, learn_hyperparams=False, learn_mean=False
        )
        result = fit(gp, (x, y, np.full(x.shape[0], noise)), schedule)
        queries = rng.standard_normal((20, 2))
        mean, var = predict_latent(result.gp, queries)
        exact_mean, exact_var = exact_gp_posterior(
            x, y, queries, gp.kernel.output_scale, gp.kernel.length_scale, noise
        )
        assert np.abs(mean - exact_mean).max() < 1e-3
        assert np.abs(var - exact_var).max() < 1e-3


class TestJitter:
    def test_escalation_recovers_near_indefinite_matrix(self):
        k = np.array([[1.0, 1.000005], [1.000005, 1.0]])  # eigenvalue -5e-6
        L, j = _np_chol_jitter(k, JITTER_START)
        assert j > JITTER_START
        assert np.allclose(L @ L.T, k + j * np.eye(2))

    def test_gives_up_at_maximum(self):
        k = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite beyond any allowed jitter
        with pytest.raises(GPNumericsError, match="maximum jitter"):
            _np_chol_jitter(k, JITTER_START)


class TestSerialization:
    def test_round_trip_exact(self):
        gp, _ = random_state(31)
        back = gp_from_doc(gp_to_doc(gp))
        assert back.kernel == gp.kernel
        assert back.constant_mean == gp.constant_mean
        assert back.jitter == gp.jitter
        assert np.array_equal(back.inducing_inputs, gp.inducing_inputs)
        assert np.array_equal(back.variational_mean, gp.variational_mean)
        assert np.array_equal(back.variational_chol, gp.variational_chol)

    def test_wrong_kind_rejected(self):
        gp, _ = random_state(32)
        doc = gp_to_doc(gp)
        doc["kind"] = "other"
        with pytest.raises(ValueError, match="expected serialized"):
            gp_from_doc(doc)
