import numpy as np
import pytest

from conftest import rel_err

from dtca import tensor as T
from dtca.diffusion import (
    make_schedule,
    q_sample,
    restrict_schedule,
    reverse_step,
    train_loss,
)
from dtca.exceptions import ParameterError
from dtca.tensor import ComputationRecord, Tensor
from dtca.tokenizer import TokenBatch, patchify, unpatchify


class TestSchedule:
    def test_ddpm_default_golden(self):
        sched = make_schedule(1000, 1e-4, 0.02)
        # golden value computed once from the f64 running product
        assert sched.alpha_bar[-1] == pytest.approx(4.0358e-05, rel=1e-3)

    def test_single_step(self):
        sched = make_schedule(1, 0.5, 0.5)
        assert sched.alpha_bar.tolist() == [0.5]

    def test_constant_beta_closed_form(self):
        b = 0.01
        sched = make_schedule(50, b, b)
        expected = (1 - b) ** np.arange(1, 51)
        assert rel_err(sched.alpha_bar, expected) < 1e-12

    def test_alpha_bar_strictly_decreasing_recursive(self):
        sched = make_schedule(200, 1e-4, 0.05)
        assert np.all(np.diff(sched.alpha_bar) < 0)
        assert np.all((sched.alpha_bar > 0) & (sched.alpha_bar < 1))
        recon = sched.alpha_bar[:-1] * sched.alpha[1:]
        assert np.max(np.abs(recon - sched.alpha_bar[1:])) < 1e-12

    def test_bounds_rejected(self):
        with pytest.raises(ParameterError):
            make_schedule(0, 1e-4, 0.02)
        with pytest.raises(ParameterError):
            make_schedule(10, 0.0, 0.02)
        with pytest.raises(ParameterError):
            make_schedule(10, 0.5, 0.2)
        with pytest.raises(ParameterError):
            make_schedule(10, 0.1, 1.0)

    def test_restricted_schedule_matches_marginals(self):
        sched = make_schedule(100, 1e-4, 0.05)
        sub, t_orig = restrict_schedule(sched, 10)
        assert rel_err(sub.alpha_bar, sched.alpha_bar[t_orig - 1]) < 1e-12
        assert t_orig[0] >= 1 and t_orig[-1] == 100


class TestQSample:
    def test_no_noise_limit(self, rng):
        sched = make_schedule(5, 1e-14, 1e-14)
        x0 = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
        eps = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
        out = q_sample(x0, 5, eps, sched)
        assert rel_err(out.data, x0.data) < 1e-6

    def test_zero_signal(self, rng):
        sched = make_schedule(10, 1e-4, 0.02)
        eps = Tensor(rng.standard_normal((4, 4)), dtype=np.float64)
        out = q_sample(Tensor(np.zeros((4, 4))), 7, eps, sched)
        expected = np.sqrt(1 - sched.alpha_bar[6]) * eps.data
        assert rel_err(out.data, expected) < 1e-12

    def test_t_out_of_range(self, rng):
        sched = make_schedule(10, 1e-4, 0.02)
        x = Tensor(np.zeros((2, 2)))
        with pytest.raises(ParameterError):
            q_sample(x, 0, x, sched)
        with pytest.raises(ParameterError):
            q_sample(x, 11, x, sched)

    def test_marginal_matches_iterated_kernel(self):
        # Monte-Carlo: t-fold application of the one-step kernel agrees
        # with the closed-form marginal in mean and variance.
        sched = make_schedule(10, 0.02, 0.2)
        t = 10
        n = 10_000
        rng = np.random.default_rng(7)
        x0 = 1.7
        chain = np.full(n, x0)
        for step in range(t):
            chain = (
                np.sqrt(sched.alpha[step]) * chain
                + np.sqrt(sched.beta[step]) * rng.standard_normal(n)
            )
        direct = q_sample(
            Tensor(np.full((n,), x0), dtype=np.float64),
            t,
            Tensor(rng.standard_normal(n), dtype=np.float64),
            sched,
        ).data
        se_mean = np.sqrt(1 - sched.alpha_bar[t - 1]) / np.sqrt(n)
        assert abs(chain.mean() - direct.mean()) < 3 * 2 * se_mean
        assert 0.95 < chain.var() / direct.var() < 1.05


class TestReverseStep:
    def test_zero_prediction_reduction(self, rng):
        sched = make_schedule(10, 1e-4, 0.02)
        xt = Tensor(rng.standard_normal((3, 3)), dtype=np.float64)
        zero = Tensor(np.zeros((3, 3)))
        out = reverse_step(xt, zero, 5, zero, sched)
        assert rel_err(out.data, xt.data / np.sqrt(sched.alpha[4])) < 1e-12

    def test_single_step_inversion(self, rng):
        sched = make_schedule(10, 1e-4, 0.02)
        x0 = Tensor(rng.standard_normal((4, 4)), dtype=np.float64)
        eps = Tensor(rng.standard_normal((4, 4)), dtype=np.float64)
        x1 = q_sample(x0, 1, eps, sched)
        back = reverse_step(x1, eps, 1, Tensor(np.zeros((4, 4))), sched)
        assert np.max(np.abs(back.data - x0.data)) < 1e-10

    def test_full_chain_inversion_with_oracle_noise(self, rng):
        # feeding the exact decomposition noise at every step walks back to x0
        sched = make_schedule(10, 0.01, 0.1)
        x0 = rng.standard_normal((4, 4))
        x = q_sample(
            Tensor(x0, dtype=np.float64),
            10,
            Tensor(rng.standard_normal((4, 4)), dtype=np.float64),
            sched,
        ).data
        zero = Tensor(np.zeros((4, 4)))
        for t in range(10, 0, -1):
            bar = sched.alpha_bar[t - 1]
            true_eps = (x - np.sqrt(bar) * x0) / np.sqrt(1 - bar)
            x = reverse_step(
                Tensor(x, dtype=np.float64),
                Tensor(true_eps, dtype=np.float64),
                t, zero, sched,
            ).data
        assert np.max(np.abs(x - x0)) < 1e-6


def _batch(rng, n=4, frames_cond=2, frames_pred=4, side=8, patch=2):
    frames = frames_cond + frames_pred
    values = rng.standard_normal((n, frames, side, side)).astype(np.float32)
    tokens = patchify(Tensor(values), patch)
    return TokenBatch(tokens, frames_cond, frames_pred, patch, side // patch)


class ZeroModel:
    def __init__(self, side=8, frames_pred=4):
        self.shape = (frames_pred, side, side)

    def __call__(self, noised, cond, t):
        b = noised.tokens.shape[0]
        return Tensor(np.zeros((b, *self.shape), dtype=np.float32))


class TrueNoiseModel:
    """Test stub that returns the exact noise it will be scored against."""

    def __init__(self, eps, frames_cond, patch, side):
        self.eps = eps
        self.frames_cond = frames_cond
        self.patch = patch
        self.side = side

    def __call__(self, noised, cond, t):
        tok = Tensor(self.eps[:, :, self.frames_cond:, :])
        return unpatchify(tok, self.patch, self.side, self.side)


class TestTrainLoss:
    def test_zero_model_loss_is_eps_variance(self, rng):
        sched = make_schedule(100, 1e-4, 0.02)
        batch = _batch(rng)
        loss = train_loss(ZeroModel(), batch, sched, rng)
        n = batch.tokens.shape[0] * batch.channels * 4 * 4
        assert abs(loss.item() - 1.0) < 3.0 / np.sqrt(n) + 0.05

    def test_true_noise_model_loss_zero(self, rng):
        sched = make_schedule(100, 1e-4, 0.02)
        batch = _batch(rng)
        eps = rng.standard_normal(batch.tokens.shape).astype(np.float32)
        model = TrueNoiseModel(eps, 2, 2, 8)
        loss = train_loss(model, batch, sched, rng, eps=eps)
        assert loss.item() == 0.0

    def test_loss_ignores_condition_frame_noise(self, rng):
        sched = make_schedule(100, 1e-4, 0.02)
        batch = _batch(rng)
        t = np.full(batch.tokens.shape[0], 37)
        eps = rng.standard_normal(batch.tokens.shape).astype(np.float32)
        model = ZeroModel()
        base = train_loss(model, batch, sched, rng, t=t, eps=eps)
        perturbed = eps.copy()
        perturbed[:, :, : batch.frames_cond, :] += 123.0
        other = train_loss(model, batch, sched, rng, t=t, eps=perturbed)
        assert base.item() == other.item()

    def test_loss_nonnegative_and_differentiable(self, rng):
        sched = make_schedule(50, 1e-4, 0.02)
        batch = _batch(rng, n=2)
        w = Tensor(np.full((1,), 0.1, dtype=np.float32), requires_grad=True)

        class ScaledModel:
            def __call__(self, noised, cond, t):
                tok = T.mul(noised.tokens, T.expand(
                    T.reshape(w, (1, 1, 1, 1)), noised.tokens.shape))
                return unpatchify(tok, 2, 8, 8)

        with ComputationRecord() as record:
            loss = train_loss(ScaledModel(), batch, sched, rng)
        record.backward(loss)
        assert loss.item() >= 0.0
        assert w.grad is not None and abs(w.grad[0]) > 0.0
