"""Optimizer and schedule tests."""

import numpy as np
import pytest

from crossdoc import autodiff as ad
from crossdoc.autodiff import Tensor
from crossdoc.errors import ConfigError, ContractError, NumericError
from crossdoc.optim import AdamW, Schedule, lr_at


class TestSchedule:
    def test_boundary_values(self):
        s = Schedule(total_steps=100, base_lr=2e-5, warmup_frac=0.1)
        assert lr_at(s, 0) == 0.0
        assert lr_at(s, 10) == pytest.approx(2e-5)
        assert lr_at(s, 100) == 0.0

    def test_linear_in_both_phases(self):
        s = Schedule(total_steps=200, base_lr=1.0, warmup_frac=0.1)
        assert lr_at(s, 10) == pytest.approx(0.5)
        assert lr_at(s, 110) == pytest.approx(0.5)

    def test_out_of_range_step(self):
        s = Schedule(total_steps=10, base_lr=1.0)
        with pytest.raises(ContractError):
            lr_at(s, 11)
        with pytest.raises(ContractError):
            lr_at(s, -1)

    def test_validation(self):
        with pytest.raises(ConfigError):
            Schedule(total_steps=0, base_lr=1.0)
        with pytest.raises(ConfigError):
            Schedule(total_steps=10, base_lr=1.0, warmup_frac=1.0)
        with pytest.raises(ConfigError):
            Schedule(total_steps=10, base_lr=0.0)


class TestAdamW:
    def test_zero_grad_zero_decay_leaves_params(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        w.grad = np.zeros(2)
        opt = AdamW({"w": w}, weight_decay=0.0)
        opt.step(0.1)
        np.testing.assert_array_equal(w.data, [1.0, 2.0])

    def test_none_grad_params_are_skipped(self):
        w = Tensor([1.0], requires_grad=True)
        opt = AdamW({"w": w}, weight_decay=0.01)
        opt.step(0.1)
        np.testing.assert_array_equal(w.data, [1.0])

    def test_single_step_on_quadratic(self):
        """One step on f(w) = w^2/2 from w=1 at lr 0.1: bias correction makes
        the first update ~ lr * sign(grad), so w moves to ~0.9."""
        w = Tensor([1.0], requires_grad=True)
        loss = ad.scale(ad.tensor_sum(ad.mul(w, w)), 0.5)
        ad.backward(loss)
        opt = AdamW({"w": w}, weight_decay=0.0)
        opt.step(0.1)
        assert abs(w.data[0] - 0.9) < 1e-6

    def test_decay_only_shrinks_weights(self):
        """With zero gradients, decoupled decay gives w <- w * (1 - lr * d)."""
        w = Tensor([2.0, -4.0], requires_grad=True)
        w.grad = np.zeros(2)
        opt = AdamW({"w": w}, weight_decay=0.5)
        opt.step(0.1)
        np.testing.assert_allclose(w.data, [2.0 * 0.95, -4.0 * 0.95], atol=1e-15)

    def test_non_finite_grad_names_parameter(self):
        w = Tensor([1.0], requires_grad=True)
        w.grad = np.array([np.nan])
        opt = AdamW({"encoder.table": w})
        with pytest.raises(NumericError, match="encoder.table"):
            opt.step(0.1)

    def test_deterministic_trajectories(self):
        def run():
            rng = np.random.default_rng(0)
            w = Tensor(rng.normal(size=4), requires_grad=True)
            opt = AdamW({"w": w})
            history = []
            for step in range(20):
                loss = ad.scale(ad.tensor_sum(ad.mul(w, w)), 0.5)
                tape = ad.backward(loss)
                opt.step(0.05)
                tape.clear()
                history.append(w.data.copy())
            return np.stack(history)

        np.testing.assert_array_equal(run(), run())

    def test_monotone_descent_on_convex_quadratic(self):
        """After warmup, loss on a convex quadratic is nonincreasing within
        200 steps at default settings."""
        rng = np.random.default_rng(1)
        w = Tensor(rng.normal(size=8), requires_grad=True)
        target = rng.normal(size=8)
        schedule = Schedule(total_steps=200, base_lr=0.05, warmup_frac=0.1)
        opt = AdamW({"w": w}, weight_decay=0.0)
        losses = []
        for step in range(schedule.total_steps):
            diff = ad.sub(w, Tensor(target))
            loss = ad.tensor_sum(ad.mul(diff, diff))
            losses.append(loss.item())
            tape = ad.backward(loss)
            opt.step(lr_at(schedule, step))
            tape.clear()
        after_warmup = losses[schedule.warmup_steps:]
        diffs = np.diff(after_warmup)
        assert np.all(diffs <= 1e-12)

    def test_state_round_trip(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        opt = AdamW({"w": w})
        w.grad = np.array([0.1, -0.2])
        opt.step(0.01)
        arrays = {k: v.copy() for k, v in opt.state_arrays().items()}

        w2 = Tensor([1.0, 2.0], requires_grad=True)
        opt2 = AdamW({"w": w2})
        opt2.load_state(opt.step_count, arrays)
        assert opt2.step_count == 1
        np.testing.assert_array_equal(opt2.m["w"], opt.m["w"])
        np.testing.assert_array_equal(opt2.v["w"], opt.v["w"])

    def test_hyperparameter_validation(self):
        w = Tensor([1.0], requires_grad=True)
        with pytest.raises(ConfigError):
            AdamW({"w": w}, betas=(1.0, 0.999))
        with pytest.raises(ConfigError):
            AdamW({"w": w}, eps=0.0)
        with pytest.raises(ConfigError):
            AdamW({"w": w}, weight_decay=-1.0)
