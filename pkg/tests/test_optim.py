"""Loss, optimizer, and schedule tests against hand-stepped oracles."""

import math

import numpy as np
import pytest

from toad import tensor as tc
from toad import optim as op
from toad.errors import ConfigError, LabelError, TrainingAbortedError

from oracles import adamw_scalar, cross_entropy_direct, finite_difference, max_rel_err


class TestCeLoss:
    def test_uniform_logits_log_c(self):
        z = tc.Tensor(np.full((3, 6), 0.37))
        loss = op.ce_loss(z, np.array([0, 3, 5]), logit_scale=100.0)
        np.testing.assert_allclose(loss.item(), math.log(6), rtol=1e-6)

    def test_saturated_cosines_near_zero_loss(self):
        with tc.use_dtype(np.float64):
            z = tc.Tensor(np.array([[1.0, -1.0]]))
            loss = op.ce_loss(z, np.array([0]), logit_scale=100.0)
        assert 0.0 <= loss.item() < 1e-12

    def test_matches_direct_oracle_and_finite_differences(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((5, 4))
        y = rng.integers(0, 4, size=5)
        with tc.use_dtype(np.float64):
            zt = tc.Tensor(z, requires_grad=True)
            with tc.GradTape() as tape:
                loss = op.ce_loss(zt, y, logit_scale=2.0)
            tape.backward(loss)
            np.testing.assert_allclose(
                loss.item(), cross_entropy_direct(z, y, 2.0), atol=1e-6)
            numeric = finite_difference(
                lambda: op.ce_loss(tc.Tensor(z), y, logit_scale=2.0).item(), z)
            assert max_rel_err(zt.grad, numeric) < 1e-4

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            z = tc.Tensor(rng.standard_normal((4, 5)))
            y = rng.integers(0, 5, size=4)
            assert op.ce_loss(z, y, logit_scale=30.0).item() >= 0.0

    def test_out_of_range_label_reports_row(self):
        z = tc.Tensor(np.zeros((2, 3)))
        with pytest.raises(LabelError, match="row 1"):
            op.ce_loss(z, np.array([0, 5]), logit_scale=1.0)

    def test_undefined_rejected_unless_allowed(self):
        z = tc.Tensor(np.zeros((2, 3)))
        with pytest.raises(LabelError):
            op.ce_loss(z, np.array([0, -1]), logit_scale=1.0)
        loss = op.ce_loss(z, np.array([0, -1]), logit_scale=1.0, allow_undefined=True)
        np.testing.assert_allclose(loss.item(), math.log(3), rtol=1e-6)


class TestTotalLoss:
    def test_zero_weight_is_exactly_current_term(self):
        rng = np.random.default_rng(2)
        z = tc.Tensor(rng.standard_normal((4, 3)))
        zf = tc.Tensor(rng.standard_normal((4, 3)))
        y = rng.integers(0, 3, size=4)
        cfg = op.LossConfig(future_weight=0.0, logit_scale=10.0)
        total = op.total_loss(z, zf, y, y, cfg)
        only = op.ce_loss(z, y, 10.0)
        assert total.item() == only.item()

    def test_equal_terms_scale_by_one_point_five(self):
        rng = np.random.default_rng(3)
        arr = rng.standard_normal((4, 3))
        y = rng.integers(0, 3, size=4)
        cfg = op.LossConfig(future_weight=0.5, logit_scale=10.0)
        total = op.total_loss(tc.Tensor(arr), tc.Tensor(arr.copy()), y, y.copy(), cfg)
        single = op.ce_loss(tc.Tensor(arr), y, 10.0).item()
        np.testing.assert_allclose(total.item(), 1.5 * single, rtol=1e-6)

    def test_default_future_weight_is_half(self):
        assert op.LossConfig().future_weight == 0.5

    def test_inconsistent_future_availability(self):
        z = tc.Tensor(np.zeros((2, 3)))
        y = np.array([0, 1])
        with pytest.raises(ConfigError):
            op.total_loss(z, tc.Tensor(np.zeros((2, 3))), y, None, op.LossConfig())
        with pytest.raises(ConfigError):
            op.total_loss(z, None, y, y, op.LossConfig())

    def test_undefined_future_rows_add_nothing(self):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((3, 4))
        zf = rng.standard_normal((3, 4))
        y = np.array([0, 1, 2])
        cfg = op.LossConfig(future_weight=0.5, logit_scale=5.0)
        all_undef = op.total_loss(tc.Tensor(z), tc.Tensor(zf), y,
                                  np.array([-1, -1, -1]), cfg)
        assert all_undef.item() == op.ce_loss(tc.Tensor(z), y, 5.0).item()


class TestAdamW:
    def test_zero_grad_no_decay_leaves_params(self):
        p = tc.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        before = p.data.copy()
        op.adamw_step([("p", p)], op.OptimState(weight_decay=0.0), lr=0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_zero_grad_decay_scales(self):
        p = tc.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        op.adamw_step([("p", p)], op.OptimState(weight_decay=0.2), lr=0.1)
        np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * (1 - 0.1 * 0.2), rtol=1e-12)

    def test_scalar_trajectory_matches_oracle(self):
        with tc.use_dtype(np.float64):
            grads = [0.3, -0.1, 0.25, 0.8, -0.4, 0.0, 0.05]
            expected = adamw_scalar(grads, lr=0.01, weight_decay=0.2, p0=1.0)
            p = tc.Tensor(np.array(1.0), requires_grad=True)
            state = op.OptimState(weight_decay=0.2)
            got = []
            for g in grads:
                p.grad = np.asarray(float(g))
                op.adamw_step([("p", p)], state, lr=0.01)
                got.append(p.item())
            np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_missing_grad_skipped(self):
        p = tc.Tensor(np.ones(3), requires_grad=True)
        op.adamw_step([("p", p)], op.OptimState(weight_decay=0.2), lr=0.1)
        np.testing.assert_array_equal(p.data, np.ones(3))

    def test_non_finite_gradient_aborts_with_step(self):
        p = tc.Tensor(np.ones(2), requires_grad=True)
        p.grad = np.array([1.0, np.nan])
        state = op.OptimState()
        state.step = 6
        with pytest.raises(TrainingAbortedError, match="step 7"):
            op.adamw_step([("p", p)], state, lr=0.1)

    def test_state_records_round_trip(self):
        p = tc.Tensor(np.ones(4), requires_grad=True)
        state = op.OptimState()
        for i in range(3):
            p.grad = np.full(4, 0.1 * (i + 1))
            op.adamw_step([("p", p)], state, lr=1e-3)
        restored = op.OptimState()
        restored.load_records(state.records())
        assert restored.step == state.step
        np.testing.assert_array_equal(restored.moments["p"][0], state.moments["p"][0])
        np.testing.assert_array_equal(restored.moments["p"][1], state.moments["p"][1])


class TestSchedule:
    def test_boundary_and_landmark_values(self):
        state = op.OptimState(lr_base=5e-5, warmup_epochs=5, total_epochs=30)
        assert op.lr_at(5.0, state) == 5e-5
        assert abs(op.lr_at(30.0, state)) < 1e-12
        assert abs(op.lr_at(17.5, state) - 2.5e-5) < 1e-12
        assert op.lr_at(0.0, state) == 0.0

    def test_warmup_is_linear(self):
        state = op.OptimState(lr_base=1.0, warmup_epochs=5, total_epochs=30)
        for e in (0.5, 1.0, 2.5, 4.999):
            np.testing.assert_allclose(op.lr_at(e, state), e / 5.0, rtol=1e-12)

    def test_continuity_on_fine_grid(self):
        # A discontinuity shows up as a grid jump far beyond what the
        # steepest smooth slope (the warmup ramp) can produce in one step.
        state = op.OptimState(lr_base=5e-5, warmup_epochs=5, total_epochs=30)
        step = 1e-4
        grid = np.arange(0.0, 30.0 + 1e-9, step)
        values = np.array([op.lr_at(float(e), state) for e in grid])
        slope_bound = state.lr_base * max(
            1.0 / state.warmup_epochs,
            math.pi / (2 * (state.total_epochs - state.warmup_epochs)))
        max_jump = np.abs(np.diff(values)).max()
        assert max_jump <= 1.01 * slope_bound * step

    def test_domain_checked(self):
        state = op.OptimState()
        with pytest.raises(ConfigError):
            op.lr_at(-0.1, state)
        with pytest.raises(ConfigError):
            op.lr_at(31.0, state)
