"""Kernel-level tests: spot values, reference oracles, gradient checks."""

import numpy as np
import pytest

from toad import tensor as tc
from toad.errors import DegenerateInputError, LabelError, NumericsError, ShapeError

from oracles import (
    cross_entropy_direct,
    finite_difference,
    matmul_loops,
    max_rel_err,
    softmax_direct,
)


def f64(*shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) * scale


def check_kernel_grad(make_loss, arrays, h=1e-5, tol=1e-4):
    """Gradient-check `make_loss` (builds a scalar Tensor from `arrays`,
    which are wrapped as requires-grad tensors) against central differences."""
    with tc.use_dtype(np.float64):
        params = {k: tc.Tensor(v, requires_grad=True) for k, v in arrays.items()}
        with tc.GradTape() as tape:
            loss = make_loss(params)
        tape.backward(loss)
        for name, arr in arrays.items():
            def fn(name=name):
                fresh = {k: tc.Tensor(v) for k, v in arrays.items()}
                return make_loss(fresh).item()
            numeric = finite_difference(fn, arr, h=h)
            err = max_rel_err(params[name].grad, numeric)
            assert err < tol, f"{name}: max rel err {err}"


def weighted_sum(out, weights):
    flat = tc.reshape(out, (1, out.data.size))
    w = tc.Tensor(weights.reshape(out.data.size, 1))
    return tc.reshape(tc.matmul(flat, w), ())


class TestMatmul:
    def test_identity(self):
        x = f64(3, 5, seed=1)
        out = tc.matmul(tc.Tensor(np.eye(3)), tc.Tensor(x))
        np.testing.assert_allclose(out.data, x)

    def test_two_by_two(self):
        a = tc.Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = tc.matmul(a, tc.Tensor(np.eye(2, dtype=np.float32)))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_matches_triple_loop(self):
        a, b = f64(5, 4, seed=2), f64(4, 3, seed=3)
        out = tc.matmul(tc.Tensor(a), tc.Tensor(b))
        np.testing.assert_allclose(out.data, matmul_loops(a, b), atol=1e-6)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            tc.matmul(tc.Tensor(np.zeros((2, 3))), tc.Tensor(np.zeros((2, 3))))

    def test_gradient(self):
        w = f64(4, 3, seed=5, scale=0.3)
        check_kernel_grad(
            lambda p: weighted_sum(tc.matmul(p["a"], p["b"]), w),
            {"a": f64(4, 2, seed=6), "b": f64(2, 3, seed=7)},
        )

    def test_batched_gradient(self):
        w = f64(2, 3, 3, seed=8, scale=0.3)
        check_kernel_grad(
            lambda p: weighted_sum(tc.matmul(p["a"], p["b"]), w),
            {"a": f64(2, 3, 4, seed=9), "b": f64(2, 4, 3, seed=10)},
        )


class TestSoftmax:
    def test_uniform(self):
        out = tc.softmax(tc.Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-6)

    def test_shift_invariance(self):
        x = f64(7, seed=11)
        a = tc.softmax(tc.Tensor(x)).data
        b = tc.softmax(tc.Tensor(x + 123.5)).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_direct_formula(self):
        with tc.use_dtype(np.float64):
            out = tc.softmax(tc.Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out.data, softmax_direct([1, 2, 3]), atol=1e-12)

    def test_rows_sum_to_one_in_open_interval(self):
        x = f64(6, 9, seed=12, scale=4.0)
        out = tc.softmax(tc.Tensor(x), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
        assert (out > 0).all() and (out < 1).all()

    def test_gradient(self):
        w = f64(3, 5, seed=13, scale=0.5)
        check_kernel_grad(
            lambda p: weighted_sum(tc.softmax(p["x"], axis=-1), w),
            {"x": f64(3, 5, seed=14)},
        )


class TestLayerNorm:
    def test_constant_row_is_zeroed(self):
        x = tc.Tensor(np.full((2, 8), 3.7))
        out = tc.layer_norm(x, tc.Tensor(np.ones(8)), tc.Tensor(np.zeros(8)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-5)

    def test_output_moments(self):
        x = tc.Tensor(f64(10, 64, seed=15, scale=3.0))
        gain = tc.Tensor(np.full(64, 1.5))
        bias = tc.Tensor(np.full(64, -0.25))
        out = tc.layer_norm(x, gain, bias).data
        np.testing.assert_allclose(out.mean(axis=-1), -0.25, atol=1e-4)
        np.testing.assert_allclose(out.std(axis=-1), 1.5, atol=1e-3)

    def test_gradient(self):
        w = f64(4, 6, seed=16, scale=0.5)
        check_kernel_grad(
            lambda p: weighted_sum(tc.layer_norm(p["x"], p["g"], p["b"]), w),
            {"x": f64(4, 6, seed=17), "g": 1 + 0.1 * f64(6, seed=18), "b": 0.1 * f64(6, seed=19)},
        )


class TestL2Normalize:
    def test_three_four_five(self):
        out = tc.l2_normalize(tc.Tensor([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-6)

    def test_unit_vector_unchanged(self):
        v = f64(9, seed=20)
        v /= np.linalg.norm(v)
        out = tc.l2_normalize(tc.Tensor(v))
        np.testing.assert_allclose(out.data, v, atol=1e-6)

    def test_idempotent(self):
        x = f64(3, 5, seed=21, scale=2.0)
        once = tc.l2_normalize(tc.Tensor(x), axis=-1).data
        twice = tc.l2_normalize(tc.Tensor(once), axis=-1).data
        np.testing.assert_allclose(once, twice, atol=1e-6)

    def test_zero_norm_raises(self):
        with pytest.raises(DegenerateInputError):
            tc.l2_normalize(tc.Tensor(np.zeros(4)))

    def test_gradient(self):
        w = f64(2, 5, seed=22, scale=0.5)
        check_kernel_grad(
            lambda p: weighted_sum(tc.l2_normalize(p["x"], axis=-1), w),
            {"x": f64(2, 5, seed=23) + 0.5},
        )


class TestReluGelu:
    def test_relu_values(self):
        out = tc.relu(tc.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0, 0, 2])

    def test_relu_all_negative(self):
        out = tc.relu(tc.Tensor([-3.0, -0.5, -1e-6]))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_relu_gradient_away_from_kink(self):
        x = f64(4, 4, seed=24)
        x[np.abs(x) < 0.1] = 0.5
        w = f64(4, 4, seed=25, scale=0.5)
        check_kernel_grad(lambda p: weighted_sum(tc.relu(p["x"]), w), {"x": x})

    def test_gelu_gradient(self):
        w = f64(3, 4, seed=26, scale=0.5)
        check_kernel_grad(lambda p: weighted_sum(tc.gelu(p["x"]), w), {"x": f64(3, 4, seed=27)})


class TestShapeOps:
    def test_mean_axis_gradient(self):
        w = f64(3, 5, seed=28, scale=0.5)
        check_kernel_grad(
            lambda p: weighted_sum(tc.mean_axis(p["x"], axis=1), w),
            {"x": f64(3, 4, 5, seed=29)},
        )

    def test_add_broadcast_gradient(self):
        w = f64(2, 3, 4, seed=30, scale=0.5)
        check_kernel_grad(
            lambda p: weighted_sum(tc.add_broadcast(p["x"], p["b"]), w),
            {"x": f64(2, 3, 4, seed=31), "b": f64(3, 4, seed=32)},
        )

    def test_swapaxes_reshape_gradient(self):
        w = f64(24, seed=33, scale=0.5)
        check_kernel_grad(
            lambda p: weighted_sum(tc.reshape(tc.swapaxes(p["x"], 0, 1), (24,)), w),
            {"x": f64(2, 3, 4, seed=34)},
        )


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        z = tc.Tensor(np.zeros((4, 7)))
        loss = tc.cross_entropy(z, np.zeros(4, dtype=int), scale_factor=42.0)
        np.testing.assert_allclose(loss.item(), np.log(7), atol=1e-6)

    def test_saturated_pair_is_zero_in_log_space(self):
        with tc.use_dtype(np.float64):
            z = tc.Tensor(np.array([[1.0, -1.0]]))
            loss = tc.cross_entropy(z, np.array([0]), scale_factor=100.0)
        assert abs(loss.item()) < 1e-12

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(35)
        z = rng.standard_normal((6, 5))
        y = rng.integers(0, 5, size=6)
        with tc.use_dtype(np.float64):
            loss = tc.cross_entropy(tc.Tensor(z), y, scale_factor=3.0)
        np.testing.assert_allclose(loss.item(), cross_entropy_direct(z, y, 3.0), atol=1e-6)

    def test_gradient(self):
        y = np.array([2, 0, 4])
        check_kernel_grad(
            lambda p: tc.cross_entropy(p["z"], y, scale_factor=2.5),
            {"z": f64(3, 5, seed=36)},
        )

    def test_ignored_rows_masked(self):
        z = f64(4, 3, seed=37)
        full = tc.cross_entropy(tc.Tensor(z[:2]), np.array([1, 2])).item()
        masked = tc.cross_entropy(tc.Tensor(z), np.array([1, 2, -1, -1])).item()
        np.testing.assert_allclose(full, masked, rtol=1e-6)

    def test_all_ignored_is_zero(self):
        loss = tc.cross_entropy(tc.Tensor(f64(2, 3, seed=38)), np.array([-1, -1]))
        assert loss.item() == 0.0

    def test_out_of_range_label_names_row(self):
        with pytest.raises(LabelError, match="row 1"):
            tc.cross_entropy(tc.Tensor(np.zeros((2, 3))), np.array([0, 3]))


class TestTapeContract:
    def test_backward_visits_reverse_order(self):
        x = tc.Tensor(f64(2, 2, seed=39), requires_grad=True)
        with tc.GradTape() as tape:
            h = tc.relu(x)
            out = weighted_sum(h, np.ones((2, 2)))
        assert tape.op_names[0] == "relu" and "matmul" in tape.op_names
        tape.backward(out)
        assert x.grad is not None

    def test_touched_params_always_get_a_gradient(self):
        # w2 feeds a branch that never reaches the loss: gradient must be zeros.
        w1 = tc.Tensor(f64(2, 2, seed=40), requires_grad=True)
        w2 = tc.Tensor(f64(2, 2, seed=41), requires_grad=True)
        x = tc.Tensor(f64(2, 2, seed=42))
        with tc.GradTape() as tape:
            used = tc.matmul(x, w1)
            tc.matmul(x, w2)  # dead branch
            loss = weighted_sum(used, np.ones((2, 2)))
        tape.backward(loss)
        assert w1.grad is not None and np.abs(w1.grad).sum() > 0
        assert w2.grad is not None and np.array_equal(w2.grad, np.zeros((2, 2)))

    def test_nested_tapes_rejected(self):
        with tc.GradTape():
            with pytest.raises(RuntimeError):
                with tc.GradTape():
                    pass

    def test_no_recording_without_tape(self):
        x = tc.Tensor(f64(2, 2, seed=43), requires_grad=True)
        out = tc.relu(x)
        assert out.requires_grad is False


class TestNumericsGuards:
    def test_overflow_is_hard_error(self):
        big = tc.Tensor(np.full((2, 2), 1e30, dtype=np.float32))
        with pytest.raises(NumericsError):
            tc.matmul(big, big)

    def test_determinism_bit_identical(self):
        def run():
            rng = np.random.default_rng(44)
            a = tc.randn(rng, 6, 6)
            b = tc.randn(rng, 6, 6)
            return tc.softmax(tc.matmul(a, b), axis=-1).data
        first, second = run(), run()
        assert first.tobytes() == second.tobytes()
