"""Unit and gradient tests for the autodiff core."""

import math

import numpy as np
import pytest

from gansift import tensor as T
from gansift.tensor import (
    AdamState,
    Parameter,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    zero_grads,
)

from gradcheck import assert_grads_close, numerical_grad


class TestElementwise:
    def test_add_values(self):
        out = Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_scalar_broadcast(self):
        out = Tensor([1.0, 2.0]) * 3.0
        np.testing.assert_array_equal(out.data, [3.0, 6.0])
        out = 1.0 - Tensor([0.25, 0.5])
        np.testing.assert_array_equal(out.data, [0.75, 0.5])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
            Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
        assert np.all(np.isfinite(out))
        assert 0.0 <= out[0] < 1e-12
        assert 1.0 - 1e-12 < out[1] <= 1.0

    def test_relu(self):
        out = T.relu(Tensor([-3.0, 3.0]))
        np.testing.assert_array_equal(out.data, [0.0, 3.0])

    def test_leaky_relu(self):
        out = T.leaky_relu(Tensor([-1.0, 2.0]), alpha=0.2)
        np.testing.assert_allclose(out.data, [-0.2, 2.0])

    def test_log_clamps_instead_of_nan(self):
        out = T.log(Tensor([0.0, -1.0, 1.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data[:2], math.log(1e-12))
        assert out.data[2] == 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_unary_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        ops = [T.relu, T.leaky_relu, T.sigmoid, T.tanh, T.exp]
        for op in ops:
            x = Tensor(rng.uniform(0.2, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4)))
            x.requires_grad = True
            loss = op(x).sum()
            backward(loss)

            def forward():
                return op(Tensor(x.data)).sum().item()

            assert_grads_close(x.grad, numerical_grad(forward, x.data))

    @pytest.mark.parametrize("seed", range(20))
    def test_log_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(0.1, 3.0, size=(5,)), requires_grad=True)
        backward(T.log(x).sum())

        def forward():
            return T.log(Tensor(x.data)).sum().item()

        assert_grads_close(x.grad, numerical_grad(forward, x.data))

    @pytest.mark.parametrize("seed", range(10))
    def test_binary_gradients(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        loss = ((a * b) + (a - b)).sum()
        backward(loss)

        def forward():
            aa, bb = Tensor(a.data), Tensor(b.data)
            return ((aa * bb) + (aa - bb)).sum().item()

        assert_grads_close(a.grad, numerical_grad(forward, a.data))
        assert_grads_close(b.grad, numerical_grad(forward, b.data))


class TestMatmul:
    def test_identity(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_row_times_column(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        backward(T.matmul(a, b).sum())

        def forward():
            return T.matmul(Tensor(a.data), Tensor(b.data)).sum().item()

        assert_grads_close(a.grad, numerical_grad(forward, a.data), rtol=1e-5)
        assert_grads_close(b.grad, numerical_grad(forward, b.data), rtol=1e-5)


class TestConv2d:
    def test_sum_kernel(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        k = Tensor(np.ones((1, 1, 2, 2)))
        out = T.conv2d(x, k)
        np.testing.assert_array_equal(out.data, [[[[10.0]]]])

    def test_identity_kernel(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = T.conv2d(x, k, stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_bad_geometry_lists_dimensions(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        k = Tensor(np.ones((1, 1, 5, 5)))
        with pytest.raises(ShapeError, match="5x5"):
            T.conv2d(x, k)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 2, 2))))

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (1, 1)])
    def test_gradients_match_finite_differences(self, seed, stride, padding):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3,)), requires_grad=True)
        backward(T.conv2d(x, k, stride, padding, bias=b).sum())

        def forward():
            return T.conv2d(Tensor(x.data), Tensor(k.data), stride, padding, bias=Tensor(b.data)).sum().item()

        assert_grads_close(k.grad, numerical_grad(forward, k.data), rtol=1e-5)
        assert_grads_close(x.grad, numerical_grad(forward, x.data), rtol=1e-5)
        assert_grads_close(b.grad, numerical_grad(forward, b.data), rtol=1e-5)


class TestConv2dTranspose:
    def test_output_size_stride2(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        k = Tensor(np.ones((1, 1, 2, 2)))
        assert T.conv2d_transpose(x, k, stride=2, padding=0).shape == (1, 1, 4, 4)

    def test_zero_input(self):
        out = T.conv2d_transpose(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.ones((2, 1, 4, 4))), stride=2, padding=1)
        assert not out.data.any()

    @pytest.mark.parametrize("seed", range(20))
    def test_adjoint_of_conv2d(self, seed):
        # forward of the transpose must equal conv2d's input-gradient
        rng = np.random.default_rng(seed)
        stride, padding = (1, 0) if seed % 2 else (2, 1)
        k = Tensor(rng.normal(size=(1, 1, 3, 3)))
        gout = rng.normal(size=(1, 1, 3, 3))

        h = (3 - 1) * stride - 2 * padding + 3
        x = Tensor(rng.normal(size=(1, 1, h, h)), requires_grad=True)
        out = T.conv2d(x, k, stride, padding)
        assert out.shape == (1, 1, 3, 3)
        out.grad = gout.copy()
        out._backward()
        via_backward = x.grad

        via_transpose = T.conv2d_transpose(Tensor(gout), k, stride, padding).data
        np.testing.assert_allclose(via_transpose, via_backward, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1)])
    def test_gradients_match_finite_differences(self, seed, stride, padding):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(1, 3, 3, 3)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 2, 4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(2,)), requires_grad=True)
        backward(T.conv2d_transpose(x, k, stride, padding, bias=b).sum())

        def forward():
            return (
                T.conv2d_transpose(Tensor(x.data), Tensor(k.data), stride, padding, bias=Tensor(b.data))
                .sum()
                .item()
            )

        assert_grads_close(x.grad, numerical_grad(forward, x.data), rtol=1e-5)
        assert_grads_close(k.grad, numerical_grad(forward, k.data), rtol=1e-5)
        assert_grads_close(b.grad, numerical_grad(forward, b.data), rtol=1e-5)


class TestBatchnorm:
    def test_train_mode_normalizes(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(3.0, 2.0, size=(8, 4, 5, 5)))
        state = T.BatchNormState.for_channels(4)
        out = T.batchnorm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), state, train=True)
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        np.testing.assert_allclose(mean, 0.0, atol=1e-6)
        np.testing.assert_allclose(var, 1.0, atol=1e-4)

    def test_eval_identity_with_unit_stats(self):
        x = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
        state = T.BatchNormState(np.zeros(3), np.ones(3))
        out = T.batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), state, train=False, eps=0.0)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)

    def test_train_needs_batch_of_two(self):
        x = Tensor(np.ones((1, 3)))
        state = T.BatchNormState.for_channels(3)
        with pytest.raises(ShapeError):
            T.batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), state, train=True)

    def test_running_stats_update(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(5.0, 1.0, size=(16, 2)))
        state = T.BatchNormState.for_channels(2)
        T.batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), state, train=True, momentum=1.0)
        np.testing.assert_allclose(state.running_mean, x.data.mean(axis=0))
        np.testing.assert_allclose(state.running_var, x.data.var(axis=0))

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("train", [True, False])
    def test_gradients_match_finite_differences(self, seed, train):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(4, 3, 2, 2)), requires_grad=True)
        gamma = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
        beta = Tensor(rng.normal(size=3), requires_grad=True)
        rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
        # weight the output so the gradient is not uniform
        w = np.random.default_rng(seed + 100).normal(size=x.shape)

        def loss_graph(xt, gt, bt):
            state = T.BatchNormState(rm.copy(), rv.copy())
            out = T.batchnorm(xt, gt, bt, state, train=train)
            return (out * Tensor(w)).sum()

        backward(loss_graph(x, gamma, beta))

        def forward():
            return loss_graph(Tensor(x.data), Tensor(gamma.data), Tensor(beta.data)).item()

        assert_grads_close(x.grad, numerical_grad(forward, x.data))
        assert_grads_close(gamma.grad, numerical_grad(forward, gamma.data))
        assert_grads_close(beta.grad, numerical_grad(forward, beta.data))


class TestStructuralOps:
    def test_reshape_roundtrip_gradient(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward((x.reshape(3, 2) * 2.0).sum())
        np.testing.assert_array_equal(x.grad, np.full((2, 3), 2.0))

    def test_concat_values_and_gradient(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.zeros((2, 3)), requires_grad=True)
        out = T.concat([a, b], axis=1)
        assert out.shape == (2, 5)
        backward((out * Tensor(np.arange(10.0).reshape(2, 5))).sum())
        np.testing.assert_array_equal(a.grad, [[0.0, 1.0], [5.0, 6.0]])
        np.testing.assert_array_equal(b.grad, [[2.0, 3.0, 4.0], [7.0, 8.0, 9.0]])

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(0).normal(size=(5, 7)))
        rows = T.softmax(x).data.sum(axis=1)
        np.testing.assert_allclose(rows, 1.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_softmax_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = rng.normal(size=(3, 4))
        backward((T.softmax(x) * Tensor(w)).sum())

        def forward():
            return (T.softmax(Tensor(x.data)) * Tensor(w)).sum().item()

        assert_grads_close(x.grad, numerical_grad(forward, x.data))

    @pytest.mark.parametrize("seed", range(5))
    def test_avg_pool_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        w = rng.normal(size=(2, 3, 2, 2))
        backward((T.avg_pool2d(x, 2) * Tensor(w)).sum())

        def forward():
            return (T.avg_pool2d(Tensor(x.data), 2) * Tensor(w)).sum().item()

        assert_grads_close(x.grad, numerical_grad(forward, x.data))

    def test_add_bias_shapes(self):
        x = Tensor(np.zeros((2, 3)))
        out = T.add_bias(x, Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]] * 2)
        with pytest.raises(ShapeError):
            T.add_bias(x, Tensor([1.0, 2.0]))


class TestBackward:
    def test_square_derivative(self):
        x = Tensor([3.0], requires_grad=True)
        backward((x * x).sum())
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_constant_loss_gives_zero_grads(self):
        x = Tensor([5.0], requires_grad=True)
        backward((x * 0.0).sum())
        np.testing.assert_array_equal(x.grad, [0.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            backward(x * 2.0)

    def test_accumulation_without_reset(self):
        x = Tensor([2.0], requires_grad=True)
        loss = (x * x).sum()
        backward(loss)
        first = x.grad.copy()
        backward((x * x).sum())
        np.testing.assert_array_equal(x.grad, 2.0 * first)

    def test_shared_subexpression(self):
        # diamond: y = x*x used twice must accumulate both contributions
        x = Tensor([2.0], requires_grad=True)
        y = x * x
        backward((y + y).sum())
        np.testing.assert_array_equal(x.grad, [8.0])

    def test_tape_replay_is_bitwise(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

        def run():
            zero_grads([x])
            backward((T.sigmoid(T.matmul(x, x)) * 0.5).sum())
            return x.grad.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1, g2)

    @pytest.mark.parametrize("seed", range(20))
    def test_three_layer_network_gradient(self, seed):
        rng = np.random.default_rng(seed)
        w1 = Tensor(rng.normal(scale=0.5, size=(4, 6)), requires_grad=True)
        w2 = Tensor(rng.normal(scale=0.5, size=(6, 5)), requires_grad=True)
        w3 = Tensor(rng.normal(scale=0.5, size=(5, 2)), requires_grad=True)
        x = rng.normal(size=(3, 4))

        def loss_graph(a, b, c):
            h1 = T.tanh(T.matmul(Tensor(x), a))
            h2 = T.sigmoid(T.matmul(h1, b))
            return T.matmul(h2, c).sum()

        backward(loss_graph(w1, w2, w3))

        for w in (w1, w2, w3):

            def forward():
                return loss_graph(Tensor(w1.data), Tensor(w2.data), Tensor(w3.data)).item()

            assert_grads_close(w.grad, numerical_grad(forward, w.data))


class TestAdam:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        p = Parameter(Tensor([1.0, -2.0]), "w")
        p.tensor.grad = np.zeros(2)
        adam_step([p], AdamState(learning_rate=0.1))
        np.testing.assert_array_equal(p.tensor.data, [1.0, -2.0])

    def test_first_step_magnitude(self):
        # bias-corrected first step is lr * g / (|g| + eps), i.e. almost lr
        p = Parameter(Tensor([1.0]), "w")
        p.tensor.grad = np.ones(1)
        adam_step([p], AdamState(learning_rate=0.1))
        expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8)
        np.testing.assert_allclose(p.tensor.data, [expected], rtol=0, atol=1e-15)
        assert abs(1.0 - p.tensor.data[0] - 0.1) < 1e-8

    def test_missing_grad_names_parameter(self):
        p = Parameter(Tensor([1.0]), "conv.w")
        with pytest.raises(ValueError, match="conv.w"):
            adam_step([p], AdamState())

    def test_quadratic_convergence_matches_scalar_recurrence(self):
        # independent oracle: the same update rule on plain python floats
        lr, b1, b2, eps = 0.1, 0.5, 0.999, 1e-8
        x_ref, m, v = 5.0, 0.0, 0.0
        trajectory = []
        for t in range(1, 501):
            g = 2.0 * x_ref
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x_ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            trajectory.append(x_ref)
        assert any(abs(x) < 0.1 for x in trajectory)

        p = Parameter(Tensor([5.0]), "x")
        state = AdamState(learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)
        reached = False
        for t in range(500):
            zero_grads([p])
            backward((p.tensor * p.tensor).sum())
            adam_step([p], state)
            np.testing.assert_allclose(p.tensor.data[0], trajectory[t], rtol=1e-12)
            if abs(p.tensor.data[0]) < 0.1:
                reached = True
                break
        assert reached

    def test_grads_cleared_after_step(self):
        p = Parameter(Tensor([1.0]), "w")
        p.tensor.grad = np.ones(1)
        adam_step([p], AdamState())
        assert p.tensor.grad is None

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            AdamState(learning_rate=0.0)
        with pytest.raises(ValueError):
            AdamState(beta1=1.0)
