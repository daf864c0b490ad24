"""Forward semantics of the tensor primitives against independent oracles."""

import numpy as np
import pytest

from microdet import Tape, Tensor, backward
from microdet import ops
from microdet.errors import DimensionError, GraphError, NumericsError, StateError
from microdet.nn import BatchNorm2d, Conv2d


def conv2d_oracle(x, w, b, stride, padding):
    """Brute-force triple-loop direct convolution (the independent oracle)."""
    n, c, h, width = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (width + 2 * padding - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for ni in range(n):
        for oi in range(co):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[ni, oi, i, j] = np.sum(patch * w[oi]) + (b[oi] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_1x1_conv_scales_channels(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.full((1, 1, 1, 1), 2.0))
        b = Tensor(np.zeros(1))
        out = ops.conv2d(x, w, b)
        assert np.array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_full_kernel_sums_entries(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        w = Tensor(np.ones((1, 1, 2, 2)))
        b = Tensor(np.zeros(1))
        out = ops.conv2d(x, w, b)
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 10.0

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
        assert out.shape == (2, 4, 8, 8)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, b, 1, 1), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 2)])
    def test_oracle_agreement_over_strides(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.normal(size=(1, 2, 9, 7))
        w = rng.normal(size=(3, 2, 3, 3))
        out = ops.conv2d(Tensor(x), Tensor(w), None, stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, None, stride, padding), atol=1e-12)

    def test_output_shape_formula_fuzz(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            h, w = rng.integers(3, 14, size=2)
            k = int(rng.integers(1, 4))
            s = int(rng.integers(1, 3))
            p = int(rng.integers(0, 3))
            if k > h + 2 * p or k > w + 2 * p:
                continue
            x = Tensor(rng.normal(size=(1, 2, h, w)))
            wt = Tensor(rng.normal(size=(3, 2, k, k)))
            out = ops.conv2d(x, wt, None, stride=s, padding=p)
            expected = (1, 3, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
            assert out.shape == expected

    def test_channel_mismatch_names_axes(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(DimensionError, match="axis 1"):
            ops.conv2d(x, w, None)

    def test_kernel_larger_than_padded_input_rejected(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        w = Tensor(np.zeros((1, 1, 5, 5)))
        with pytest.raises(DimensionError, match="exceeds"):
            ops.conv2d(x, w, None)


class TestGlobalAvgPool:
    def test_constant_input(self):
        out = ops.global_avg_pool(Tensor(np.full((2, 3, 4, 5), 2.5)))
        assert np.array_equal(out.data, np.full((2, 3), 2.5))

    def test_direct_mean(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert ops.global_avg_pool(x).data[0, 0] == 2.5

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 7, 3))
        out = ops.global_avg_pool(Tensor(x))
        expected = np.zeros((2, 5))
        for n in range(2):
            for c in range(5):
                acc = 0.0
                for i in range(7):
                    for j in range(3):
                        acc += x[n, c, i, j]
                expected[n, c] = acc / 21.0
        np.testing.assert_allclose(out.data, expected, atol=1e-12)


class TestBatchNorm:
    def test_identity_on_standardized_input(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(8, 3, 6, 6))
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
        x /= x.std(axis=(0, 2, 3), keepdims=True)
        bn = BatchNorm2d(3, eps=1e-5)
        out = bn(Tensor(x))
        np.testing.assert_allclose(out.data, x, atol=1e-4)

    def test_zero_gamma_yields_beta(self):
        bn = BatchNorm2d(2)
        bn.gamma.data[:] = 0.0
        bn.beta.data[:] = [0.5, -1.5]
        out = bn(Tensor(np.random.default_rng(0).normal(size=(4, 2, 3, 3))))
        np.testing.assert_allclose(out.data[:, 0], 0.5, atol=0)
        np.testing.assert_allclose(out.data[:, 1], -1.5, atol=0)

    def test_train_mode_moment_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.normal(loc=3.0, scale=2.0, size=(6, 4, 5, 5))
        eps = 1e-5
        bn = BatchNorm2d(4, eps=eps)
        out = bn(Tensor(x)).data
        var = x.var(axis=(0, 2, 3))
        for c in range(4):
            assert abs(out[:, c].mean()) < 1e-10
            # linear rescaling leaves exactly var / (var + eps)
            assert abs(out[:, c].var() - var[c] / (var[c] + eps)) < 1e-6

    def test_eval_without_stats_raises(self):
        bn = BatchNorm2d(2).eval()
        with pytest.raises(StateError):
            bn(Tensor(np.zeros((1, 2, 3, 3))))

    def test_running_stats_converge_to_population(self):
        rng = np.random.default_rng(2)
        bn = BatchNorm2d(1)
        for _ in range(200):
            bn(Tensor(rng.normal(loc=1.0, scale=3.0, size=(16, 1, 4, 4))))
        assert abs(bn.running_mean.data[0] - 1.0) < 0.2
        assert abs(bn.running_var.data[0] - 9.0) < 1.0


class TestActivations:
    def test_relu_values(self):
        out = ops.activation(Tensor([-1.0, 2.0]), "relu")
        assert np.array_equal(out.data, [0.0, 2.0])

    def test_sigmoid_midpoint_and_range(self):
        assert ops.activation(Tensor([0.0]), "sigmoid").data[0] == 0.5
        rng = np.random.default_rng(1)
        out = ops.activation(Tensor(rng.normal(scale=5, size=1000)), "sigmoid")
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_swish_zero(self):
        assert ops.activation(Tensor([0.0]), "swish").data[0] == 0.0

    def test_unknown_kind(self):
        with pytest.raises(DimensionError):
            ops.activation(Tensor([0.0]), "gelu")


class TestBackward:
    def test_linear_form_gradient_equals_input(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 4))
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = ops.tsum(ops.mul(w, x))
        backward(tape, loss)
        np.testing.assert_allclose(w.grad, x, atol=1e-12)

    def test_sigmoid_gradient_at_zero(self):
        w = Tensor(np.zeros(1), requires_grad=True)
        with Tape() as tape:
            loss = ops.tsum(ops.sigmoid(w))
        backward(tape, loss)
        assert w.grad[0] == 0.25

    def test_accumulates_across_calls(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            loss = ops.tsum(ops.mul(w, 2.0))
        backward(tape, loss)
        backward(tape, loss)
        np.testing.assert_allclose(w.grad, 4.0)

    def test_zero_upstream_yields_zero_grads(self):
        rng = np.random.default_rng(6)
        w = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        with Tape() as tape:
            loss = ops.tmean(ops.swish(ops.mul(w, w)))
        backward(tape, loss, upstream=0.0)
        np.testing.assert_array_equal(w.grad, np.zeros((2, 3)))

    def test_loss_not_on_tape_raises(self):
        w = Tensor(np.ones(1), requires_grad=True)
        with Tape() as tape:
            ops.tsum(ops.mul(w, 2.0))
        stray = Tensor(np.zeros(1))
        with pytest.raises(GraphError):
            backward(tape, stray)

    def test_non_scalar_loss_raises(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            out = ops.mul(w, 2.0)
        with pytest.raises(GraphError):
            backward(tape, out)

    def test_reused_tensor_gets_both_contributions(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        with Tape() as tape:
            loss = ops.tsum(ops.mul(w, w))  # d/dw w^2 = 2w
        backward(tape, loss)
        assert w.grad[0] == 6.0

    def test_no_tape_means_no_tracking(self):
        w = Tensor(np.ones(2), requires_grad=True)
        out = ops.mul(w, 3.0)
        assert not out.requires_grad


class TestNumericGuards:
    def test_non_finite_output_rejected(self):
        with pytest.raises(NumericsError):
            ops.exp(Tensor(np.array([1e6])))

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        a = ops.conv2d(Tensor(x), Tensor(w), None, padding=1).data
        b = ops.conv2d(Tensor(x.copy()), Tensor(w.copy()), None, padding=1).data
        assert np.array_equal(a, b)


class TestRegistry:
    def test_parameter_names_unique_and_dotted(self):
        rng = np.random.default_rng(0)
        conv = Conv2d(2, 3, 3, rng=rng)
        names = [n for n, _ in conv.named_parameters()]
        assert names == ["weight", "bias"]
        assert len(set(names)) == len(names)

    def test_grad_shape_matches_value_shape(self):
        rng = np.random.default_rng(0)
        conv = Conv2d(2, 3, 3, rng=rng)
        for _, p in conv.named_parameters():
            assert p.grad.shape == p.data.shape
