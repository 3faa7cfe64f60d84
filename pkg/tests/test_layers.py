import math

import numpy as np
import numpy.testing as npt
import pytest

from frelunet.activations import ActivationSpec
from frelunet.layers import (
    BatchNorm,
    Conv2d,
    Dropout,
    Linear,
    MaxPool2x2,
    ResidualBlock,
    SoftmaxCrossEntropy,
)
from frelunet.tensor import Rng


def conv2d_oracle(x, w, bias, stride, pad):
    """Direct six-loop cross-correlation, the slow reference."""
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, co, ho, wo))
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for u in range(k):
                            for v in range(k):
                                acc += w[o, c, u, v] * xp[b, c, i * stride + u, j * stride + v]
                    out[b, o, i, j] = acc + bias[o]
    return out


class TestConv2d:
    def test_all_ones_kernel(self):
        layer = Conv2d(1, 1, 3)
        layer.W[...] = 1.0
        out = layer.forward(np.ones((1, 1, 3, 3)))
        npt.assert_array_equal(out, np.full((1, 1, 1, 1), 9.0))

    def test_identity_1x1_kernel(self):
        layer = Conv2d(1, 1, 1)
        layer.W[...] = 1.0
        x = Rng(0).normal(0, 1, (2, 1, 4, 4))
        npt.assert_array_equal(layer.forward(x), x)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_against_six_loop_oracle(self, stride, pad):
        rng = Rng(1)
        layer = Conv2d(3, 4, 3, stride=stride, padding=pad)
        layer.W[...] = rng.normal(0, 1, layer.W.shape)
        layer.bias[...] = rng.normal(0, 1, layer.bias.shape)
        x = rng.normal(0, 1, (2, 3, 6, 7))
        expected = conv2d_oracle(x, layer.W, layer.bias, stride, pad)
        npt.assert_allclose(layer.forward(x), expected, atol=1e-10)

    def test_backward_zero_upstream(self):
        layer = Conv2d(2, 3, 3, padding=1)
        layer.W[...] = Rng(2).normal(0, 1, layer.W.shape)
        x = Rng(3).normal(0, 1, (2, 2, 5, 5))
        out = layer.forward(x)
        dx = layer.backward(np.zeros_like(out))
        npt.assert_array_equal(dx, np.zeros_like(x))
        npt.assert_array_equal(layer.gW, np.zeros_like(layer.W))
        npt.assert_array_equal(layer.gbias, np.zeros_like(layer.bias))

    def test_backward_single_pixel_chain_rule(self):
        layer = Conv2d(1, 1, 1)
        layer.W[...] = 1.0
        x = Rng(4).normal(0, 1, (1, 1, 3, 3))
        out = layer.forward(x)
        up = np.zeros_like(out)
        up[0, 0, 1, 2] = 1.0
        layer.backward(up)
        npt.assert_allclose(layer.gW[0, 0, 0, 0], x[0, 0, 1, 2], atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Conv2d(3, 4, 3).forward(np.ones((1, 2, 5, 5)))


class TestLinear:
    def test_forward_hand(self):
        layer = Linear(2, 1)
        layer.W[...] = np.array([[2.0], [3.0]])
        layer.bias[...] = 1.0
        npt.assert_array_equal(layer.forward(np.array([[1.0, 1.0]])), [[6.0]])

    def test_backward_matches_matrix_calculus(self):
        rng = Rng(5)
        layer = Linear(4, 3)
        layer.W[...] = rng.normal(0, 1, (4, 3))
        x = rng.normal(0, 1, (5, 4))
        up = rng.normal(0, 1, (5, 3))
        layer.forward(x)
        dx = layer.backward(up)
        npt.assert_allclose(dx, up @ layer.W.T, atol=1e-12)
        npt.assert_allclose(layer.gW, x.T @ up, atol=1e-12)
        npt.assert_allclose(layer.gbias, up.sum(axis=0), atol=1e-12)


class TestMaxPool:
    def test_hand_case_and_routing(self):
        layer = MaxPool2x2()
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = layer.forward(x)
        npt.assert_array_equal(out, [[[[4.0]]]])
        dx = layer.backward(np.array([[[[1.0]]]]))
        npt.assert_array_equal(dx, [[[[0.0, 0.0], [0.0, 1.0]]]])

    def test_tie_break_first_in_row_major(self):
        layer = MaxPool2x2()
        x = np.full((1, 1, 2, 2), 7.0)
        layer.forward(x)
        dx = layer.backward(np.array([[[[1.0]]]]))
        npt.assert_array_equal(dx, [[[[1.0, 0.0], [0.0, 0.0]]]])

    def test_odd_dims_drop_trailing(self):
        layer = MaxPool2x2()
        x = Rng(6).normal(0, 1, (2, 3, 7, 5))
        out = layer.forward(x)
        assert out.shape == (2, 3, 3, 2)
        dx = layer.backward(np.ones_like(out))
        npt.assert_array_equal(dx[:, :, 6, :], 0.0)
        npt.assert_array_equal(dx[:, :, :, 4], 0.0)


class TestDropout:
    def test_rate_zero_identity_both_modes(self):
        layer = Dropout(0.0)
        x = Rng(7).normal(0, 1, (3, 4))
        npt.assert_array_equal(layer.forward(x, train=True), x)
        npt.assert_array_equal(layer.forward(x, train=False), x)

    def test_eval_mode_identity(self):
        layer = Dropout(0.5, rng=Rng(8))
        x = Rng(9).normal(0, 1, (3, 4))
        npt.assert_array_equal(layer.forward(x, train=False), x)

    def test_inverted_scaling_unbiased(self):
        # Monte Carlo: train-mode expectation equals the input within 1%
        layer = Dropout(0.3, rng=Rng(10))
        x = np.ones((200, 500))
        out = layer.forward(x, train=True)
        assert abs(out.mean() - 1.0) < 0.01

    def test_backward_uses_same_mask(self):
        layer = Dropout(0.4, rng=Rng(11))
        x = Rng(12).normal(0, 1, (6, 6))
        out = layer.forward(x, train=True)
        dx = layer.backward(np.ones_like(x))
        npt.assert_array_equal((out != 0), (dx != 0))
        npt.assert_allclose(dx[dx != 0], 1.0 / 0.6, atol=1e-12)

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestBatchNorm:
    def test_hand_oracle_three_values(self):
        layer = BatchNorm(1)
        x = np.array([[1.0], [2.0], [3.0]])
        out = layer.forward(x, train=True)
        scale = math.sqrt(2.0 / 3.0 + 1e-5)  # population variance + eps
        expected = np.array([[-1.0 / scale], [0.0], [1.0 / scale]])
        npt.assert_allclose(out, expected, atol=1e-12)
        npt.assert_allclose(out[0, 0], -1.2247357, atol=1e-7)

    def test_constant_batch_maps_to_beta(self):
        layer = BatchNorm(2)
        layer.beta[...] = 5.0
        out = layer.forward(np.full((4, 2), 3.3), train=True)
        npt.assert_allclose(out, 5.0, atol=1e-12)

    def test_running_stats_used_in_eval(self):
        layer = BatchNorm(1, momentum=0.9)
        x = np.array([[1.0], [2.0], [3.0]])
        layer.forward(x, train=True)
        npt.assert_allclose(layer.running_mean, [0.1 * 2.0], atol=1e-12)
        npt.assert_allclose(layer.running_var, [0.9 * 1.0 + 0.1 * (2.0 / 3.0)], atol=1e-12)
        out = layer.forward(np.array([[0.2]]), train=False)
        expected = (0.2 - layer.running_mean) / np.sqrt(layer.running_var + 1e-5)
        npt.assert_allclose(out, [expected], atol=1e-12)

    def test_batch_of_one_rejected_in_train(self):
        with pytest.raises(ValueError):
            BatchNorm(3).forward(np.ones((1, 3)), train=True)
        # spatial input with one effective element per channel is also rejected
        with pytest.raises(ValueError):
            BatchNorm(3).forward(np.ones((1, 3, 1, 1)), train=True)

    def test_4d_normalizes_per_channel(self):
        layer = BatchNorm(2)
        x = Rng(13).normal(3.0, 2.0, (8, 2, 5, 5))
        out = layer.forward(x, train=True)
        for c in range(2):
            assert abs(out[:, c].mean()) < 1e-10
            npt.assert_allclose(out[:, c].var(), 1.0, atol=1e-3)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_loss(self):
        head = SoftmaxCrossEntropy()
        loss = head.forward(np.zeros((3, 100)), np.array([0, 42, 99]))
        npt.assert_allclose(loss, math.log(100.0), atol=1e-12)
        npt.assert_allclose(loss, 4.6051702, atol=1e-7)

    def test_gradient_structure(self):
        head = SoftmaxCrossEntropy()
        logits = Rng(14).normal(0, 1, (4, 5))
        labels = np.array([0, 1, 2, 3])
        head.forward(logits, labels)
        d = head.backward()
        npt.assert_allclose(d.sum(axis=1), 0.0, atol=1e-12)  # softmax rows sum to one
        assert np.all(d[np.arange(4), labels] < 0)

    def test_label_range_checked(self):
        with pytest.raises(ValueError):
            SoftmaxCrossEntropy().forward(np.zeros((2, 3)), np.array([0, 3]))


class TestResidualBlock:
    @pytest.mark.parametrize("variant,n_bn,n_act", [
        ("original", 2, 2),
        ("no_act_after_addition", 2, 1),
        ("no_bn_after_first_conv", 1, 2),
    ])
    def test_variant_wiring(self, variant, n_bn, n_act):
        block = ResidualBlock(variant, 4, ActivationSpec("frelu"))
        subs = block.sublayers()
        assert sum(isinstance(s, BatchNorm) for s in subs) == n_bn
        from frelunet.layers import Activation
        assert sum(isinstance(s, Activation) for s in subs) == n_act

    def test_zero_branch_reduces_to_final_act(self):
        spec = ActivationSpec("frelu", b=-0.5)
        block = ResidualBlock("original", 3, spec)
        # convs are zero-initialized at construction; branch output is BN(0) = 0
        x = Rng(15).normal(0, 1, (4, 3, 6, 6))
        out = block.forward(x, train=True)
        from frelunet.activations import act_forward
        npt.assert_allclose(out, act_forward(spec, x), atol=1e-12)

    def test_zero_branch_identity_without_post_act(self):
        block = ResidualBlock("no_act_after_addition", 3, ActivationSpec("relu"))
        x = Rng(16).normal(0, 1, (4, 3, 6, 6))
        npt.assert_allclose(block.forward(x, train=True), x, atol=1e-12)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            ResidualBlock("bottleneck", 4, ActivationSpec("relu"))
