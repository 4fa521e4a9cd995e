"""Hypernetwork head contracts: parameter packing, per-pixel oracle,
image conditioning, and multi-label capability."""

import numpy as np
import pytest

from contseg import autodiff as ad
from contseg.errors import ConsistencyError
from contseg.heads import (HEAD_WIDTHS, apply_head, bce_loss,
                           generate_head_params, head_param_layout,
                           init_hypernet)
from contseg.rng import SplitMix64


def silu(x):
    return x / (1.0 + np.exp(-x))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestLayout:
    def test_reference_channel_count(self):
        layout = head_param_layout(16, 1)
        assert layout.total == 16 * 8 + 8 + 8 * 8 + 8 + 8 * 1 + 1 == 217

    def test_single_channel_count(self):
        assert head_param_layout(1, 1).total == 97

    def test_formula_with_kernel(self):
        k, c_d = 3, 16
        layout = head_param_layout(c_d, k)
        w1, w2, w3 = HEAD_WIDTHS
        assert layout.total == k * k * (c_d * w1 + w1 * w2 + w2 * w3) + w1 + w2 + w3

    def test_blocks_partition_the_vector(self):
        layout = head_param_layout(16, 3)
        cursor = 0
        for _, start, stop in layout.blocks:
            assert start == cursor and stop > start
            cursor = stop
        assert cursor == layout.total

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            head_param_layout(16, 2)

    def test_total_is_independent_of_class_count(self):
        # the layout never sees class counts; same (C_d, k) -> same size
        assert head_param_layout(16, 1).total == head_param_layout(16, 1).total


class TestGenerateHeadParams:
    def test_zero_mlp_gives_zero_theta(self):
        layout = head_param_layout(4, 1)
        mlp = init_hypernet(10, 8, layout, SplitMix64(0))
        for t in (mlp.w1, mlp.b1, mlp.w2, mlp.b2):
            t.data[...] = 0.0
        f = ad.Tensor(SplitMix64(1).normal((2, 6)))
        theta = generate_head_params(f, np.ones(4), mlp)
        np.testing.assert_array_equal(theta.data, 0.0)

    def test_different_image_features_give_different_theta(self):
        layout = head_param_layout(4, 1)
        mlp = init_hypernet(10, 8, layout, SplitMix64(2), dtype=np.float64)
        omega = SplitMix64(3).normal((4,))
        rng = SplitMix64(4)
        f1, f2 = rng.normal((1, 6)), rng.normal((1, 6))
        t1 = generate_head_params(ad.Tensor(f1), omega, mlp).data
        t2 = generate_head_params(ad.Tensor(f2), omega, mlp).data
        assert np.abs(t1 - t2).max() > 0

    def test_one_hot_embedding_has_same_shapes(self):
        layout = head_param_layout(4, 1)
        mlp = init_hypernet(6 + 3, 8, layout, SplitMix64(5))
        onehot = np.zeros(3)
        onehot[1] = 1.0
        theta = generate_head_params(
            ad.Tensor(SplitMix64(6).normal((2, 6)).astype(np.float32)),
            onehot, mlp)
        assert theta.data.shape == (2, layout.total)

    def test_dimension_mismatch_rejected(self):
        layout = head_param_layout(4, 1)
        mlp = init_hypernet(10, 8, layout, SplitMix64(7))
        with pytest.raises(ValueError):
            generate_head_params(ad.Tensor(np.zeros((1, 6), np.float32)),
                                 np.ones(5), mlp)


class TestApplyHead:
    def test_zero_theta_gives_half_everywhere(self):
        layout = head_param_layout(3, 1)
        dec = ad.Tensor(SplitMix64(8).normal((2, 4, 4, 3)))
        theta = ad.Tensor(np.zeros((2, layout.total)))
        probs = apply_head(dec, theta, layout)
        np.testing.assert_array_equal(probs.data, 0.5)

    def test_final_bias_controls_constant_output(self):
        layout = head_param_layout(3, 1)
        theta = np.zeros((1, layout.total))
        b3_start, _ = layout.block("b3")
        theta[0, b3_start] = 1.7
        dec = ad.Tensor(SplitMix64(9).normal((1, 4, 4, 3)))
        probs = apply_head(dec, ad.Tensor(theta), layout)
        np.testing.assert_allclose(probs.data, sigmoid(1.7), rtol=1e-12)

    def test_k1_head_matches_per_pixel_mlp_oracle(self):
        # a 1x1-kernel head is a per-pixel MLP; recompute it pixel by pixel
        layout = head_param_layout(2, 1, widths=(3, 2, 1))
        rng = SplitMix64(10)
        dec = rng.normal((1, 2, 2, 2))
        theta = rng.normal((1, layout.total)) * 0.7
        got = apply_head(ad.Tensor(dec), ad.Tensor(theta), layout).data

        def block(name, shape):
            s, e = layout.block(name)
            return theta[0, s:e].reshape(shape)

        w1, b1 = block("w1", (2, 3)), block("b1", (3,))
        w2, b2 = block("w2", (3, 2)), block("b2", (2,))
        w3, b3 = block("w3", (2, 1)), block("b3", (1,))
        for y in range(2):
            for x in range(2):
                v = dec[0, y, x]
                h1 = silu(v @ w1 + b1)
                h2 = silu(h1 @ w2 + b2)
                want = sigmoid(h2 @ w3 + b3)[0]
                assert abs(got[0, y, x] - want) < 1e-6

    def test_layout_mismatch_rejected(self):
        layout = head_param_layout(3, 1)
        dec = ad.Tensor(np.zeros((1, 4, 4, 5), np.float32))
        theta = ad.Tensor(np.zeros((1, layout.total), np.float32))
        with pytest.raises(ConsistencyError):
            apply_head(dec, theta, layout)
        dec = ad.Tensor(np.zeros((1, 4, 4, 3), np.float32))
        with pytest.raises(ConsistencyError):
            apply_head(dec, ad.Tensor(np.zeros((1, 7), np.float32)), layout)

    def test_saturated_probabilities_sit_inside_unit_interval_after_clamp(self):
        # float32 sigmoids saturate to exact 0/1; the loss-side clamp is
        # what keeps the logarithms finite
        layout = head_param_layout(3, 1)
        theta = np.zeros((1, layout.total), np.float32)
        b3_start, _ = layout.block("b3")
        for bias in (-50.0, 50.0):
            theta[0, b3_start] = bias
            dec = ad.Tensor(np.ones((1, 4, 4, 3), np.float32))
            probs = apply_head(dec, ad.Tensor(theta), layout).data
            clamped = np.clip(probs, 1e-7, 1 - 1e-7)
            assert (clamped > 0.0).all() and (clamped < 1.0).all()

    def test_two_classes_can_both_exceed_half(self):
        # multi-label capability: positive final biases for two heads
        layout = head_param_layout(3, 1)
        dec = ad.Tensor(SplitMix64(11).normal((1, 3, 3, 3)))
        b3_start, _ = layout.block("b3")
        planes = []
        for bias in (2.0, 3.0):
            theta = np.zeros((1, layout.total))
            theta[0, b3_start] = bias
            planes.append(apply_head(dec, ad.Tensor(theta), layout).data)
        both = (planes[0] > 0.5) & (planes[1] > 0.5)
        assert both.all()

    def test_gradients_flow_to_theta_and_features(self):
        layout = head_param_layout(2, 3, widths=(3, 2, 1))
        rng = SplitMix64(12)
        dec = rng.normal((1, 4, 4, 2))
        theta = rng.normal((1, layout.total)) * 0.4
        target = (rng.uniform((1, 4, 4)) > 0.5).astype(np.float64)

        def fn(dt, tt):
            return bce_loss(apply_head(dt, tt, layout), target)

        assert ad.grad_check(fn, [dec, theta]) < 1e-6
