"""Tape op correctness: loop oracles for convolutions, finite differences
for every differentiable op."""

import numpy as np
import pytest

from contseg import autodiff as ad
from contseg.errors import NumericError
from contseg.rng import SplitMix64


def conv2d_loop_oracle(x, w, b, stride=1):
    """Quadruple-loop same-padding convolution, NHWC."""
    n, h, width, c = x.shape
    kh, kw, _, cout = w.shape
    p = kh // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.zeros((n, h // stride, width // stride, cout), dtype=np.float64)
    for ni in range(n):
        for y in range(h // stride):
            for xx in range(width // stride):
                for o in range(cout):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            for ci in range(c):
                                acc += xp[ni, y * stride + i, xx * stride + j, ci] \
                                    * w[i, j, ci, o]
                    out[ni, y, xx, o] = acc + b[o]
    return out


class TestConvForward:
    def test_matches_loop_oracle_stride1(self):
        rng = SplitMix64(11)
        x = rng.normal((2, 6, 6, 3))
        w = rng.normal((3, 3, 3, 4)) * 0.5
        b = rng.normal((4,))
        got = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
        want = conv2d_loop_oracle(x, w, b)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_matches_loop_oracle_stride2(self):
        rng = SplitMix64(12)
        x = rng.normal((2, 8, 8, 2))
        w = rng.normal((3, 3, 2, 5)) * 0.5
        b = rng.normal((5,))
        got = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b), stride=2).data
        want = conv2d_loop_oracle(x, w, b, stride=2)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_per_sample_matches_shared_kernel(self):
        # identical per-sample kernels must reproduce the shared-kernel op
        rng = SplitMix64(13)
        n, c, co, k = 3, 4, 2, 3
        x = rng.normal((n, 5, 5, c))
        w = rng.normal((k, k, c, co)) * 0.5
        b = rng.normal((co,))
        # per-sample layout: rows indexed by (i*k + j)*C + c
        wps = np.tile(w.reshape(k * k * c, co)[None], (n, 1, 1))
        bps = np.tile(b[None], (n, 1))
        got = ad.conv2d_per_sample(ad.Tensor(x), ad.Tensor(wps),
                                   ad.Tensor(bps), k=k).data
        want = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_rejects_even_kernel(self):
        x = ad.Tensor(np.zeros((1, 4, 4, 1)))
        w = ad.Tensor(np.zeros((2, 2, 1, 1)))
        b = ad.Tensor(np.zeros(1))
        with pytest.raises(ValueError):
            ad.conv2d(x, w, b)


class TestGradCheck:
    def test_linear_gradient_matches_hand_formula(self):
        # L = mean((x@w + b)**2)  =>  dL/dx = 2*(x@w + b) @ w.T / size
        rng = SplitMix64(1)
        x = rng.normal((3, 5))
        w = rng.normal((5, 2))
        b = rng.normal((2,))
        xt, wt, bt = (ad.Tensor(v, requires_grad=True) for v in (x, w, b))
        out = ad.linear(xt, wt, bt)
        ad.mean(ad.square(out), None).backward()
        want = 2.0 * (x @ w + b) @ w.T / out.data.size
        np.testing.assert_allclose(xt.grad, want, rtol=1e-15, atol=1e-15)
        np.testing.assert_allclose(bt.grad, 2.0 * (x @ w + b).sum(0) / out.data.size,
                                   rtol=1e-15, atol=1e-15)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_conv2d(self, stride):
        rng = SplitMix64(2)
        x = rng.normal((2, 4, 4, 3))
        w = rng.normal((3, 3, 3, 2)) * 0.3
        b = rng.normal((2,))

        def fn(xt, wt, bt):
            return ad.mean(ad.square(ad.conv2d(xt, wt, bt, stride=stride)), None)

        assert ad.grad_check(fn, [x, w, b]) < 1e-7

    def test_conv2d_per_sample(self):
        rng = SplitMix64(3)
        k, c, co = 3, 2, 2
        x = rng.normal((2, 4, 4, c))
        w = rng.normal((2, k * k * c, co)) * 0.3
        b = rng.normal((2, co))

        def fn(xt, wt, bt):
            return ad.mean(ad.square(ad.conv2d_per_sample(xt, wt, bt, k=k)), None)

        assert ad.grad_check(fn, [x, w, b]) < 1e-6

    def test_upsample_silu_sigmoid_chain(self):
        rng = SplitMix64(4)
        x = rng.normal((1, 3, 3, 2))

        def fn(xt):
            return ad.mean(ad.sigmoid(ad.silu(ad.upsample2x(xt))), None)

        assert ad.grad_check(fn, [x]) < 1e-6

    def test_bce_with_soft_targets(self):
        rng = SplitMix64(5)
        logits = rng.normal((3, 4))
        target = rng.uniform((3, 4))

        def fn(xt):
            return ad.bce(ad.sigmoid(xt), target)

        assert ad.grad_check(fn, [logits]) < 1e-8

    def test_mse_concat_slice_broadcast(self):
        rng = SplitMix64(6)
        a = rng.normal((4, 3))
        v = rng.normal((2,))
        t = rng.normal((4, 2))

        def fn(at, vt):
            joined = ad.concat(at, ad.broadcast_rows(vt, 4), axis=1)
            return ad.mse_to(ad.slice_cols(joined, 3, 5), t)

        assert ad.grad_check(fn, [a, v]) < 1e-8

    def test_mean_segmented_reshape(self):
        rng = SplitMix64(7)
        x = rng.normal((2, 4, 6, 3))

        def fn(xt):
            seg = ad.reshape(xt, (2, 4, 2, 3, 3))
            return ad.mean(ad.square(ad.mean(seg, axes=(3,))), None)

        assert ad.grad_check(fn, [x]) < 1e-7

    def test_epsilon_bounds_enforced(self):
        with pytest.raises(ValueError):
            ad.grad_check(lambda t: ad.mean(t, None), [np.ones(3)], epsilon=1e-2)

    def test_nonfinite_gradient_raises(self):
        def fn(t):
            return ad.mean(ad.square(ad.square(t)), None)

        with pytest.raises(NumericError):
            ad.grad_check(fn, [np.full(1, 1e200)])


class TestBceValues:
    def test_half_everywhere_against_ones(self):
        p = ad.Tensor(np.full((4, 4), 0.5))
        loss = ad.bce(p, np.ones((4, 4)))
        assert abs(loss.item() - np.log(2.0)) < 1e-12

    def test_perfect_prediction_is_clamp_limited(self):
        y = np.array([[0.0, 1.0], [1.0, 0.0]])
        loss = ad.bce(ad.Tensor(y.copy()), y)
        assert loss.item() <= 1.7e-6

    def test_hand_example(self):
        p = ad.Tensor(np.array([0.9, 0.2]))
        y = np.array([1.0, 0.0])
        want = (-np.log(0.9) - np.log(0.8)) / 2.0
        assert abs(ad.bce(p, y).item() - want) < 1e-12


class TestMacCounter:
    def test_counts_conv_and_linear(self):
        x = ad.Tensor(np.zeros((2, 4, 4, 3)))
        w = ad.Tensor(np.zeros((3, 3, 3, 5)))
        b = ad.Tensor(np.zeros(5))
        with ad.count_macs() as macs:
            ad.conv2d(x, w, b)
            ad.linear(ad.Tensor(np.zeros((2, 7))),
                      ad.Tensor(np.zeros((7, 3))), ad.Tensor(np.zeros(3)))
        assert macs.total == 2 * 4 * 4 * 5 * 3 * 9 + 2 * 7 * 3

    def test_nested_counters_both_accumulate(self):
        x = ad.Tensor(np.zeros((1, 2)))
        w = ad.Tensor(np.zeros((2, 2)))
        b = ad.Tensor(np.zeros(2))
        with ad.count_macs() as outer:
            with ad.count_macs() as inner:
                ad.linear(x, w, b)
            ad.linear(x, w, b)
        assert inner.total == 4
        assert outer.total == 8


class TestNoGrad:
    def test_no_graph_is_built(self):
        x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        with ad.no_grad():
            out = ad.square(x)
        assert not out.requires_grad
        assert out._parents == ()

    def test_determinism_of_forward(self):
        rng = SplitMix64(9)
        x = rng.normal((2, 8, 8, 4)).astype(np.float32)
        w = rng.normal((3, 3, 4, 4)).astype(np.float32)
        b = rng.normal((4,)).astype(np.float32)
        a1 = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
        a2 = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
        np.testing.assert_array_equal(a1, a2)
