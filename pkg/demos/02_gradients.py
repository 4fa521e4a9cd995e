#!/usr/bin/env python3
"""Verify reverse-mode gradients against central finite differences.

Every op, then the whole composed network (encoder -> pooled feature ->
hypernetwork -> generated head on decoder features -> loss), all in
float64.
"""

import numpy as np

from contseg import autodiff as ad
from contseg import backbone as bb
from contseg.heads import (apply_head, bce_loss, generate_head_params,
                           head_param_layout, init_hypernet)
from contseg.rng import SplitMix64

rng = SplitMix64(0)
x = rng.normal((2, 4, 4, 3))
w = rng.normal((3, 3, 3, 2)) * 0.4
b = rng.normal((2,))
bce_target = (rng.uniform((2, 4, 4)) > 0.5).astype(float)

checks = {
    "conv2d stride 1": (lambda xt, wt, bt: ad.mean(ad.square(
        ad.conv2d(xt, wt, bt)), None), [x, w, b]),
    "conv2d stride 2": (lambda xt, wt, bt: ad.mean(ad.square(
        ad.conv2d(xt, wt, bt, stride=2)), None), [x, w, b]),
    "silu . upsample": (lambda t: ad.mean(ad.silu(ad.upsample2x(t)), None),
                        [x]),
    "global avg pool": (lambda t: ad.mean(ad.square(bb.gap(t)), None), [x]),
    "sigmoid + bce": (lambda t: ad.bce(
        ad.sigmoid(ad.mean(t, axes=(3,))), bce_target), [x]),
}

print(f"{'op':<20}{'max rel. error':>16}")
for name, (fn, inputs) in checks.items():
    print(f"{name:<20}{ad.grad_check(fn, inputs):>16.2e}")

# the full composition at reduced dims
cfg = bb.BackboneConfig(enc_channels=(3, 4), enc_strides=(1, 2),
                        dec_channels=(3,))
params = bb.init_backbone(cfg, SplitMix64(1), dtype=np.float64)
layout = head_param_layout(3, 1, widths=(4, 3, 1))
mlp = init_hypernet(cfg.encoder_out_channels + 4, 6, layout, SplitMix64(2),
                    out_scale=0.5, dtype=np.float64)
omega = SplitMix64(3).normal((4,))
xin = SplitMix64(4).uniform((1, 8, 8, 1))
target = (SplitMix64(5).uniform((1, 8, 8)) > 0.5).astype(np.float64)
arrays = [xin] + [t.data for _, t in
                  params.named_parameters() + mlp.named_parameters()]


def full_model(xt, *weights):
    p = bb.BackboneParams(cfg)
    it = iter(weights)
    for _ in cfg.enc_channels:
        p.enc.append((next(it), next(it)))
    for _ in cfg.dec_channels:
        p.dec.append((next(it), next(it)))
    live = type(mlp)(*it)
    enc = bb.encode(p, xt)
    theta = generate_head_params(bb.gap(enc), omega, live)
    return bce_loss(apply_head(bb.decode(p, enc), theta, layout), target)


err = ad.grad_check(full_model, arrays)
print(f"{'composed model':<20}{err:>16.2e}")
assert err < 1e-4
print("\nall gradients verified below 1e-4 relative error")
