"""Micro encoder-decoder reference network.

The reference configuration maps a 1x64x64 volume to a 64-channel encoder
map at 1/4 resolution, a 64-vector global feature, and a 16-channel decoder
map back at full resolution:

    encoder: conv3x3(1->16) s1, conv3x3(16->32) s2, conv3x3(32->64) s2
    decoder: 2 x (nearest-upsample 2x + conv3x3), 64->32->16

Every convolution is followed by the silu nonlinearity.  Weights are
fan-in-scaled uniform draws from the package splitmix stream; biases start
at zero.  Arrays are float32 for training and can be cloned to float64 for
finite-difference verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import SplitMix64, fan_in_uniform


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 1
    enc_channels: tuple[int, ...] = (16, 32, 64)
    enc_strides: tuple[int, ...] = (1, 2, 2)
    dec_channels: tuple[int, ...] = (32, 16)
    kernel: int = 3

    def __post_init__(self):
        if len(self.enc_channels) != len(self.enc_strides):
            raise ValueError("enc_channels and enc_strides length mismatch")
        if any(s not in (1, 2) for s in self.enc_strides):
            raise ValueError("encoder strides must be 1 or 2")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        n_down = sum(1 for s in self.enc_strides if s == 2)
        if len(self.dec_channels) != n_down:
            raise ValueError(
                f"decoder needs one level per stride-2 encoder level "
                f"({n_down}), got {len(self.dec_channels)}")

    @property
    def encoder_out_channels(self) -> int:
        return self.enc_channels[-1] if self.enc_channels else self.in_channels

    @property
    def decoder_out_channels(self) -> int:
        return self.dec_channels[-1] if self.dec_channels else self.encoder_out_channels

    @property
    def total_stride(self) -> int:
        s = 1
        for st in self.enc_strides:
            s *= st
        return s

    def layer_table(self) -> list[dict]:
        """Dimension table: one row per convolution, in parameter order."""
        rows = []
        cin = self.in_channels
        for i, (cout, stride) in enumerate(zip(self.enc_channels, self.enc_strides)):
            rows.append({"name": f"enc{i}", "cin": cin, "cout": cout,
                         "stride": stride, "kernel": self.kernel})
            cin = cout
        for i, cout in enumerate(self.dec_channels):
            rows.append({"name": f"dec{i}", "cin": cin, "cout": cout,
                         "stride": 1, "kernel": self.kernel})
            cin = cout
        return rows


@dataclass
class BackboneParams:
    config: BackboneConfig
    enc: list[tuple[Tensor, Tensor]] = field(default_factory=list)
    dec: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(self.enc):
            out += [(f"enc{i}.w", w), (f"enc{i}.b", b)]
        for i, (w, b) in enumerate(self.dec):
            out += [(f"dec{i}.w", w), (f"dec{i}.b", b)]
        return out

    def astype(self, dtype) -> "BackboneParams":
        conv = lambda pairs: [(ad.parameter(w.data.astype(dtype)),
                               ad.parameter(b.data.astype(dtype)))
                              for w, b in pairs]
        return BackboneParams(self.config, conv(self.enc), conv(self.dec))


def init_backbone(config: BackboneConfig, rng: SplitMix64,
                  dtype=np.float32) -> BackboneParams:
    k = config.kernel
    params = BackboneParams(config)
    cin = config.in_channels
    for cout in config.enc_channels:
        w = fan_in_uniform(rng, (k, k, cin, cout), fan_in=k * k * cin, dtype=dtype)
        params.enc.append((ad.parameter(w), ad.parameter(np.zeros(cout, dtype=dtype))))
        cin = cout
    for cout in config.dec_channels:
        w = fan_in_uniform(rng, (k, k, cin, cout), fan_in=k * k * cin, dtype=dtype)
        params.dec.append((ad.parameter(w), ad.parameter(np.zeros(cout, dtype=dtype))))
        cin = cout
    return params


def encode(params: BackboneParams, x: Tensor) -> Tensor:
    """Encoder feature map, [N, H/s, W/s, C_e] for input [N, H, W, C_in]."""
    cfg = params.config
    if x.data.ndim != 4 or x.data.shape[3] != cfg.in_channels:
        raise ValueError(f"expected [N,H,W,{cfg.in_channels}], got {x.data.shape}")
    if x.data.shape[1] % cfg.total_stride or x.data.shape[2] % cfg.total_stride:
        raise ValueError(
            f"spatial dims {x.data.shape[1:3]} not divisible by {cfg.total_stride}")
    out = x
    for (w, b), stride in zip(params.enc, cfg.enc_strides):
        out = ad.silu(ad.conv2d(out, w, b, stride=stride))
    return out


def gap(feat: Tensor) -> Tensor:
    """Global average pool: [N, H, W, C] -> [N, C]."""
    if feat.data.ndim != 4 or feat.data.size == 0:
        raise ValueError(f"expected a nonempty [N,H,W,C] grid, got {feat.data.shape}")
    return ad.mean(feat, axes=(1, 2))


def decode(params: BackboneParams, enc: Tensor) -> Tensor:
    """Decoder feature map at full input resolution, [N, H, W, C_d]."""
    out = enc
    for (w, b) in params.dec:
        out = ad.silu(ad.conv2d(ad.upsample2x(out), w, b, stride=1))
    return out


def volume_tensor(intensities: np.ndarray, dtype=np.float32) -> Tensor:
    """Wrap one [H, W] intensity grid as a [1, H, W, 1] input tensor."""
    return Tensor(np.asarray(intensities, dtype=dtype)[None, :, :, None])


def batch_tensor(grids: list[np.ndarray], dtype=np.float32) -> Tensor:
    """Stack [H, W] grids into a [N, H, W, 1] input tensor."""
    return Tensor(np.stack([np.asarray(g, dtype=dtype) for g in grids])[..., None])
