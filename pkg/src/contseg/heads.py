"""Image-aware class-specific output heads.

Per class, a private two-layer MLP (the hypernetwork) maps the concatenated
global image feature and class embedding to a flat parameter vector.  That
vector is unpacked into three small convolutions (widths 8, 8, 1) which are
applied to the decoder features; a sigmoid turns the final single-channel
map into per-pixel probabilities.  No state is shared between the MLPs of
different classes, so one class's loss cannot move another class's head
generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConsistencyError
from .rng import SplitMix64, fan_in_uniform

HEAD_WIDTHS = (8, 8, 1)


@dataclass(frozen=True)
class HeadLayout:
    """Parameter packing of one head: three convolutions, flattened.

    Blocks appear in order w1, b1, w2, b2, w3, b3.  A weight block for a
    layer with input channels c and output channels w holds k*k*c*w values,
    flattened with row index (i*k + j)*c + channel and column index the
    output channel.
    """

    kernel: int
    in_channels: int
    widths: tuple[int, int, int] = HEAD_WIDTHS
    blocks: tuple[tuple[str, int, int], ...] = ()  # (name, start, stop)

    @property
    def total(self) -> int:
        return self.blocks[-1][2] if self.blocks else 0

    def block(self, name: str) -> tuple[int, int]:
        for n, start, stop in self.blocks:
            if n == name:
                return start, stop
        raise KeyError(name)

    def layer_dims(self) -> list[tuple[int, int]]:
        cins = (self.in_channels, self.widths[0], self.widths[1])
        return list(zip(cins, self.widths))


def head_param_layout(c_d: int, k: int = 1,
                      widths: tuple[int, int, int] = HEAD_WIDTHS) -> HeadLayout:
    if c_d < 1:
        raise ValueError("in_channels must be >= 1")
    if k % 2 == 0:
        raise ValueError("head kernel size must be odd")
    if widths[-1] != 1:
        raise ValueError("final head layer must have width 1")
    blocks = []
    offset = 0
    cin = c_d
    for layer, w in enumerate(widths, start=1):
        wsize = k * k * cin * w
        blocks.append((f"w{layer}", offset, offset + wsize))
        offset += wsize
        blocks.append((f"b{layer}", offset, offset + w))
        offset += w
        cin = w
    return HeadLayout(kernel=k, in_channels=c_d, widths=widths,
                      blocks=tuple(blocks))


@dataclass
class HypernetMLP:
    """One class's private parameter generator: in -> hidden -> |theta|."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def in_dim(self) -> int:
        return self.w1.data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.data.shape[1]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(prefix + "w1", self.w1), (prefix + "b1", self.b1),
                (prefix + "w2", self.w2), (prefix + "b2", self.b2)]

    def astype(self, dtype) -> "HypernetMLP":
        return HypernetMLP(*(ad.parameter(t.data.astype(dtype))
                             for t in (self.w1, self.b1, self.w2, self.b2)))


def init_hypernet(in_dim: int, hidden: int, layout: HeadLayout,
                  rng: SplitMix64, out_scale: float = 0.01,
                  dtype=np.float32) -> HypernetMLP:
    """Fresh hypernetwork; the output layer is scaled down so a new class
    starts with near-zero logits and cannot disturb training."""
    w1 = fan_in_uniform(rng, (in_dim, hidden), fan_in=in_dim, dtype=dtype)
    w2 = fan_in_uniform(rng, (hidden, layout.total), fan_in=hidden,
                        scale=out_scale, dtype=dtype)
    return HypernetMLP(
        ad.parameter(w1), ad.parameter(np.zeros(hidden, dtype=dtype)),
        ad.parameter(w2), ad.parameter(np.zeros(layout.total, dtype=dtype)))


def generate_head_params(f: Tensor, omega: np.ndarray,
                         mlp: HypernetMLP) -> Tensor:
    """theta = MLP([f, omega]) for a batch of global features f [N, C_e]."""
    n, c_e = f.data.shape
    omega = np.asarray(omega, dtype=f.data.dtype)
    if c_e + omega.shape[0] != mlp.in_dim:
        raise ValueError(
            f"feature {c_e} + embedding {omega.shape[0]} != MLP input {mlp.in_dim}")
    joined = ad.concat(f, ad.broadcast_rows(Tensor(omega), n), axis=1)
    hidden = ad.silu(ad.linear(joined, mlp.w1, mlp.b1))
    return ad.linear(hidden, mlp.w2, mlp.b2)


def apply_head(dec: Tensor, theta: Tensor, layout: HeadLayout) -> Tensor:
    """Per-pixel probabilities [N, H, W] from decoder features [N, H, W, C_d]
    and per-sample head parameters theta [N, |theta|]."""
    n, h, w, c = dec.data.shape
    if c != layout.in_channels:
        raise ConsistencyError(
            f"decoder has {c} channels, layout expects {layout.in_channels}")
    if theta.data.shape != (n, layout.total):
        raise ConsistencyError(
            f"theta shape {theta.data.shape} != ({n}, {layout.total})")
    k = layout.kernel
    out = dec
    for layer, (cin, width) in enumerate(layout.layer_dims(), start=1):
        ws, we = layout.block(f"w{layer}")
        bs, be = layout.block(f"b{layer}")
        wk = ad.reshape(ad.slice_cols(theta, ws, we), (n, k * k * cin, width))
        bk = ad.slice_cols(theta, bs, be)
        out = ad.conv2d_per_sample(out, wk, bk, k=k)
        if layer < len(layout.widths):
            out = ad.silu(out)
    return ad.sigmoid(ad.reshape(out, (n, h, w)))


def bce_loss(pred: Tensor, target: np.ndarray, clamp: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy; targets may be binary or soft."""
    return ad.bce(pred, target, clamp=clamp)
