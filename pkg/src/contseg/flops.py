"""Analytic FLOPs and parameter accounting, plus continual growth curves.

All counts are exact integers.  One multiply-accumulate is `flops_per_mac`
floating-point operations (1 or 2 depending on counting convention; both
are reported by the CLI).  The growth model compares three strategies for
accumulating classes across learning steps:

* ours: a fixed backbone plus one tiny generated head per class; cost per
  step grows by (new heads) x (head + hypernet),
* decoder-per-step: a frozen encoder gains a whole new decoder each step,
* distill-double: the backbone itself stays fixed, but training any
  distillation baseline forwards the frozen teacher too, doubling the
  training-time backbone cost from step 2 on.

The scenario constants used for the published 3D setting live in
`paper_constants` (FLOPs, exact integers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import backbone as bb
from . import engine
from .errors import ConfigError, ConsistencyError
from .heads import HeadLayout

STRATEGIES = ("ours", "decoder-per-step", "distill-double")


@dataclass(frozen=True)
class CostEntry:
    """One component's cost.  `params` counts owned (stored) parameters;
    a generated head owns nothing, its weights are hypernetwork output."""

    name: str
    flops: int
    params: int = 0
    per_step_growth: int = 0


@dataclass(frozen=True)
class GrowthCurve:
    strategy: str
    cumulative_flops: tuple[int, ...]   # one entry per learning step

    def __post_init__(self):
        if any(b < a for a, b in zip(self.cumulative_flops,
                                     self.cumulative_flops[1:])):
            raise ConsistencyError("growth curve must be non-decreasing")


def conv_flops(spatial_elements: int, c_in: int, c_out: int,
               kernel_volume: int, flops_per_mac: int = 2) -> int:
    if min(c_in, c_out, kernel_volume) < 1 or spatial_elements < 0:
        raise ValueError("channel and kernel counts must be >= 1")
    if flops_per_mac not in (1, 2):
        raise ValueError("flops_per_mac must be 1 or 2")
    return spatial_elements * c_in * c_out * kernel_volume * flops_per_mac


def linear_flops(d_in: int, d_out: int, flops_per_mac: int = 2) -> int:
    return d_in * d_out * flops_per_mac


def head_flops(c_d: int, layout: HeadLayout, spatial_elements: int,
               flops_per_mac: int = 2) -> int:
    """Cost of one generated head; independent of how many classes exist."""
    if layout.in_channels != c_d:
        raise ValueError(f"layout expects {layout.in_channels} channels, got {c_d}")
    total = 0
    kv = layout.kernel ** 2
    for cin, width in layout.layer_dims():
        total += conv_flops(spatial_elements, cin, width, kv, flops_per_mac)
    return total


def hypernet_flops(in_dim: int, hidden: int, out_dim: int,
                   flops_per_mac: int = 2) -> int:
    return linear_flops(in_dim, hidden, flops_per_mac) \
        + linear_flops(hidden, out_dim, flops_per_mac)


def paper_constants() -> dict[str, CostEntry]:
    """Published 3D scenario, in exact FLOPs: full proposed model 661.6 G,
    plain backbone 659.4 G, decoder alone 466.08 G, one head 0.12 G."""
    return {
        "ours_base": CostEntry("ours_base", 661_600_000_000),
        "backbone": CostEntry("backbone", 659_400_000_000),
        "decoder": CostEntry("decoder", 466_080_000_000),
        "head": CostEntry("head", 120_000_000),
    }


def growth_model(strategy: str, n_steps: int, heads_per_step: list[int],
                 constants: dict[str, CostEntry]) -> GrowthCurve:
    """Cumulative per-step FLOPs for one strategy.

    `heads_per_step[t-1]` is the number of classes introduced at step t;
    step 1's heads are already inside the `ours_base` constant, so only
    heads added from step 2 on contribute growth.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    if len(heads_per_step) < n_steps:
        raise ConfigError("heads_per_step shorter than n_steps")
    curve = []
    for t in range(1, n_steps + 1):
        if strategy == "ours":
            added = sum(heads_per_step[1:t])
            curve.append(constants["ours_base"].flops
                         + added * constants["head"].flops)
        elif strategy == "decoder-per-step":
            curve.append(constants["backbone"].flops
                         + (t - 1) * constants["decoder"].flops)
        else:  # distill-double: teacher forward from step 2 on
            factor = 1 if t == 1 else 2
            curve.append(factor * constants["backbone"].flops)
    return GrowthCurve(strategy, tuple(curve))


# ---------------------------------------------------------------------------
# reference-net audit
# ---------------------------------------------------------------------------

def _analytic_backbone(config: bb.BackboneConfig, height: int, width: int,
                       flops_per_mac: int) -> tuple[list[CostEntry], int]:
    entries = []
    kv = config.kernel ** 2
    h, w = height, width
    cin = config.in_channels
    for i, (cout, stride) in enumerate(zip(config.enc_channels,
                                           config.enc_strides)):
        h, w = h // stride, w // stride
        entries.append(CostEntry(
            f"enc{i}", conv_flops(h * w, cin, cout, kv, flops_per_mac),
            params=kv * cin * cout + cout))
        cin = cout
    for i, cout in enumerate(config.dec_channels):
        h, w = h * 2, w * 2
        entries.append(CostEntry(
            f"dec{i}", conv_flops(h * w, cin, cout, kv, flops_per_mac),
            params=kv * cin * cout + cout))
        cin = cout
    return entries, h * w


def audit_reference_net(model, height: int, width: int,
                        flops_per_mac: int = 2) -> dict[str, CostEntry]:
    """Analytic cost of every component, verified against an instrumented
    forward pass that counts the multiply-accumulates actually executed.

    Raises ConsistencyError if the analytic model and the instrumented
    counter disagree anywhere.
    """
    config = model.backbone.config
    entries, out_elems = _analytic_backbone(config, height, width,
                                            flops_per_mac)
    backbone_total = sum(e.flops for e in entries)
    in_dim = config.encoder_out_channels + model.registry.dim
    hyper = CostEntry(
        "hypernet_per_class",
        hypernet_flops(in_dim, model.hyper_hidden, model.layout.total,
                       flops_per_mac),
        params=(in_dim * model.hyper_hidden + model.hyper_hidden
                + model.hyper_hidden * model.layout.total + model.layout.total))
    head = CostEntry(
        "head_per_class",
        head_flops(config.decoder_out_channels, model.layout, out_elems,
                   flops_per_mac),
        params=0)
    per_class = hyper.flops + head.flops

    # instrumented pass: one volume, every registered class
    x = np.zeros((height, width), dtype=np.float32)
    with ad.count_macs() as total_counter:
        with ad.count_macs() as backbone_counter:
            with ad.no_grad():
                xt = bb.volume_tensor(x, dtype=engine.model_dtype(model))
                _, f, decs = engine.forward_features(model, xt)
        with ad.count_macs() as class_counter:
            with ad.no_grad():
                engine.class_prob_tensors(model, f, decs[-1],
                                          model.registry.ids())
    n_classes = len(model.registry)
    checks = [
        ("backbone", backbone_counter.total * flops_per_mac, backbone_total),
        ("per-class heads", class_counter.total * flops_per_mac,
         per_class * n_classes),
        ("total", total_counter.total * flops_per_mac,
         backbone_total + per_class * n_classes),
    ]
    for name, instrumented, analytic in checks:
        if instrumented != analytic:
            raise ConsistencyError(
                f"{name}: instrumented {instrumented} != analytic {analytic}")

    out = {e.name: e for e in entries}
    out["backbone"] = CostEntry("backbone", backbone_total,
                                params=sum(e.params for e in entries))
    out["hypernet_per_class"] = hyper
    out["head_per_class"] = head
    out["per_class"] = CostEntry("per_class", per_class, params=hyper.params,
                                 per_step_growth=per_class)
    out["total"] = CostEntry(
        "total", backbone_total + per_class * n_classes,
        params=out["backbone"].params + hyper.params * n_classes)
    return out
