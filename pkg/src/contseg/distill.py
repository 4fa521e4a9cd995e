"""Distillation baselines: auxiliary losses against a frozen previous-stage
model.

Three variants, all nonnegative and exactly zero when student and teacher
agree on the compared quantities:

* prediction-level: binary cross-entropy of the student's old-class
  probabilities against temperature-sharpened teacher probabilities,
* feature-level: mean squared difference of decoder features,
* pooled-feature: mean squared difference of width- and height-pooled
  marginals of squared activations, at several scales over the whole
  feature pyramid.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def freeze(model) -> None:
    """Marks every parameter non-trainable; forwards then build no graph."""
    for _, t in model.named_parameters():
        t.requires_grad = False
        t.grad = None


def sharpen(probs: np.ndarray, temperature: float,
            clamp: float = 1e-7) -> np.ndarray:
    """Temperature transform in the logit domain: sigma(logit(p) / T).

    T = 1 is the identity; T < 1 sharpens toward {0, 1}, T > 1 softens
    toward 1/2.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    p = np.clip(probs, clamp, 1.0 - clamp)
    logit = np.log(p) - np.log1p(-p)
    return 1.0 / (1.0 + np.exp(-logit / temperature))


def lwf_loss(student_probs: dict[int, Tensor],
             teacher_probs: dict[int, np.ndarray],
             temperature: float = 1.0) -> Tensor:
    """Mean BCE of sharpened teacher probabilities as soft targets."""
    if set(student_probs) != set(teacher_probs):
        raise ValueError(
            f"class sets differ: {sorted(student_probs)} vs {sorted(teacher_probs)}")
    terms = [ad.bce(student_probs[c], sharpen(teacher_probs[c], temperature))
             for c in sorted(student_probs)]
    return ad.scale(ad.add_n(terms), 1.0 / len(terms))


def ilt_loss(student_feat: Tensor, teacher_feat: np.ndarray) -> Tensor:
    """Mean squared difference over all feature entries."""
    return ad.mse_to(student_feat, teacher_feat)


def _pooled_marginals(feat_sq: np.ndarray | Tensor, scale: int):
    """Width- and height-pooled marginals of an [N, H, W, C] grid, the
    pooled axis split into `scale` equal segments."""
    is_tensor = isinstance(feat_sq, Tensor)
    shape = feat_sq.data.shape if is_tensor else feat_sq.shape
    n, h, w, c = shape
    if h % scale or w % scale:
        raise ValueError(f"scale {scale} does not divide spatial dims {(h, w)}")
    if is_tensor:
        wide = ad.mean(ad.reshape(feat_sq, (n, h, scale, w // scale, c)),
                       axes=(3,))
        tall = ad.mean(ad.reshape(feat_sq, (n, scale, h // scale, w, c)),
                       axes=(2,))
    else:
        wide = feat_sq.reshape(n, h, scale, w // scale, c).mean(axis=3)
        tall = feat_sq.reshape(n, scale, h // scale, w, c).mean(axis=2)
    return wide, tall


def plop_loss(student_pyramid: list[Tensor],
              teacher_pyramid: list[np.ndarray],
              scales: tuple[int, ...] = (1, 2)) -> Tensor:
    """Average over pyramid levels, scales, and the two pooled axes of the
    squared-activation marginal mismatch."""
    if len(student_pyramid) != len(teacher_pyramid):
        raise ValueError("pyramids have different depths")
    terms = []
    for s_feat, t_feat in zip(student_pyramid, teacher_pyramid):
        if s_feat.data.shape != t_feat.shape:
            raise ValueError(
                f"level shape mismatch {s_feat.data.shape} vs {t_feat.shape}")
        s_sq = ad.square(s_feat)
        t_sq = np.asarray(t_feat) ** 2
        for scale in scales:
            s_wide, s_tall = _pooled_marginals(s_sq, scale)
            t_wide, t_tall = _pooled_marginals(t_sq, scale)
            terms.append(ad.mse_to(s_wide, t_wide))
            terms.append(ad.mse_to(s_tall, t_tall))
    return ad.scale(ad.add_n(terms), 1.0 / len(terms))
