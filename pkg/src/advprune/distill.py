"""Attention transfer and knowledge distillation losses.

Attention maps collapse a feature map's channel dimension by summing squared
magnitudes, so teacher and student maps stay comparable no matter how many
channels pruning removes.  The AT loss compares L2-normalised flattened maps
pairwise over the tap set; KD mixes a temperature-softened KL term with hard
cross-entropy.
"""

from __future__ import annotations

import warnings

import torch
import torch.nn.functional as F

from .validation import check_feature_maps, check_probability_rows

# Normalisation floor for attention-map and probability denominators.
TINY = 1e-12


class ZeroAttentionNorm(UserWarning):
    """An attention map had (near-)zero L2 norm and was floor-clamped."""


def attention_map(feature_maps: torch.Tensor) -> torch.Tensor:
    """Spatial attention map: per-position sum of squared channel activations.

    (batch, channel, h, w) -> (batch, h, w).  Non-negative by construction.
    """
    check_feature_maps("feature_maps", feature_maps)
    return feature_maps.pow(2).sum(dim=1)


def _normalise_flat(att: torch.Tensor) -> torch.Tensor:
    flat = att.flatten(1)
    norms = flat.norm(p=2, dim=1, keepdim=True)
    if (norms < TINY).any():
        warnings.warn("attention map with zero norm; clamped", ZeroAttentionNorm)
    return flat / norms.clamp_min(TINY)


def at_loss(student_maps, teacher_maps) -> torch.Tensor:
    """Attention-transfer loss summed over tap pairs, averaged over the batch.

    Both arguments are equal-length lists of attention maps (batch, h, w);
    per pair the maps are flattened, L2-normalised per sample, and the L2
    distance between them is averaged over the batch.  Invariant to positive
    rescaling of either network's feature maps.
    """
    if len(student_maps) != len(teacher_maps):
        raise ValueError("student and teacher tap lists differ in length")
    if not student_maps:
        raise ValueError("at least one tap pair is required")
    total = None
    for s, t in zip(student_maps, teacher_maps):
        if s.shape != t.shape:
            raise ValueError(f"attention shapes differ: {tuple(s.shape)} vs {tuple(t.shape)}")
        d = (_normalise_flat(s) - _normalise_flat(t)).norm(p=2, dim=1).mean()
        total = d if total is None else total + d
    return total


def soften(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """Temperature-softened class distribution along the last axis."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature!r}")
    return F.softmax(logits / temperature, dim=-1)


def kl_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """KL(p || q) along the last axis, averaged over leading axes.

    Zero p entries contribute zero.  q entries are floor-clamped at 1e-12;
    a clamp where p is nonzero is flagged with a warning since it means q
    assigned (near-)zero mass to an outcome p considers possible.
    """
    check_probability_rows("p", p)
    check_probability_rows("q", q)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same shape")
    if ((q < TINY) & (p.detach() > 0)).any():
        warnings.warn("q has zero mass where p is positive; clamped", UserWarning)
    q = q.clamp_min(TINY)
    terms = torch.where(p > 0, p * (p.clamp_min(TINY).log() - q.log()), p.new_zeros(()))
    per_row = terms.sum(dim=-1)
    return per_row.mean()


def kd_loss(student_logits, teacher_logits, labels, alpha: float, temperature: float) -> torch.Tensor:
    """Distillation objective: alpha-weighted softened KL plus hard CE.

    The KL term compares student-led softened distributions and is scaled by
    temperature^2 so its gradient magnitude stays comparable across
    temperatures; the cross-entropy term uses the raw student logits.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    ce = F.cross_entropy(student_logits, labels)
    if alpha == 0.0:
        return ce
    p = soften(student_logits, temperature)
    q = soften(teacher_logits.detach(), temperature)
    kl = (temperature ** 2) * kl_divergence(p, q)
    return alpha * kl + (1.0 - alpha) * ce
