"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np
import torch


def check_positive(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def check_open_unit(name, value):
    """Validate 0 < value < 1 (pruning factors, mixing weights)."""
    if not 0.0 < float(value) < 1.0:
        raise ValueError(f"{name} must lie strictly between 0 and 1, got {value!r}")
    return float(value)


def check_feature_maps(name, t, channels=None):
    """Validate a non-empty 4-D (batch, channel, h, w) feature-map tensor."""
    if not isinstance(t, torch.Tensor) or t.dim() != 4:
        raise ValueError(f"{name} must be a 4-D feature-map tensor")
    if t.shape[0] < 1:
        raise ValueError(f"{name} has an empty batch")
    if channels is not None and t.shape[1] != channels:
        raise ValueError(f"{name} has {t.shape[1]} channels, expected {channels}")
    return t

def check_probability_rows(name, t, atol=1e-5):
    """Validate that the last axis of ``t`` holds probability vectors."""
    arr = t.detach() if isinstance(t, torch.Tensor) else torch.as_tensor(np.asarray(t))
    if arr.numel() == 0:
        raise ValueError(f"{name} is empty")
    if (arr < -atol).any():
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(dim=-1)
    if (sums - 1.0).abs().max().item() > atol:
        raise ValueError(f"{name} rows must sum to 1")
    return t
