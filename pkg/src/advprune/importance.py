"""Feature-map channel importance scoring and selection.

A channel's raw importance is the L1 magnitude of its post-activation feature
maps accumulated over the batches seen since the last reset.  Scores are the
raw sums normalised by the layer's maximum, so the strongest channel scores
exactly 1; the pruning threshold is the layer's mean score scaled by the
pruning factor k, and channels strictly below it are dropped.
"""

from __future__ import annotations

import warnings

import numpy as np

from .validation import check_feature_maps, check_open_unit


class DegenerateScores(UserWarning):
    """All channels of a layer accumulated exactly zero magnitude."""


class ChannelImportance:
    """Accumulates per-channel L1 magnitudes for a set of scored layers.

    ``channel_counts`` maps layer index -> channel count.  Accumulators are
    float64 regardless of activation dtype, so long accumulation windows do
    not lose precision.
    """

    def __init__(self, channel_counts: dict[int, int]):
        if not channel_counts:
            raise ValueError("channel_counts must name at least one layer")
        for layer, c in channel_counts.items():
            if c < 1:
                raise ValueError(f"layer {layer} has no channels")
        self.channel_counts = dict(channel_counts)
        self.raw_sums = {l: np.zeros(c, dtype=np.float64) for l, c in channel_counts.items()}
        self.batches_seen = {l: 0 for l in channel_counts}

    def reset(self):
        for l in self.raw_sums:
            self.raw_sums[l][:] = 0.0
            self.batches_seen[l] = 0

    def accumulate(self, layer: int, feature_maps):
        """Add one batch of post-activation maps for ``layer``."""
        if layer not in self.raw_sums:
            raise KeyError(f"layer {layer} is not scored")
        check_feature_maps(f"layer {layer} feature maps", feature_maps,
                           channels=self.channel_counts[layer])
        per_channel = feature_maps.detach().double().abs().sum(dim=(0, 2, 3))
        self.raw_sums[layer] += per_channel.cpu().numpy()
        self.batches_seen[layer] += 1

    def finalize_scores(self, layer: int) -> np.ndarray:
        """Normalised scores in [0, 1]; the max-magnitude channel scores 1."""
        if self.batches_seen[layer] == 0:
            raise ValueError(f"layer {layer}: no batches accumulated")
        raw = self.raw_sums[layer]
        top = raw.max()
        if top <= 0.0:
            warnings.warn(f"layer {layer}: all channel magnitudes are zero",
                          DegenerateScores)
            return np.zeros_like(raw)
        return raw / top

    def finalize_all(self) -> dict[int, np.ndarray]:
        return {l: self.finalize_scores(l) for l in sorted(self.raw_sums)}


def prune_threshold(scores, k: float) -> float:
    """Layer threshold: the mean normalised score scaled by the pruning factor."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty 1-D array")
    check_open_unit("k", k)
    return float(k) * float(scores.mean())


def select_channels(scores, threshold: float) -> np.ndarray:
    """Boolean keep mask: channels scoring >= threshold survive.

    If every channel falls below the threshold, the single highest-scoring
    channel (first on ties) is kept so the layer never empties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty 1-D array")
    keep = scores >= threshold
    if not keep.any():
        keep[int(np.argmax(scores))] = True
    return keep


def keep_masks(scorer: ChannelImportance, k: float) -> dict[int, np.ndarray]:
    """Per-layer keep masks from the current accumulators."""
    masks = {}
    for layer, scores in scorer.finalize_all().items():
        masks[layer] = select_channels(scores, prune_threshold(scores, k))
    return masks
