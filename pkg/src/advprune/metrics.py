"""Cost accounting and reporting.

Parameter counts cover conv/linear weights+biases and the two learnable
BatchNorm vectors.  FLOPs follow the multiply-plus-add convention
(2 * k^2 * C_in * C_out * H_out * W_out for convs, 2 * in * out for the
classifier); the MAC count is exactly half and is the headline figure used
for drop percentages and the retraining budget, since published tables use
the MAC convention.  Pooling, activations, and BN are excluded.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import NetworkDescriptor, propagate_shapes


def param_counts_by_layer(descriptor: NetworkDescriptor) -> list[int]:
    """Learnable parameter count per layer; zeros for parameter-free kinds."""
    counts = []
    for spec in descriptor.layers:
        if spec.kind == "conv":
            counts.append(spec.kernel_size ** 2 * spec.in_channels * spec.out_channels
                          + spec.out_channels)
        elif spec.kind == "batchnorm":
            counts.append(2 * spec.out_channels)
        elif spec.kind == "linear":
            counts.append(spec.in_channels * spec.out_channels + spec.out_channels)
        else:
            counts.append(0)
    return counts


def count_params(descriptor: NetworkDescriptor) -> int:
    return sum(param_counts_by_layer(descriptor))


def flop_counts_by_layer(descriptor: NetworkDescriptor) -> list[int]:
    """Multiply-add FLOPs per layer at the descriptor's input shape."""
    shapes = propagate_shapes(descriptor)
    counts = []
    for i, spec in enumerate(descriptor.layers):
        if spec.kind == "conv":
            _, h, w = shapes[i]
            counts.append(2 * spec.kernel_size ** 2 * spec.in_channels * spec.out_channels * h * w)
        elif spec.kind == "linear":
            counts.append(2 * spec.in_channels * spec.out_channels)
        else:
            counts.append(0)
    return counts


def count_flops(descriptor: NetworkDescriptor) -> int:
    return sum(flop_counts_by_layer(descriptor))


def count_macs(descriptor: NetworkDescriptor) -> int:
    """Multiply-accumulate count: exactly half the FLOP figure."""
    return count_flops(descriptor) // 2


def drop_percent(baseline: float, pruned: float) -> float:
    if baseline <= 0:
        raise ValueError("baseline figure must be positive")
    return 100.0 * (baseline - pruned) / baseline


@dataclass
class MetricsReport:
    """Cost/accuracy summary for one network, optionally against a baseline."""

    name: str
    params: int
    flops: int
    macs: int
    accuracy: float | None = None
    baseline_name: str | None = None
    params_drop_pct: float = 0.0
    flops_drop_pct: float = 0.0
    per_layer: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def format_table(self) -> str:
        """Two-decimal summary table in the published column style."""
        rows = [
            ("model", self.name),
            ("params", f"{self.params:d}"),
            ("params/M", f"{self.params / 1e6:.2f}"),
            ("params.drop/%", f"{self.params_drop_pct:.2f}"),
            ("FLOPs(MAC)/M", f"{self.macs / 1e6:.2f}"),
            ("FLOPs(mul+add)/M", f"{self.flops / 1e6:.2f}"),
            ("FLOPs.drop/%", f"{self.flops_drop_pct:.2f}"),
        ]
        if self.accuracy is not None:
            rows.append(("top1.acc/%", f"{self.accuracy:.2f}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def build_report(descriptor: NetworkDescriptor, baseline: NetworkDescriptor | None = None,
                 accuracy: float | None = None, name: str | None = None) -> MetricsReport:
    """Report for ``descriptor``; drops vs ``baseline`` (0.00 when absent).

    Baseline and pruned descriptors must index the same layers, which is how
    surgery preserves layer identity; per-layer survival compares prunable
    conv widths.
    """
    report = MetricsReport(
        name=name or descriptor.name,
        params=count_params(descriptor),
        flops=count_flops(descriptor),
        macs=count_macs(descriptor),
        accuracy=accuracy,
    )
    ref = baseline or descriptor
    if baseline is not None and len(baseline.layers) != len(descriptor.layers):
        raise ValueError("baseline and pruned descriptors have different layer counts")
    report.baseline_name = ref.name if baseline is not None else None
    report.params_drop_pct = drop_percent(count_params(ref), report.params)
    report.flops_drop_pct = drop_percent(count_flops(ref), report.flops)
    report.per_layer = [
        {
            "layer": int(i),
            "original": int(ref.layers[i].out_channels),
            "kept": int(descriptor.layers[i].out_channels),
        }
        for i in descriptor.prunable_layers
    ]
    return report


def export_scores(scores: dict[int, np.ndarray], path):
    """CSV of per-channel importance scores: layer, channel, score."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "channel", "score"])
        for layer in sorted(scores):
            for channel, value in enumerate(np.asarray(scores[layer], dtype=np.float64)):
                writer.writerow([layer, channel, repr(float(value))])


def load_scores(path) -> dict[int, np.ndarray]:
    """Inverse of :func:`export_scores`; exact round trip."""
    rows: dict[int, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["layer", "channel", "score"]:
            raise ValueError(f"{path}: not a score export")
        for row in reader:
            rows.setdefault(int(row["layer"]), []).append(
                (int(row["channel"]), float(row["score"]))
            )
    out = {}
    for layer, pairs in rows.items():
        pairs.sort()
        out[layer] = np.array([v for _, v in pairs], dtype=np.float64)
    return out


def plot_score_densities(scores: dict[int, np.ndarray], out_dir) -> list[str]:
    """One score-density PNG per layer; returns the written paths.

    Uses a Gaussian KDE when the scores have spread, falling back to a
    histogram for (near-)degenerate score vectors.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for layer in sorted(scores):
        values = np.asarray(scores[layer], dtype=np.float64)
        fig, ax = plt.subplots(figsize=(4, 3))
        if values.size > 1 and values.std() > 1e-9:
            from scipy.stats import gaussian_kde
            grid = np.linspace(0.0, 1.0, 201)
            density = gaussian_kde(values)(grid)
            ax.plot(grid, density)
            ax.fill_between(grid, density, alpha=0.3)
        else:
            ax.hist(values, bins=20, range=(0.0, 1.0))
        ax.set_xlabel("importance score")
        ax.set_ylabel("density")
        ax.set_title(f"layer {layer} ({values.size} channels)")
        fig.tight_layout()
        path = out_dir / f"scores_layer{layer}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(str(path))
    return written
