"""Layer-graph network representation.

Networks are described as a flat list of layer specs in topological order.
Each layer names the indices of its producers, so branching (residual adds,
inception concats) and plain chains use the same machinery.  The builders in
:mod:`advprune.model_zoo` emit descriptors; :mod:`advprune.surgery` rewrites
them; :mod:`advprune.metrics` walks them to count parameters and FLOPs.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

# Sentinel producer index meaning "the network input tensor".
INPUT = -1

KINDS = frozenset({"conv", "batchnorm", "activation", "pool", "linear", "add", "concat"})
CONNECTIONS = frozenset({"sequential", "residual-branch", "inception-branch"})


class GraphError(ValueError):
    """Raised for malformed descriptors or impossible graph operations."""


@dataclass(frozen=True)
class LayerSpec:
    """One node of the network graph.

    ``in_channels``/``out_channels`` track the channel width of the stream
    through every node, including parameter-free ones, so surgery can slice
    consistently.  ``op`` disambiguates parameter-free kinds ("max" or
    "global_avg" for pools, "relu" for activations).
    """

    kind: str
    inputs: tuple[int, ...]
    in_channels: int
    out_channels: int
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    op: str = ""
    connection: str = "sequential"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"unknown layer kind {self.kind!r}")
        if self.connection not in CONNECTIONS:
            raise GraphError(f"unknown connection tag {self.connection!r}")
        if not self.inputs:
            raise GraphError("layer must name at least one input")
        if self.in_channels < 1 or self.out_channels < 1:
            raise GraphError("channel counts must be positive")


@dataclass(frozen=True)
class NetworkDescriptor:
    """Immutable architecture description; safe to share between networks."""

    name: str
    layers: tuple[LayerSpec, ...]
    attention_taps: tuple[int, ...]
    prunable_layers: tuple[int, ...]
    input_shape: tuple[int, int, int]
    num_classes: int

    def __post_init__(self):
        for i, spec in enumerate(self.layers):
            for j in spec.inputs:
                if j != INPUT and not 0 <= j < i:
                    raise GraphError(f"layer {i} references invalid producer {j}")
        for t in self.attention_taps:
            if not 0 <= t < len(self.layers):
                raise GraphError(f"attention tap {t} out of range")
        seen = set()
        for p in self.prunable_layers:
            if not 0 <= p < len(self.layers) or self.layers[p].kind != "conv":
                raise GraphError(f"prunable layer {p} is not a convolution")
            if p in seen:
                raise GraphError(f"duplicate prunable layer {p}")
            seen.add(p)

    @property
    def output_layer(self) -> int:
        return len(self.layers) - 1

    def consumers(self) -> dict[int, list[int]]:
        """Map each layer index (and INPUT) to the indices consuming it."""
        out: dict[int, list[int]] = {INPUT: []}
        for i in range(len(self.layers)):
            out[i] = []
        for i, spec in enumerate(self.layers):
            for j in spec.inputs:
                out[j].append(i)
        return out

    def to_json(self) -> str:
        doc = {
            "format": "advprune-descriptor-v1",
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "attention_taps": list(self.attention_taps),
            "prunable_layers": list(self.prunable_layers),
            "layers": [dataclasses.asdict(spec) for spec in self.layers],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NetworkDescriptor":
        doc = json.loads(text)
        if doc.get("format") != "advprune-descriptor-v1":
            raise GraphError("not a descriptor document")
        layers = tuple(
            LayerSpec(**{**d, "inputs": tuple(d["inputs"])}) for d in doc["layers"]
        )
        return cls(
            name=doc["name"],
            layers=layers,
            attention_taps=tuple(doc["attention_taps"]),
            prunable_layers=tuple(doc["prunable_layers"]),
            input_shape=tuple(doc["input_shape"]),
            num_classes=int(doc["num_classes"]),
        )


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def propagate_shapes(descriptor: NetworkDescriptor, input_shape=None) -> list[tuple[int, int, int]]:
    """Per-layer output shapes as (channels, height, width).

    Raises GraphError on the first structural problem; use
    :func:`check_structure` for a non-raising report.
    """
    problems, shapes = _walk_shapes(descriptor, input_shape)
    if problems:
        raise GraphError(problems[0])
    return shapes


def check_structure(descriptor: NetworkDescriptor, input_shape=None) -> list[str]:
    """Structural validation; returns mismatch descriptions (empty when valid).

    Checks shape compatibility layer by layer, attention-tap resolutions, and
    that prunable channel streams end in channel-consuming layers (so an add
    or concat junction never receives a pruned stream).
    """
    problems, shapes = _walk_shapes(descriptor, input_shape)
    if problems:
        return problems

    if descriptor.layers[descriptor.output_layer].kind != "linear":
        problems.append("final layer must be linear")
    else:
        last = descriptor.layers[descriptor.output_layer]
        if last.out_channels != descriptor.num_classes:
            problems.append(
                f"layer {descriptor.output_layer} (linear): {last.out_channels} outputs "
                f"!= {descriptor.num_classes} classes"
            )

    resolutions = set()
    for t in descriptor.attention_taps:
        c, h, w = shapes[t]
        if (h, w) in resolutions:
            problems.append(f"attention tap {t} repeats resolution {h}x{w}")
        resolutions.add((h, w))

    consumers = descriptor.consumers()
    for p in descriptor.prunable_layers:
        frontier = [p]
        while frontier:
            node = frontier.pop()
            for c in consumers[node]:
                kind = descriptor.layers[c].kind
                if kind in ("batchnorm", "activation", "pool"):
                    frontier.append(c)
                elif kind in ("add", "concat"):
                    problems.append(
                        f"layer {p} (conv): prunable stream reaches {kind} junction {c}"
                    )
    return problems


def _walk_shapes(descriptor, input_shape):
    problems: list[str] = []
    in_shape = tuple(input_shape) if input_shape is not None else descriptor.input_shape
    shapes: list[tuple[int, int, int]] = []

    for i, spec in enumerate(descriptor.layers):
        srcs = [in_shape if j == INPUT else shapes[j] for j in spec.inputs]
        c, h, w = srcs[0]
        label = f"layer {i} ({spec.kind})"
        out = None

        if spec.kind in ("conv", "batchnorm", "activation", "pool", "linear"):
            if len(srcs) != 1:
                problems.append(f"{label}: expects one input, got {len(srcs)}")
                break
            if spec.in_channels != c:
                problems.append(f"{label}: expected {spec.in_channels} input channels, got {c}")
                break

        if spec.kind == "conv":
            oh = _conv_out(h, spec.kernel_size, spec.stride, spec.padding)
            ow = _conv_out(w, spec.kernel_size, spec.stride, spec.padding)
            if oh < 1 or ow < 1:
                problems.append(f"{label}: spatial size {h}x{w} too small for kernel")
                break
            out = (spec.out_channels, oh, ow)
        elif spec.kind in ("batchnorm", "activation"):
            if spec.out_channels != c:
                problems.append(f"{label}: channel count must be preserved")
                break
            out = (c, h, w)
        elif spec.kind == "pool":
            if spec.out_channels != c:
                problems.append(f"{label}: channel count must be preserved")
                break
            if spec.op == "global_avg":
                out = (c, 1, 1)
            else:
                oh = _conv_out(h, spec.kernel_size, spec.stride, spec.padding)
                ow = _conv_out(w, spec.kernel_size, spec.stride, spec.padding)
                if oh < 1 or ow < 1:
                    problems.append(f"{label}: spatial size {h}x{w} too small for pooling")
                    break
                out = (c, oh, ow)
        elif spec.kind == "linear":
            if (h, w) != (1, 1):
                problems.append(f"{label}: needs 1x1 spatial input, got {h}x{w}")
                break
            out = (spec.out_channels, 1, 1)
        elif spec.kind == "add":
            if any(s != srcs[0] for s in srcs[1:]):
                problems.append(f"{label}: mismatched input shapes {srcs}")
                break
            if spec.in_channels != c or spec.out_channels != c:
                problems.append(f"{label}: channel bookkeeping disagrees with inputs")
                break
            out = (c, h, w)
        elif spec.kind == "concat":
            if any((s[1], s[2]) != (h, w) for s in srcs[1:]):
                problems.append(f"{label}: mismatched spatial shapes {srcs}")
                break
            total = sum(s[0] for s in srcs)
            if spec.out_channels != total:
                problems.append(f"{label}: expected {spec.out_channels} channels, inputs give {total}")
                break
            out = (total, h, w)

        shapes.append(out)
    return problems, shapes


class GraphNet(nn.Module):
    """Executable network interpreting a :class:`NetworkDescriptor`.

    Parameterised layers live in a ModuleDict keyed by layer index; pools,
    activations and junctions run functionally.  ``forward(x, collect=...)``
    optionally returns intermediate outputs by layer index, which is how
    attention taps and importance accumulation observe the network.
    """

    def __init__(self, descriptor: NetworkDescriptor, seed: int | None = None):
        super().__init__()
        self.descriptor = descriptor
        blocks: dict[str, nn.Module] = {}
        for i, spec in enumerate(descriptor.layers):
            if spec.kind == "conv":
                blocks[str(i)] = nn.Conv2d(
                    spec.in_channels,
                    spec.out_channels,
                    spec.kernel_size,
                    stride=spec.stride,
                    padding=spec.padding,
                )
            elif spec.kind == "batchnorm":
                blocks[str(i)] = nn.BatchNorm2d(spec.out_channels)
            elif spec.kind == "linear":
                blocks[str(i)] = nn.Linear(spec.in_channels, spec.out_channels)
        self.blocks = nn.ModuleDict(blocks)
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int):
        """Deterministic fan-in scaled normal init from an explicit generator."""
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for i in sorted(int(k) for k in self.blocks.keys()):
                m = self.blocks[str(i)]
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                    m.bias.zero_()
                elif isinstance(m, nn.Linear):
                    m.weight.normal_(0.0, math.sqrt(1.0 / m.in_features), generator=gen)
                    m.bias.zero_()
                elif isinstance(m, nn.BatchNorm2d):
                    m.weight.fill_(1.0)
                    m.bias.zero_()
                    m.reset_running_stats()

    def forward(self, x, collect=None):
        wanted = set(collect) if collect is not None else None
        grabbed: dict[int, torch.Tensor] = {}
        outputs: list[torch.Tensor] = []
        for i, spec in enumerate(self.descriptor.layers):
            vals = [x if j == INPUT else outputs[j] for j in spec.inputs]
            if spec.kind == "linear":
                v = vals[0]
                out = self.blocks[str(i)](v.flatten(1) if v.dim() > 2 else v)
            elif spec.kind in ("conv", "batchnorm"):
                out = self.blocks[str(i)](vals[0])
            elif spec.kind == "activation":
                out = F.relu(vals[0])
            elif spec.kind == "pool":
                if spec.op == "global_avg":
                    out = vals[0].mean(dim=(2, 3))
                else:
                    out = F.max_pool2d(
                        vals[0], spec.kernel_size, stride=spec.stride, padding=spec.padding
                    )
            elif spec.kind == "add":
                out = vals[0] + vals[1]
            elif spec.kind == "concat":
                out = torch.cat(vals, dim=1)
            outputs.append(out)
            if wanted is not None and i in wanted:
                grabbed[i] = out
        logits = outputs[-1]
        if collect is None:
            return logits
        return logits, grabbed


def post_activation_index(descriptor: NetworkDescriptor, conv_index: int) -> int:
    """Index of the activation at the end of a conv's norm/activation chain.

    Importance scores are measured on post-activation feature maps, so each
    prunable conv needs the relu that closes its conv->bn->relu chain.
    """
    consumers = descriptor.consumers()
    node = conv_index
    while True:
        next_same_stream = [
            c for c in consumers[node] if descriptor.layers[c].kind in ("batchnorm", "activation")
        ]
        if not next_same_stream:
            raise GraphError(f"no activation downstream of conv {conv_index}")
        node = next_same_stream[0]
        if descriptor.layers[node].kind == "activation":
            return node
