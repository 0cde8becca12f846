"""Structured pruning surgery.

``plan`` turns per-layer boolean keep masks into an explicit per-layer record
of which output and input indices survive, propagating kept sets through the
graph: BN/activation/pool layers follow their producer, concat junctions
offset their producers' indices into the stacked space, add junctions demand
identical kept sets on all inputs, and the classifier keeps the surviving
input columns.  ``apply_plan`` rebuilds a physically smaller network and
copies the surviving parameter slices.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
import torch

from .graph import (
    INPUT,
    GraphError,
    GraphNet,
    LayerSpec,
    NetworkDescriptor,
    check_structure,
)


class SurgeryError(ValueError):
    """Raised when a mask or plan cannot be applied to a descriptor."""


# Non-raising structural validation lives with the graph walker; re-exported
# here because surgery is where descriptors get rewritten and re-checked.
validate = check_structure


@dataclass(frozen=True)
class LayerPlan:
    """Surviving output/input indices of one layer, in original index space."""

    kept_out: tuple[int, ...]
    kept_in: tuple[int, ...]


@dataclass(frozen=True)
class PrunePlan:
    """Per-layer surviving indices for an entire network."""

    layer_plans: tuple[LayerPlan, ...]

    def kept_counts(self) -> tuple[int, ...]:
        return tuple(len(p.kept_out) for p in self.layer_plans)

    def to_text(self) -> str:
        doc = {
            "format": "advprune-plan-v1",
            "layers": [dataclasses.asdict(p) for p in self.layer_plans],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_text(cls, text: str) -> "PrunePlan":
        doc = json.loads(text)
        if doc.get("format") != "advprune-plan-v1":
            raise SurgeryError("not a prune-plan document")
        return cls(tuple(
            LayerPlan(kept_out=tuple(d["kept_out"]), kept_in=tuple(d["kept_in"]))
            for d in doc["layers"]
        ))


def plan(descriptor: NetworkDescriptor, masks: dict[int, np.ndarray]) -> PrunePlan:
    """Derive a prune plan from per-layer keep masks.

    ``masks`` must cover exactly the descriptor's prunable layers; each mask
    is a boolean array over that conv's original output channels with at
    least one True entry.
    """
    prunable = set(descriptor.prunable_layers)
    if set(masks) != prunable:
        extra = sorted(set(masks) - prunable)
        missing = sorted(prunable - set(masks))
        raise SurgeryError(
            f"masks must cover exactly the prunable layers; extra={extra} missing={missing}"
        )
    clean = {}
    for layer, mask in masks.items():
        mask = np.asarray(mask)
        if mask.dtype != np.bool_ or mask.ndim != 1:
            raise SurgeryError(f"layer {layer}: mask must be a 1-D boolean array")
        if mask.size != descriptor.layers[layer].out_channels:
            raise SurgeryError(
                f"layer {layer}: mask length {mask.size} != "
                f"{descriptor.layers[layer].out_channels} channels"
            )
        if not mask.any():
            raise SurgeryError(f"layer {layer}: mask keeps no channels")
        clean[layer] = mask

    kept_out: dict[int, tuple[int, ...]] = {}
    plans: list[LayerPlan] = []
    for i, spec in enumerate(descriptor.layers):
        kept_srcs = [
            tuple(range(descriptor.input_shape[0])) if j == INPUT else kept_out[j]
            for j in spec.inputs
        ]
        if spec.kind == "conv":
            kin = kept_srcs[0]
            if i in clean:
                kout = tuple(int(c) for c in np.flatnonzero(clean[i]))
            else:
                kout = tuple(range(spec.out_channels))
        elif spec.kind in ("batchnorm", "activation", "pool"):
            kin = kept_srcs[0]
            kout = kin
        elif spec.kind == "linear":
            kin = kept_srcs[0]
            kout = tuple(range(spec.out_channels))
        elif spec.kind == "add":
            if any(s != kept_srcs[0] for s in kept_srcs[1:]):
                raise SurgeryError(f"layer {i} (add): inputs kept different channel sets")
            kin = kept_srcs[0]
            kout = kin
        elif spec.kind == "concat":
            offset = 0
            stacked = []
            for j, kept in zip(spec.inputs, kept_srcs):
                width = descriptor.input_shape[0] if j == INPUT else descriptor.layers[j].out_channels
                stacked.extend(offset + c for c in kept)
                offset += width
            kin = tuple(stacked)
            kout = kin
        plans.append(LayerPlan(kept_out=kout, kept_in=kin))
        kept_out[i] = kout
    return PrunePlan(tuple(plans))


def pruned_descriptor(descriptor: NetworkDescriptor, prune_plan: PrunePlan) -> NetworkDescriptor:
    """Descriptor with channel counts shrunk to the plan's surviving sets."""
    if len(prune_plan.layer_plans) != len(descriptor.layers):
        raise SurgeryError("plan does not match descriptor")
    new_layers = []
    for spec, lp in zip(descriptor.layers, prune_plan.layer_plans):
        new_layers.append(dataclasses.replace(
            spec, in_channels=len(lp.kept_in), out_channels=len(lp.kept_out)
        ))
    desc = dataclasses.replace(descriptor, layers=tuple(new_layers))
    problems = check_structure(desc)
    if problems:
        raise SurgeryError("pruned descriptor invalid: " + "; ".join(problems))
    return desc


def apply_plan(net: GraphNet, prune_plan: PrunePlan) -> GraphNet:
    """Build the physically smaller network and copy surviving weight slices."""
    desc = pruned_descriptor(net.descriptor, prune_plan)
    pruned = GraphNet(desc).to(next(net.parameters()).dtype)
    with torch.no_grad():
        for i, spec in enumerate(net.descriptor.layers):
            lp = prune_plan.layer_plans[i]
            if spec.kind == "conv":
                src, dst = net.blocks[str(i)], pruned.blocks[str(i)]
                rows = torch.as_tensor(lp.kept_out, dtype=torch.long)
                cols = torch.as_tensor(lp.kept_in, dtype=torch.long)
                dst.weight.copy_(src.weight[rows][:, cols])
                dst.bias.copy_(src.bias[rows])
            elif spec.kind == "batchnorm":
                src, dst = net.blocks[str(i)], pruned.blocks[str(i)]
                kept = torch.as_tensor(lp.kept_out, dtype=torch.long)
                dst.weight.copy_(src.weight[kept])
                dst.bias.copy_(src.bias[kept])
                dst.running_mean.copy_(src.running_mean[kept])
                dst.running_var.copy_(src.running_var[kept])
                dst.num_batches_tracked.copy_(src.num_batches_tracked)
            elif spec.kind == "linear":
                src, dst = net.blocks[str(i)], pruned.blocks[str(i)]
                cols = torch.as_tensor(lp.kept_in, dtype=torch.long)
                dst.weight.copy_(src.weight[:, cols])
                dst.bias.copy_(src.bias)
    return pruned
