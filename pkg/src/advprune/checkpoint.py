"""Checkpoint persistence.

A checkpoint bundles the architecture descriptor (as its JSON text, the
canonical companion document), the state dict, the run config document, and
bookkeeping.  Writes are atomic (temp file + rename) so an interrupted run
never leaves a truncated checkpoint behind.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass, field

import torch

from .graph import GraphNet, NetworkDescriptor

FORMAT = "advprune-checkpoint-v1"


class MissingArtifact(FileNotFoundError):
    """A required run artifact (checkpoint, plan, config) is absent."""


@dataclass
class Checkpoint:
    descriptor: NetworkDescriptor
    state_dict: dict
    config: dict = field(default_factory=dict)
    epoch: int = 0
    metrics: dict | None = None
    extra_state: dict | None = None

    def to_network(self) -> GraphNet:
        net = GraphNet(self.descriptor)
        net.load_state_dict(self.state_dict)
        return net


def save_checkpoint(path, ckpt: Checkpoint):
    payload = {
        "format": FORMAT,
        "descriptor": ckpt.descriptor.to_json(),
        "state_dict": ckpt.state_dict,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics,
        "extra_state": ckpt.extra_state,
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    if not os.path.exists(path):
        raise MissingArtifact(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise ValueError(f"{path}: not an advprune checkpoint")
    return Checkpoint(
        descriptor=NetworkDescriptor.from_json(payload["descriptor"]),
        state_dict=payload["state_dict"],
        config=payload.get("config") or {},
        epoch=payload.get("epoch", 0),
        metrics=payload.get("metrics"),
        extra_state=payload.get("extra_state"),
    )


def fingerprint(module: torch.nn.Module) -> str:
    """SHA-256 over the state dict in key order; equal nets hash equal."""
    h = hashlib.sha256()
    for key, tensor in sorted(module.state_dict().items()):
        h.update(key.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
