"""Run configuration.

A run is described by a flat JSON document with a closed key set; unknown
keys are rejected so typos fail loudly before any compute.  Internal field
names are descriptive; the short document keys (k, s_p, N, t_emp) are the
conventional knob names and map onto them one-to-one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .data import dataset_defaults

# Document key -> internal attribute.
KEY_MAP = {
    "arch": "arch",
    "dataset": "dataset",
    "data_dir": "data_dir",
    "num_classes": "num_classes",
    "k": "pruning_factor",
    "s_p": "pruning_interval",
    "N": "prune_epochs",
    "alpha": "alpha",
    "t_emp": "temperature",
    "lr": "lr",
    "momentum": "momentum",
    "weight_decay": "weight_decay",
    "batch_size": "batch_size",
    "baseline_epochs": "baseline_epochs",
    "retrain_cap": "retrain_cap",
    "seed": "seed",
    "loss_components": "loss_components",
    "out_dir": "out_dir",
}

VALID_COMPONENTS = ("at", "kd", "adv")


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending key."""


@dataclass
class RunConfig:
    arch: str = "vgg_small"
    dataset: str = "synthetic"
    data_dir: str | None = None
    num_classes: int | None = None
    pruning_factor: float = 0.3
    pruning_interval: int = 10
    prune_epochs: int = 30
    alpha: float = 0.3
    temperature: float = 4.0
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    baseline_epochs: int = 160
    retrain_cap: float = 4.0
    seed: int = 0
    # None means "phase default": {at, kd, adv} while pruning, {at, kd} for
    # retraining.
    loss_components: tuple[str, ...] | None = None
    out_dir: str = "run"

    def __post_init__(self):
        self.validate()

    def validate(self):
        from .model_zoo import ARCH_NAMES
        from .data import DatasetError

        if self.arch not in ARCH_NAMES:
            raise ConfigError(f"arch: unknown architecture {self.arch!r}")
        try:
            default_classes, _ = dataset_defaults(self.dataset)
        except DatasetError as exc:
            raise ConfigError(f"dataset: {exc}")
        if self.num_classes is None:
            self.num_classes = default_classes
        if self.num_classes < 1:
            raise ConfigError(f"num_classes: must be >= 1, got {self.num_classes}")
        if not 0.0 < self.pruning_factor < 1.0:
            raise ConfigError(f"k: must lie strictly between 0 and 1, got {self.pruning_factor}")
        if self.pruning_interval < 1:
            raise ConfigError(f"s_p: must be >= 1, got {self.pruning_interval}")
        if self.prune_epochs < 1:
            raise ConfigError(f"N: must be >= 1, got {self.prune_epochs}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha: must lie in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            raise ConfigError(f"t_emp: must be positive, got {self.temperature}")
        for key, value in (("lr", self.lr), ("batch_size", self.batch_size),
                           ("baseline_epochs", self.baseline_epochs),
                           ("retrain_cap", self.retrain_cap)):
            if not value > 0:
                raise ConfigError(f"{key}: must be positive, got {value}")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum/weight_decay: must be non-negative")
        if self.loss_components is not None:
            comps = tuple(self.loss_components)
            if not comps:
                raise ConfigError("loss_components: must name at least one component")
            for c in comps:
                if c not in VALID_COMPONENTS:
                    raise ConfigError(
                        f"loss_components: unknown component {c!r}; expected subset of {VALID_COMPONENTS}"
                    )
            if len(set(comps)) != len(comps):
                raise ConfigError("loss_components: duplicate entries")
            self.loss_components = comps
        if not self.out_dir:
            raise ConfigError("out_dir: must be a non-empty path")

    @classmethod
    def from_document(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = sorted(set(doc) - set(KEY_MAP))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key == "loss_components" and value is not None:
                value = tuple(value)
            kwargs[KEY_MAP[key]] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        return cls.from_document(doc)

    def to_document(self) -> dict:
        attrs = {name: getattr(self, attr) for name, attr in KEY_MAP.items()}
        if attrs["loss_components"] is not None:
            attrs["loss_components"] = list(attrs["loss_components"])
        return attrs

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2)

    def components_for(self, phase: str) -> tuple[str, ...]:
        """Effective loss components for "prune" or "retrain"."""
        if self.loss_components is not None:
            return self.loss_components
        return ("at", "kd", "adv") if phase == "prune" else ("at", "kd")

    def needs_data_dir(self) -> bool:
        return not self.dataset.startswith("synthetic")
