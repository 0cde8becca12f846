"""Dataset loading.

Two sources: torchvision CIFAR-10/100 (requires a data directory) and a
fully deterministic synthetic dataset of seeded Gaussian blobs for tests and
desk-scale runs.  Synthetic classes are coded by blob position on a circle
plus a class color and blob width, so images are strongly learnable by a
small CNN; no augmentation is applied to synthetic data since random crops
or flips would destroy the position coding.

Dataset names: "cifar10", "cifar100", "synthetic" (5000 train / 1000 test
samples), or "synthetic:N" / "synthetic:N/M" to choose split sizes.
"""

from __future__ import annotations

import os

import torch
from torch.utils.data import TensorDataset

DATA_DIR_ENV = "ADVPRUNE_DATA_DIR"

_SYNTH_TRAIN, _SYNTH_TEST = 5000, 1000


class DatasetError(ValueError):
    """Unknown dataset name or missing data directory."""


def synthetic_blobs(num_samples: int, num_classes: int = 10, image_size: int = 32,
                    seed: int = 0, salt: int = 0) -> TensorDataset:
    """Seeded Gaussian-blob images; same arguments always give the same tensors.

    ``seed`` fixes the class templates (colors, blob widths), so train and
    test splits built from the same seed describe the same task; ``salt``
    separates the per-sample draws of different splits.
    """
    if num_samples < 1 or num_classes < 1:
        raise DatasetError("num_samples and num_classes must be positive")

    # Class templates: centers evenly spaced on a circle, a random color, and
    # a class-specific blob width.  Template RNG depends on seed only, never
    # on salt or sample count.
    template_gen = torch.Generator().manual_seed(seed)
    angles = torch.arange(num_classes, dtype=torch.float64) * (2 * torch.pi / num_classes)
    radius = image_size * 0.28
    mid = (image_size - 1) / 2.0
    centers = torch.stack([mid + radius * torch.cos(angles), mid + radius * torch.sin(angles)], dim=1)
    colors = torch.rand((num_classes, 3), generator=template_gen, dtype=torch.float64) * 2.0 - 1.0
    colors = colors / colors.norm(dim=1, keepdim=True).clamp_min(1e-6)
    widths = 2.0 + 1.2 * torch.rand((num_classes,), generator=template_gen, dtype=torch.float64)

    gen = torch.Generator().manual_seed(seed * 1000003 + salt + 1)
    labels = torch.randint(0, num_classes, (num_samples,), generator=gen)
    jitter = torch.randn((num_samples, 2), generator=gen, dtype=torch.float64) * 1.25
    noise = torch.randn((num_samples, 3, image_size, image_size), generator=gen,
                        dtype=torch.float64) * 0.25

    coords = torch.arange(image_size, dtype=torch.float64)
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    cy = centers[labels, 0] + jitter[:, 0]
    cx = centers[labels, 1] + jitter[:, 1]
    dist2 = (yy - cy.view(-1, 1, 1)) ** 2 + (xx - cx.view(-1, 1, 1)) ** 2
    bump = torch.exp(-dist2 / (2.0 * widths[labels].view(-1, 1, 1) ** 2))
    images = noise + 3.0 * colors[labels].view(-1, 3, 1, 1) * bump.unsqueeze(1)
    return TensorDataset(images.float(), labels.long())


def _parse_synthetic(name: str):
    sizes = name.split(":", 1)[1] if ":" in name else ""
    if not sizes:
        return _SYNTH_TRAIN, _SYNTH_TEST
    try:
        if "/" in sizes:
            train_n, test_n = (int(p) for p in sizes.split("/", 1))
        else:
            train_n = int(sizes)
            test_n = max(1, train_n // 5)
        if train_n < 1 or test_n < 1:
            raise ValueError
    except ValueError:
        raise DatasetError(f"bad synthetic size spec {name!r}; use synthetic:N or synthetic:N/M")
    return train_n, test_n


def dataset_defaults(name: str) -> tuple[int, tuple[int, int, int]]:
    """(default num_classes, input_shape) for a dataset name."""
    if name.startswith("synthetic"):
        _parse_synthetic(name)
        return 10, (3, 32, 32)
    if name == "cifar10":
        return 10, (3, 32, 32)
    if name == "cifar100":
        return 100, (3, 32, 32)
    raise DatasetError(f"unknown dataset {name!r}")


def load_dataset(name: str, *, split: str = "train", data_dir: str | None = None,
                 num_classes: int | None = None, seed: int = 0):
    """Instantiate a dataset split; raises DatasetError for bad names/dirs."""
    if split not in ("train", "test"):
        raise DatasetError(f"split must be 'train' or 'test', got {split!r}")
    default_classes, _ = dataset_defaults(name)

    if name.startswith("synthetic"):
        train_n, test_n = _parse_synthetic(name)
        n = train_n if split == "train" else test_n
        # Same class templates for both splits; disjoint sample streams.
        return synthetic_blobs(n, num_classes=num_classes or default_classes,
                               seed=seed, salt=0 if split == "train" else 1)

    if num_classes is not None and num_classes != default_classes:
        raise DatasetError(f"{name} has {default_classes} classes, got num_classes={num_classes}")
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise DatasetError(
            f"data_dir is required for {name} (set the key or {DATA_DIR_ENV})"
        )
    if not os.path.isdir(data_dir):
        raise DatasetError(f"data_dir {data_dir!r} does not exist")

    import torchvision.transforms as T
    from torchvision import datasets

    mean, std = (0.4914, 0.4822, 0.4465), (0.2470, 0.2435, 0.2616)
    if split == "train":
        transform = T.Compose([
            T.RandomCrop(32, padding=4),
            T.RandomHorizontalFlip(),
            T.ToTensor(),
            T.Normalize(mean, std),
        ])
    else:
        transform = T.Compose([T.ToTensor(), T.Normalize(mean, std)])
    cls = datasets.CIFAR10 if name == "cifar10" else datasets.CIFAR100
    try:
        return cls(root=data_dir, train=split == "train", transform=transform, download=False)
    except RuntimeError as exc:
        raise DatasetError(f"{name} not found under {data_dir!r}: {exc}")
