"""Training orchestration.

Three sklearn-style estimators cover the pipeline's phases:

* :class:`TeacherTrainer` pretrains a baseline network with plain
  cross-entropy and the step-decay schedule.
* :class:`AdversarialIterativePruner` runs the alternating
  discriminator/student game, accumulates channel importance every epoch,
  and performs surgery whenever the epoch index is a multiple of the
  pruning interval.
* :class:`ScratchRetrainer` trains a freshly initialised pruned network
  under attention transfer and distillation with cosine-annealed lr, for a
  number of epochs scaled by the FLOPs reduction.

Each estimator is configured in its constructor, learns via ``fit``, and
exposes results as trailing-underscore attributes.
"""

from __future__ import annotations

import csv
import math

import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from torch.utils.data import DataLoader

from .adversarial import Discriminator, alternate_step
from .graph import GraphNet, post_activation_index
from .importance import ChannelImportance, prune_threshold, select_channels
from .metrics import count_macs
from .model_zoo import build, clone_as_student
from .surgery import apply_plan, plan
from .validation import check_open_unit, check_positive

LOG_FIELDS = ("epoch", "step", "at", "kd", "adv", "total", "accuracy")


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; carries the last completed epoch."""

    def __init__(self, message, last_epoch=0):
        super().__init__(message)
        self.last_epoch = last_epoch


def step_decay_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Step schedule: /10 at floor(E/2) and again at floor(3E/4); 1-based epochs."""
    factor = (epoch >= total_epochs // 2) + (epoch >= (3 * total_epochs) // 4)
    return base_lr * 0.1 ** factor


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing from base_lr towards zero over the run; 1-based epochs."""
    t = (epoch - 1) / max(1, total_epochs)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def retrain_epoch_budget(baseline_epochs: int, teacher_macs: int, pruned_macs: int,
                         cap: float = 4.0) -> int:
    """Baseline epochs scaled by the FLOPs acceleration rate, capped.

    A network pruned to half cost gets twice the baseline epochs; the cap
    bounds the budget for extreme compressions.
    """
    check_positive("baseline_epochs", baseline_epochs)
    check_positive("teacher_macs", teacher_macs)
    check_positive("pruned_macs", pruned_macs)
    check_positive("cap", cap)
    scaled = round(baseline_epochs * teacher_macs / pruned_macs)
    return max(1, min(int(scaled), round(cap * baseline_epochs)))


def _set_lr(optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _sgd(params, lr, momentum, weight_decay):
    return torch.optim.SGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay)


def _loader(dataset, batch_size, generator=None, shuffle=True):
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle,
                      generator=generator, num_workers=0)


def evaluate(net: GraphNet, dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy over a dataset; deterministic (no shuffling)."""
    was_training = net.training
    net.eval()
    correct = total = 0
    with torch.no_grad():
        for images, labels in _loader(dataset, batch_size, shuffle=False):
            pred = net(images).argmax(dim=1)
            correct += int((pred == labels).sum())
            total += labels.shape[0]
    net.train(was_training)
    if total == 0:
        raise ValueError("dataset is empty")
    return correct / total


def write_log_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LOG_FIELDS})


class TeacherTrainer(BaseEstimator):
    """Cross-entropy pretraining of a baseline network."""

    def __init__(self, arch="vgg_small", num_classes=10, input_shape=(3, 32, 32),
                 epochs=160, lr=0.1, momentum=0.9, weight_decay=1e-4,
                 batch_size=128, seed=0):
        self.arch = arch
        self.num_classes = num_classes
        self.input_shape = input_shape
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, train_data):
        check_positive("epochs", self.epochs)
        net = build(self.arch, num_classes=self.num_classes,
                    input_shape=tuple(self.input_shape), seed=self.seed)
        opt = _sgd(net.parameters(), self.lr, self.momentum, self.weight_decay)
        gen = torch.Generator().manual_seed(self.seed + 17)
        loader = _loader(train_data, self.batch_size, generator=gen)
        rows = []
        net.train()
        for epoch in range(1, self.epochs + 1):
            _set_lr(opt, step_decay_lr(self.lr, epoch, self.epochs))
            for step, (images, labels) in enumerate(loader, 1):
                logits = net(images)
                loss = F.cross_entropy(logits, labels)
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise TrainingDiverged(f"loss went non-finite at epoch {epoch}",
                                           last_epoch=epoch - 1)
                opt.zero_grad()
                loss.backward()
                opt.step()
                acc = float((logits.argmax(dim=1) == labels).float().mean())
                rows.append(dict(epoch=epoch, step=step, at=0.0, kd=0.0, adv=0.0,
                                 total=value, accuracy=acc))
        self.network_ = net
        self.log_ = rows
        return self


class AdversarialIterativePruner(BaseEstimator):
    """Alternating teacher/student game with periodic channel surgery.

    After ``fit(teacher, train_data)``:

    * ``student_``: the pruned network after the final epoch.
    * ``plan_history_``: list of (epoch, PrunePlan) per pruning event.
    * ``scores_history_``: list of (epoch, {layer: scores}) per event.
    * ``log_``: per-step loss-component rows.
    """

    def __init__(self, pruning_factor=0.3, pruning_interval=10, epochs=30,
                 alpha=0.3, temperature=4.0, lr=0.1, momentum=0.9,
                 weight_decay=1e-4, batch_size=128,
                 loss_components=("at", "kd", "adv"), seed=0, event_hook=None):
        self.pruning_factor = pruning_factor
        self.pruning_interval = pruning_interval
        self.epochs = epochs
        self.alpha = alpha
        self.temperature = temperature
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.loss_components = loss_components
        self.seed = seed
        # Called as event_hook(epoch, student, plan, scores) after each
        # surgery, e.g. to checkpoint intermediate students.
        self.event_hook = event_hook

    def fit(self, teacher: GraphNet, train_data):
        check_open_unit("pruning_factor", self.pruning_factor)
        check_positive("pruning_interval", self.pruning_interval)
        check_positive("epochs", self.epochs)
        comps = tuple(self.loss_components)

        student = clone_as_student(teacher)
        desc = student.descriptor
        if not desc.prunable_layers:
            raise ValueError("network has no prunable layers")
        # Post-activation tap per prunable conv; layer indices survive surgery.
        act_of = {c: post_activation_index(desc, c) for c in desc.prunable_layers}

        discriminator = disc_opt = None
        if "adv" in comps:
            discriminator = Discriminator(desc.num_classes, seed=self.seed + 29)
            disc_opt = _sgd(discriminator.parameters(), self.lr, self.momentum,
                            self.weight_decay)

        opt = _sgd(student.parameters(), self.lr, self.momentum, self.weight_decay)
        scorer = ChannelImportance(
            {c: student.descriptor.layers[c].out_channels for c in desc.prunable_layers})
        gen = torch.Generator().manual_seed(self.seed + 101)
        loader = _loader(train_data, self.batch_size, generator=gen)

        rows, plan_history, scores_history = [], [], []
        student.train()
        for epoch in range(1, self.epochs + 1):
            scorer.reset()
            for step, (images, labels) in enumerate(loader, 1):
                result = alternate_step(
                    student, teacher, discriminator, images, labels,
                    student_optimizer=opt, disc_optimizer=disc_opt,
                    alpha=self.alpha, temperature=self.temperature,
                    components=comps, collect=tuple(act_of.values()),
                )
                if not math.isfinite(result.losses.total):
                    raise TrainingDiverged(f"loss went non-finite at epoch {epoch}",
                                           last_epoch=epoch - 1)
                for conv, act in act_of.items():
                    scorer.accumulate(conv, result.collected[act])
                rows.append(dict(epoch=epoch, step=step, at=result.losses.at,
                                 kd=result.losses.kd, adv=result.losses.adv,
                                 total=result.losses.total, accuracy=result.accuracy))
            if epoch % self.pruning_interval == 0:
                scores = scorer.finalize_all()
                masks = {
                    layer: select_channels(s, prune_threshold(s, self.pruning_factor))
                    for layer, s in scores.items()
                }
                prune_plan = plan(student.descriptor, masks)
                student = apply_plan(student, prune_plan)
                # Optimizer and accumulators are bound to the old tensors;
                # rebuild both for the smaller network.
                opt = _sgd(student.parameters(), self.lr, self.momentum,
                           self.weight_decay)
                scorer = ChannelImportance(
                    {c: student.descriptor.layers[c].out_channels
                     for c in desc.prunable_layers})
                plan_history.append((epoch, prune_plan))
                scores_history.append((epoch, scores))
                if self.event_hook is not None:
                    self.event_hook(epoch, student, prune_plan, scores)

        self.student_ = student
        self.discriminator_ = discriminator
        self.plan_history_ = plan_history
        self.scores_history_ = scores_history
        self.log_ = rows
        return self


class ScratchRetrainer(BaseEstimator):
    """From-scratch retraining of a pruned architecture under the teacher.

    The epoch budget is the baseline count scaled by the teacher/pruned MAC
    ratio (capped), with cosine-annealed learning rate.  After ``fit``:
    ``network_``, ``epochs_``, ``log_``.
    """

    def __init__(self, baseline_epochs=160, retrain_cap=4.0, alpha=0.3,
                 temperature=4.0, lr=0.1, momentum=0.9, weight_decay=1e-4,
                 batch_size=128, loss_components=("at", "kd"), seed=0,
                 epochs_override=None):
        self.baseline_epochs = baseline_epochs
        self.retrain_cap = retrain_cap
        self.alpha = alpha
        self.temperature = temperature
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.loss_components = loss_components
        self.seed = seed
        self.epochs_override = epochs_override

    def fit(self, pruned_descriptor, teacher: GraphNet, train_data):
        comps = tuple(self.loss_components)
        if self.epochs_override is not None:
            epochs = check_positive("epochs_override", int(self.epochs_override))
        else:
            epochs = retrain_epoch_budget(
                self.baseline_epochs, count_macs(teacher.descriptor),
                count_macs(pruned_descriptor), self.retrain_cap)

        # Fresh initialisation on a stream distinct from the teacher's seed.
        student = GraphNet(pruned_descriptor, seed=self.seed + 1)
        discriminator = disc_opt = None
        if "adv" in comps:
            discriminator = Discriminator(pruned_descriptor.num_classes,
                                          seed=self.seed + 31)
            disc_opt = _sgd(discriminator.parameters(), self.lr, self.momentum,
                            self.weight_decay)
        opt = _sgd(student.parameters(), self.lr, self.momentum, self.weight_decay)
        gen = torch.Generator().manual_seed(self.seed + 211)
        loader = _loader(train_data, self.batch_size, generator=gen)

        rows = []
        student.train()
        for epoch in range(1, epochs + 1):
            _set_lr(opt, cosine_lr(self.lr, epoch, epochs))
            if disc_opt is not None:
                _set_lr(disc_opt, cosine_lr(self.lr, epoch, epochs))
            for step, (images, labels) in enumerate(loader, 1):
                result = alternate_step(
                    student, teacher, discriminator, images, labels,
                    student_optimizer=opt, disc_optimizer=disc_opt,
                    alpha=self.alpha, temperature=self.temperature, components=comps,
                )
                if not math.isfinite(result.losses.total):
                    raise TrainingDiverged(f"loss went non-finite at epoch {epoch}",
                                           last_epoch=epoch - 1)
                rows.append(dict(epoch=epoch, step=step, at=result.losses.at,
                                 kd=result.losses.kd, adv=result.losses.adv,
                                 total=result.losses.total, accuracy=result.accuracy))

        self.network_ = student
        self.epochs_ = epochs
        self.log_ = rows
        return self


# Loss-component ablation grid: every non-empty combination, in the
# conventional presentation order.
ABLATION_GRID = (
    ("at",), ("kd",), ("adv",),
    ("at", "kd"), ("kd", "adv"), ("at", "adv"),
    ("at", "kd", "adv"),
)


def run_ablation(pruned_descriptor, teacher, train_data, eval_data=None, *,
                 rows=ABLATION_GRID, seed=0, epochs_override=None, **retrain_kwargs):
    """Retrain the pruned architecture once per loss-component combination.

    Returns one record per row with the components, epoch count, final
    accuracy, and the training log.
    """
    records = []
    for components in rows:
        retrainer = ScratchRetrainer(loss_components=tuple(components), seed=seed,
                                     epochs_override=epochs_override, **retrain_kwargs)
        retrainer.fit(pruned_descriptor, teacher, train_data)
        accuracy = evaluate(retrainer.network_, eval_data) if eval_data is not None else None
        records.append({
            "components": tuple(components),
            "epochs": retrainer.epochs_,
            "accuracy": accuracy,
            "log": retrainer.log_,
        })
    return records
