"""Adversarial teacher/student game.

A small MLP discriminator receives output logits and emits the probability
that they came from the student.  Each training step first updates the
discriminator to tell teacher from student, then updates the student against
the refreshed discriminator with the combined attention-transfer,
distillation, and adversarial objective.  The two steps touch disjoint
parameter sets: the discriminator trains on detached student logits, and its
parameters are frozen while the student's objective is backpropagated.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .distill import at_loss, attention_map, kd_loss

# Discriminator outputs are clamped to [EPS, 1 - EPS] so the log terms stay
# finite; each loss is therefore bounded below by ln(EPS) per term.
EPS = 1e-7

LOSS_COMPONENTS = ("at", "kd", "adv")


class Discriminator(nn.Module):
    """MLP over logits: three hidden layers (128, 256, 128), sigmoid output."""

    def __init__(self, num_inputs: int, seed: int | None = None, hidden=(128, 256, 128)):
        super().__init__()
        dims = (num_inputs, *hidden)
        self.hidden = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(len(hidden))
        )
        self.head = nn.Linear(dims[-1], 1)
        if seed is not None:
            gen = torch.Generator().manual_seed(seed)
            with torch.no_grad():
                for m in (*self.hidden, self.head):
                    m.weight.normal_(0.0, (1.0 / m.in_features) ** 0.5, generator=gen)
                    m.bias.zero_()

    def forward(self, logits: torch.Tensor) -> torch.Tensor:
        if logits.dim() != 2:
            raise ValueError("discriminator expects (batch, classes) logits")
        h = logits
        for m in self.hidden:
            h = F.relu(m(h))
        return torch.sigmoid(self.head(h)).squeeze(1).clamp(EPS, 1.0 - EPS)


def student_adv_loss(d_student: torch.Tensor) -> torch.Tensor:
    """Student-side adversarial term: mean log(1 - D(student)).

    Minimising drives the discriminator's output on student logits towards 1.
    """
    d = d_student.clamp(EPS, 1.0 - EPS)
    return torch.log1p(-d).mean()


def discriminator_loss(d_teacher: torch.Tensor, d_student: torch.Tensor) -> torch.Tensor:
    """Discriminator objective: mean log(1 - D(teacher)) + mean log D(student).

    Minimising drives teacher outputs towards 1 and student outputs towards
    0; bounded below by 2 ln(EPS).
    """
    dt = d_teacher.clamp(EPS, 1.0 - EPS)
    ds = d_student.clamp(EPS, 1.0 - EPS)
    return torch.log1p(-dt).mean() + torch.log(ds).mean()


@dataclass(frozen=True)
class LossBundle:
    """Logged student-objective components; total is exactly their sum."""

    at: float
    kd: float
    adv: float
    total: float

    @classmethod
    def from_components(cls, at: float, kd: float, adv: float) -> "LossBundle":
        return cls(at=at, kd=kd, adv=adv, total=at + kd + adv)


@dataclass
class StepResult:
    losses: LossBundle
    accuracy: float
    disc_loss: float | None
    collected: dict[int, torch.Tensor]


def _check_components(components):
    comps = tuple(components)
    for c in comps:
        if c not in LOSS_COMPONENTS:
            raise ValueError(f"unknown loss component {c!r}; expected subset of {LOSS_COMPONENTS}")
    return frozenset(comps)


def discriminator_step(discriminator, disc_optimizer, teacher_logits, student_logits) -> float:
    """One optimizer step on the discriminator; inputs must carry no graph."""
    disc_optimizer.zero_grad()
    loss = discriminator_loss(discriminator(teacher_logits), discriminator(student_logits))
    loss.backward()
    disc_optimizer.step()
    disc_optimizer.zero_grad()
    return float(loss.detach())


def student_objective(student_logits, teacher_logits, labels, student_atts, teacher_atts,
                      discriminator, *, alpha, temperature, components) -> tuple[torch.Tensor, LossBundle]:
    """Combined student loss over the enabled components.

    Hard cross-entropy supervision is always present: with "kd" enabled it
    arrives inside the distillation mix, otherwise it stands alone in the kd
    slot, so disabling components never leaves the student without labels.
    """
    comps = _check_components(components)
    if "at" in comps:
        at_term = at_loss(student_atts, teacher_atts)
    else:
        at_term = student_logits.new_zeros(())
    if "kd" in comps:
        kd_term = kd_loss(student_logits, teacher_logits, labels, alpha, temperature)
    else:
        kd_term = F.cross_entropy(student_logits, labels)
    if "adv" in comps:
        if discriminator is None:
            raise ValueError("adversarial component enabled but no discriminator given")
        adv_term = student_adv_loss(discriminator(student_logits))
    else:
        adv_term = student_logits.new_zeros(())
    total = at_term + kd_term + adv_term
    bundle = LossBundle.from_components(float(at_term.detach()), float(kd_term.detach()),
                                        float(adv_term.detach()))
    return total, bundle


def alternate_step(student, teacher, discriminator, images, labels, *,
                   student_optimizer, disc_optimizer=None,
                   alpha=0.3, temperature=4.0,
                   components=LOSS_COMPONENTS, collect=()) -> StepResult:
    """One discriminator update followed by one student update on a batch.

    The teacher runs without gradients.  When "adv" is enabled the
    discriminator first takes an optimizer step on detached logits, then the
    student's objective is evaluated against the refreshed, frozen
    discriminator.  ``collect`` names extra student layer outputs to return
    (importance scoring taps into the same forward pass).
    """
    comps = _check_components(components)
    taps = student.descriptor.attention_taps
    was_training = teacher.training
    teacher.eval()
    try:
        with torch.no_grad():
            teacher_logits, teacher_grabbed = teacher(images, collect=taps)
    finally:
        teacher.train(was_training)

    student_logits, student_grabbed = student(images, collect=tuple(taps) + tuple(collect))

    disc_loss = None
    if "adv" in comps:
        if discriminator is None or disc_optimizer is None:
            raise ValueError("adversarial component needs a discriminator and its optimizer")
        disc_loss = discriminator_step(discriminator, disc_optimizer,
                                       teacher_logits, student_logits.detach())

    student_atts = [attention_map(student_grabbed[t]) for t in taps]
    teacher_atts = [attention_map(teacher_grabbed[t]) for t in taps]

    if discriminator is not None:
        for p in discriminator.parameters():
            p.requires_grad_(False)
    try:
        total, bundle = student_objective(
            student_logits, teacher_logits, labels, student_atts, teacher_atts,
            discriminator if "adv" in comps else None,
            alpha=alpha, temperature=temperature, components=comps,
        )
        student_optimizer.zero_grad()
        total.backward()
        student_optimizer.step()
    finally:
        if discriminator is not None:
            for p in discriminator.parameters():
                p.requires_grad_(True)

    accuracy = float((student_logits.argmax(dim=1) == labels).float().mean())
    collected = {i: student_grabbed[i] for i in collect}
    return StepResult(losses=bundle, accuracy=accuracy, disc_loss=disc_loss,
                      collected=collected)
