"""advprune: iterative channel pruning with adversarial accuracy recovery."""

from .adversarial import (
    Discriminator,
    LossBundle,
    alternate_step,
    discriminator_loss,
    discriminator_step,
    student_adv_loss,
    student_objective,
)
from .checkpoint import Checkpoint, MissingArtifact, fingerprint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import load_dataset, synthetic_blobs
from .distill import at_loss, attention_map, kd_loss, kl_divergence, soften
from .graph import GraphError, GraphNet, LayerSpec, NetworkDescriptor
from .importance import ChannelImportance, keep_masks, prune_threshold, select_channels
from .metrics import (
    MetricsReport,
    build_report,
    count_flops,
    count_macs,
    count_params,
    export_scores,
    load_scores,
)
from .model_zoo import build, clone_as_student
from .surgery import LayerPlan, PrunePlan, SurgeryError, apply_plan, plan, validate
from .trainer import (
    ABLATION_GRID,
    AdversarialIterativePruner,
    ScratchRetrainer,
    TeacherTrainer,
    TrainingDiverged,
    cosine_lr,
    evaluate,
    retrain_epoch_budget,
    run_ablation,
    step_decay_lr,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_GRID",
    "AdversarialIterativePruner",
    "ChannelImportance",
    "Checkpoint",
    "ConfigError",
    "Discriminator",
    "GraphError",
    "GraphNet",
    "LayerPlan",
    "LayerSpec",
    "LossBundle",
    "MetricsReport",
    "MissingArtifact",
    "NetworkDescriptor",
    "PrunePlan",
    "RunConfig",
    "ScratchRetrainer",
    "SurgeryError",
    "TeacherTrainer",
    "TrainingDiverged",
    "alternate_step",
    "apply_plan",
    "at_loss",
    "attention_map",
    "build",
    "build_report",
    "clone_as_student",
    "cosine_lr",
    "count_flops",
    "count_macs",
    "count_params",
    "discriminator_loss",
    "discriminator_step",
    "evaluate",
    "export_scores",
    "fingerprint",
    "kd_loss",
    "keep_masks",
    "kl_divergence",
    "load_checkpoint",
    "load_dataset",
    "load_scores",
    "plan",
    "prune_threshold",
    "retrain_epoch_budget",
    "run_ablation",
    "save_checkpoint",
    "select_channels",
    "soften",
    "step_decay_lr",
    "student_adv_loss",
    "student_objective",
    "synthetic_blobs",
    "validate",
]
