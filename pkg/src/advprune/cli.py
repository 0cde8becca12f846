"""Command-line interface.

Subcommands mirror the pipeline phases: ``train-teacher``, ``prune``,
``retrain``, ``eval``, ``report``, ``plot-scores``.  All commands take a run
configuration either from ``--config`` (JSON document) or from the
``config.snapshot`` of an existing ``--run-dir``.  Exit codes: 0 success,
2 configuration error, 3 missing artifact, 4 training divergence.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from .checkpoint import Checkpoint, MissingArtifact, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import DatasetError, dataset_defaults, load_dataset
from .graph import GraphError
from .metrics import (
    build_report,
    export_scores,
    load_scores,
    plot_score_densities,
)
from .surgery import SurgeryError
from .trainer import (
    AdversarialIterativePruner,
    ScratchRetrainer,
    TeacherTrainer,
    TrainingDiverged,
    evaluate,
    write_log_csv,
)

_STUDENT_RE = re.compile(r"^student_epoch_(\d+)\.ckpt$")


def _resolve_config(args) -> tuple[RunConfig, Path]:
    if getattr(args, "config", None):
        config = RunConfig.from_file(args.config)
    elif getattr(args, "run_dir", None):
        snapshot = Path(args.run_dir) / "config.snapshot"
        if not snapshot.exists():
            raise MissingArtifact(f"no config.snapshot under {args.run_dir}")
        config = RunConfig.from_file(snapshot)
    else:
        raise ConfigError("give --config or --run-dir")
    if getattr(args, "k", None) is not None:
        config.pruning_factor = args.k
        config.validate()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    run_dir = Path(args.run_dir) if getattr(args, "run_dir", None) else Path(config.out_dir)
    return config, run_dir


def _refuse_overwrite(path: Path, force: bool):
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


def _train_split(config: RunConfig):
    return load_dataset(config.dataset, split="train", data_dir=config.data_dir,
                        num_classes=config.num_classes, seed=config.seed)


def _test_split(config: RunConfig):
    return load_dataset(config.dataset, split="test", data_dir=config.data_dir,
                        num_classes=config.num_classes, seed=config.seed)


def _save_net(path, net, config: RunConfig, epoch: int, metrics=None):
    save_checkpoint(path, Checkpoint(
        descriptor=net.descriptor, state_dict=net.state_dict(),
        config=config.to_document(), epoch=epoch, metrics=metrics,
    ))


def _teacher_path(run_dir: Path) -> Path:
    path = run_dir / "teacher.ckpt"
    if not path.exists():
        raise MissingArtifact(f"teacher checkpoint not found: {path}")
    return path


def _latest_student(run_dir: Path):
    best = None
    if run_dir.exists():
        for entry in run_dir.iterdir():
            m = _STUDENT_RE.match(entry.name)
            if m:
                epoch = int(m.group(1))
                if best is None or epoch > best[0]:
                    best = (epoch, entry)
    return best


def cmd_train_teacher(args) -> int:
    config, run_dir = _resolve_config(args)
    run_dir.mkdir(parents=True, exist_ok=True)
    _refuse_overwrite(run_dir / "teacher.ckpt", args.force)

    snapshot = run_dir / "config.snapshot"
    if snapshot.exists() and snapshot.read_text() != config.to_json() and not args.force:
        raise ConfigError(f"{snapshot} differs from the given config; pass --force")
    snapshot.write_text(config.to_json())

    _, input_shape = dataset_defaults(config.dataset)
    trainer = TeacherTrainer(
        arch=config.arch, num_classes=config.num_classes, input_shape=input_shape,
        epochs=config.baseline_epochs, lr=config.lr, momentum=config.momentum,
        weight_decay=config.weight_decay, batch_size=config.batch_size,
        seed=config.seed,
    )
    trainer.fit(_train_split(config))
    accuracy = evaluate(trainer.network_, _test_split(config))

    _save_net(run_dir / "teacher.ckpt", trainer.network_, config,
              epoch=config.baseline_epochs, metrics={"test_accuracy": accuracy})
    (run_dir / "teacher.descriptor.json").write_text(trainer.network_.descriptor.to_json())
    write_log_csv(run_dir / "log_teacher.csv", trainer.log_)
    print(f"teacher trained: {config.arch} on {config.dataset}, "
          f"test accuracy {accuracy:.4f}")
    print(f"run directory: {run_dir}")
    return 0


def cmd_prune(args) -> int:
    config, run_dir = _resolve_config(args)
    teacher = load_checkpoint(_teacher_path(run_dir)).to_network()
    plan_dir = run_dir / "plans"
    if plan_dir.exists() and any(plan_dir.iterdir()) and not args.force:
        raise ConfigError(f"{plan_dir} already holds plans; pass --force to overwrite")
    plan_dir.mkdir(parents=True, exist_ok=True)

    def on_event(epoch, student, prune_plan, scores):
        (plan_dir / f"plan_{epoch}.txt").write_text(prune_plan.to_text())
        export_scores(scores, run_dir / f"scores_epoch_{epoch}.csv")
        _save_net(run_dir / f"student_epoch_{epoch}.ckpt", student, config, epoch=epoch)

    pruner = AdversarialIterativePruner(
        pruning_factor=config.pruning_factor, pruning_interval=config.pruning_interval,
        epochs=config.prune_epochs, alpha=config.alpha, temperature=config.temperature,
        lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay,
        batch_size=config.batch_size, loss_components=config.components_for("prune"),
        seed=config.seed, event_hook=on_event,
    )
    try:
        pruner.fit(teacher, _train_split(config))
    except TrainingDiverged as exc:
        last = _latest_student(run_dir)
        where = f"; last good checkpoint: {last[1]}" if last else ""
        raise TrainingDiverged(f"{exc}{where}", last_epoch=exc.last_epoch)

    final_path = run_dir / f"student_epoch_{config.prune_epochs}.ckpt"
    if not final_path.exists():
        _save_net(final_path, pruner.student_, config, epoch=config.prune_epochs)
    write_log_csv(run_dir / "log.csv", pruner.log_)

    report = build_report(pruner.student_.descriptor, baseline=teacher.descriptor,
                          name=f"{config.arch} pruned (k={config.pruning_factor})")
    print(report.format_table())
    print(f"pruning events: {[e for e, _ in pruner.plan_history_]}")
    return 0


def cmd_retrain(args) -> int:
    config, run_dir = _resolve_config(args)
    teacher = load_checkpoint(_teacher_path(run_dir)).to_network()
    latest = _latest_student(run_dir)
    if latest is None:
        raise MissingArtifact(f"no pruned student checkpoint under {run_dir}")
    _refuse_overwrite(run_dir / "retrained.ckpt", args.force)
    pruned_desc = load_checkpoint(latest[1]).descriptor

    retrainer = ScratchRetrainer(
        baseline_epochs=config.baseline_epochs, retrain_cap=config.retrain_cap,
        alpha=config.alpha, temperature=config.temperature, lr=config.lr,
        momentum=config.momentum, weight_decay=config.weight_decay,
        batch_size=config.batch_size,
        loss_components=config.components_for("retrain"), seed=config.seed,
    )
    retrainer.fit(pruned_desc, teacher, _train_split(config))
    accuracy = evaluate(retrainer.network_, _test_split(config))
    _save_net(run_dir / "retrained.ckpt", retrainer.network_, config,
              epoch=retrainer.epochs_, metrics={"test_accuracy": accuracy})
    write_log_csv(run_dir / "log_retrain.csv", retrainer.log_)
    print(f"retrained for {retrainer.epochs_} epochs, test accuracy {accuracy:.4f}")
    return 0


def _pick_checkpoint(run_dir: Path, which: str) -> Path:
    if which == "teacher":
        return _teacher_path(run_dir)
    if which == "retrained":
        path = run_dir / "retrained.ckpt"
        if not path.exists():
            raise MissingArtifact(f"no retrained checkpoint under {run_dir}")
        return path
    if which == "pruned":
        latest = _latest_student(run_dir)
        if latest is None:
            raise MissingArtifact(f"no pruned student checkpoint under {run_dir}")
        return latest[1]
    # auto: the furthest-along artifact wins
    if (run_dir / "retrained.ckpt").exists():
        return run_dir / "retrained.ckpt"
    latest = _latest_student(run_dir)
    if latest is not None:
        return latest[1]
    return _teacher_path(run_dir)


def cmd_eval(args) -> int:
    config, run_dir = _resolve_config(args)
    path = _pick_checkpoint(run_dir, args.which)
    net = load_checkpoint(path).to_network()
    data = _test_split(config) if args.split == "test" else _train_split(config)
    accuracy = evaluate(net, data)
    print(f"{path.name} {args.split} accuracy: {accuracy:.4f}")
    return 0


def cmd_report(args) -> int:
    run_dirs = [Path(d) for d in (args.run_dirs or ([args.run_dir] if args.run_dir else []))]
    if not run_dirs:
        raise ConfigError("give --run-dir (repeatable) to report on")
    if len(run_dirs) == 1:
        return _report_single(run_dirs[0])
    return _report_sweep(run_dirs)


def _report_single(run_dir: Path) -> int:
    teacher_ckpt = load_checkpoint(_teacher_path(run_dir))
    teacher_desc = teacher_ckpt.descriptor
    latest = _latest_student(run_dir)
    retrained = run_dir / "retrained.ckpt"

    if retrained.exists():
        subject = load_checkpoint(retrained)
        name = "retrained"
    elif latest is not None:
        subject = load_checkpoint(latest[1])
        name = latest[1].name
    else:
        subject = teacher_ckpt
        name = "teacher (unpruned)"

    accuracy = (subject.metrics or {}).get("test_accuracy")
    report = build_report(subject.descriptor, baseline=teacher_desc,
                          accuracy=accuracy, name=name)
    (run_dir / "report.json").write_text(report.to_json())
    with open(run_dir / "survival.csv", "w") as fh:
        fh.write("layer,original,kept\n")
        for row in report.per_layer:
            fh.write(f"{row['layer']},{row['original']},{row['kept']}\n")
    print(report.format_table())
    print(f"wrote {run_dir / 'report.json'} and {run_dir / 'survival.csv'}")
    return 0


def _report_sweep(run_dirs) -> int:
    print("run,k,params_drop_pct,flops_drop_pct,accuracy")
    for run_dir in run_dirs:
        config = RunConfig.from_file(run_dir / "config.snapshot") \
            if (run_dir / "config.snapshot").exists() else None
        teacher_desc = load_checkpoint(_teacher_path(run_dir)).descriptor
        latest = _latest_student(run_dir)
        retrained = run_dir / "retrained.ckpt"
        subject = load_checkpoint(retrained) if retrained.exists() else (
            load_checkpoint(latest[1]) if latest else None)
        if subject is None:
            print(f"{run_dir},,,,")
            continue
        report = build_report(subject.descriptor, baseline=teacher_desc)
        accuracy = (subject.metrics or {}).get("test_accuracy")
        k = config.pruning_factor if config else ""
        acc = f"{accuracy:.4f}" if accuracy is not None else ""
        print(f"{run_dir},{k},{report.params_drop_pct:.2f},{report.flops_drop_pct:.2f},{acc}")
    return 0


def cmd_plot_scores(args) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else None
    if args.csv:
        csv_path = Path(args.csv)
    else:
        if run_dir is None:
            raise ConfigError("give --run-dir or --csv")
        candidates = sorted(
            run_dir.glob("scores_epoch_*.csv"),
            key=lambda p: int(re.search(r"(\d+)", p.stem).group(1)),
        )
        if not candidates:
            raise MissingArtifact(f"no score exports under {run_dir}")
        csv_path = candidates[-1]
    if not csv_path.exists():
        raise MissingArtifact(f"score export not found: {csv_path}")
    out_dir = (run_dir or csv_path.parent) / "plots"
    written = plot_score_densities(load_scores(csv_path), out_dir)
    print(f"wrote {len(written)} density plots to {out_dir}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advprune",
        description="Iterative channel pruning with attention transfer, "
                    "distillation, and an adversarial teacher-student game.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, force=True):
        p.add_argument("--config", help="path to a JSON run configuration")
        p.add_argument("--run-dir", help="run directory (defaults to the config's out_dir)")
        p.add_argument("--k", type=float, help="override the pruning factor")
        p.add_argument("--seed", type=int, help="override the RNG seed")
        if force:
            p.add_argument("--force", action="store_true",
                           help="overwrite existing outputs")

    p = sub.add_parser("train-teacher", help="pretrain the baseline network")
    common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("prune", help="run adversarial iterative pruning")
    common(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("retrain", help="retrain the pruned network from scratch")
    common(p)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("eval", help="evaluate a run's checkpoint")
    common(p, force=False)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--which", choices=("auto", "teacher", "pruned", "retrained"),
                   default="auto")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="cost/accuracy report for one or more runs")
    p.add_argument("--run-dir", help="run directory")
    p.add_argument("--run-dirs", nargs="+", help="multiple run directories (k sweep)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot-scores", help="plot importance-score densities")
    p.add_argument("--run-dir", help="run directory with score exports")
    p.add_argument("--csv", help="explicit score export to plot")
    p.set_defaults(func=cmd_plot_scores)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, GraphError, SurgeryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 4


def entrypoint():
    raise SystemExit(main(sys.argv[1:]))
