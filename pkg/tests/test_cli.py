import json

import pytest

from advprune.checkpoint import load_checkpoint
from advprune.cli import main
from advprune.metrics import MetricsReport
from advprune.surgery import PrunePlan

TOY = {
    "arch": "vgg_small",
    "dataset": "synthetic:256/64",
    "batch_size": 64,
    "lr": 0.05,
    "baseline_epochs": 2,
    "N": 2,
    "s_p": 1,
    "k": 0.9,
    "seed": 3,
}


def write_config(directory, **overrides):
    doc = {**TOY, "out_dir": str(directory / "run"), **overrides}
    path = directory / "config.json"
    path.write_text(json.dumps(doc))
    return path, directory / "run"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full train-teacher -> prune -> retrain pass, shared by tests."""
    base = tmp_path_factory.mktemp("cli")
    config, run_dir = write_config(base)
    assert main(["train-teacher", "--config", str(config)]) == 0
    assert main(["prune", "--run-dir", str(run_dir)]) == 0
    assert main(["retrain", "--run-dir", str(run_dir)]) == 0
    return run_dir


@pytest.fixture(scope="module")
def teacher_only(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli_teacher")
    config, run_dir = write_config(base, dataset="synthetic:64/16",
                                   baseline_epochs=1)
    assert main(["train-teacher", "--config", str(config)]) == 0
    return run_dir


class TestPipelineArtifacts:
    def test_teacher_artifacts(self, pipeline):
        assert (pipeline / "teacher.ckpt").exists()
        assert (pipeline / "teacher.descriptor.json").exists()
        assert (pipeline / "log_teacher.csv").exists()
        snapshot = json.loads((pipeline / "config.snapshot").read_text())
        assert snapshot["k"] == 0.9
        assert snapshot["N"] == 2

    def test_prune_artifacts(self, pipeline):
        for epoch in (1, 2):
            assert (pipeline / "plans" / f"plan_{epoch}.txt").exists()
            assert (pipeline / f"scores_epoch_{epoch}.csv").exists()
            assert (pipeline / f"student_epoch_{epoch}.ckpt").exists()
        assert (pipeline / "log.csv").exists()
        header = (pipeline / "log.csv").read_text().splitlines()[0]
        assert header == "epoch,step,at,kd,adv,total,accuracy"

    def test_retrain_artifacts(self, pipeline):
        assert (pipeline / "retrained.ckpt").exists()
        assert (pipeline / "log_retrain.csv").exists()
        ckpt = load_checkpoint(pipeline / "retrained.ckpt")
        assert "test_accuracy" in (ckpt.metrics or {})

    def test_student_shrinks_across_events(self, pipeline):
        teacher = load_checkpoint(pipeline / "teacher.ckpt")
        student = load_checkpoint(pipeline / "student_epoch_2.ckpt")
        t_widths = [s.out_channels for s in teacher.descriptor.layers if s.kind == "conv"]
        s_widths = [s.out_channels for s in student.descriptor.layers if s.kind == "conv"]
        assert sum(s_widths) < sum(t_widths)

    def test_plan_files_parse(self, pipeline):
        teacher = load_checkpoint(pipeline / "teacher.ckpt")
        plan = PrunePlan.from_text((pipeline / "plans" / "plan_2.txt").read_text())
        assert len(plan.layer_plans) == len(teacher.descriptor.layers)


class TestEval:
    def test_eval_is_repeatable(self, pipeline, capsys):
        assert main(["eval", "--run-dir", str(pipeline)]) == 0
        first = capsys.readouterr().out
        assert main(["eval", "--run-dir", str(pipeline)]) == 0
        second = capsys.readouterr().out
        assert first == second
        assert "retrained.ckpt test accuracy" in first

    def test_eval_selects_requested_checkpoint(self, pipeline, capsys):
        assert main(["eval", "--run-dir", str(pipeline), "--which", "teacher"]) == 0
        assert "teacher.ckpt" in capsys.readouterr().out
        assert main(["eval", "--run-dir", str(pipeline), "--which", "pruned"]) == 0
        assert "student_epoch_2.ckpt" in capsys.readouterr().out

    def test_eval_train_split(self, pipeline, capsys):
        assert main(["eval", "--run-dir", str(pipeline), "--split", "train"]) == 0
        assert "train accuracy" in capsys.readouterr().out

    def test_eval_missing_retrained_is_exit_3(self, teacher_only):
        assert main(["eval", "--run-dir", str(teacher_only),
                     "--which", "retrained"]) == 3


class TestReport:
    def test_single_run_report(self, pipeline, capsys):
        assert main(["report", "--run-dir", str(pipeline)]) == 0
        out = capsys.readouterr().out
        assert "params.drop/%" in out
        report = MetricsReport.from_json((pipeline / "report.json").read_text())
        assert report.params_drop_pct > 0.0
        assert report.name == "retrained"

    def test_survival_matches_plan(self, pipeline):
        plan = PrunePlan.from_text((pipeline / "plans" / "plan_2.txt").read_text())
        rows = (pipeline / "survival.csv").read_text().splitlines()
        assert rows[0] == "layer,original,kept"
        for row in rows[1:]:
            layer, original, kept = (int(v) for v in row.split(","))
            assert kept == len(plan.layer_plans[layer].kept_out)
            assert kept <= original

    def test_unpruned_run_reports_zero_drop(self, teacher_only, capsys):
        assert main(["report", "--run-dir", str(teacher_only)]) == 0
        capsys.readouterr()
        report = MetricsReport.from_json((teacher_only / "report.json").read_text())
        assert report.params_drop_pct == 0.0
        assert report.flops_drop_pct == 0.0
        assert report.name == "teacher (unpruned)"

    def test_sweep_prints_csv(self, pipeline, teacher_only, capsys):
        assert main(["report", "--run-dirs", str(pipeline), str(teacher_only)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "run,k,params_drop_pct,flops_drop_pct,accuracy"
        assert len(lines) == 3

    def test_report_without_dirs_is_exit_2(self):
        assert main(["report"]) == 2


class TestPlots:
    def test_plot_scores_writes_one_png_per_layer(self, pipeline):
        assert main(["plot-scores", "--run-dir", str(pipeline)]) == 0
        student = load_checkpoint(pipeline / "student_epoch_2.ckpt")
        plots = list((pipeline / "plots").glob("*.png"))
        assert len(plots) == len(student.descriptor.prunable_layers)

    def test_plot_scores_without_exports_is_exit_3(self, teacher_only):
        assert main(["plot-scores", "--run-dir", str(teacher_only)]) == 3


class TestGuardsAndExitCodes:
    def test_missing_config_is_exit_2(self):
        assert main(["train-teacher"]) == 2

    def test_unknown_config_key_is_exit_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"pruning_rate": 0.5}))
        assert main(["train-teacher", "--config", str(path)]) == 2

    def test_bad_k_override_is_exit_2(self, pipeline):
        assert main(["prune", "--run-dir", str(pipeline), "--k", "1.5", "--force"]) == 2

    def test_prune_without_teacher_is_exit_3(self, tmp_path):
        config, _ = write_config(tmp_path)
        assert main(["prune", "--config", str(config)]) == 3

    def test_run_dir_without_snapshot_is_exit_3(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["prune", "--run-dir", str(tmp_path / "empty")]) == 3

    def test_retrain_without_student_is_exit_3(self, teacher_only):
        assert main(["retrain", "--run-dir", str(teacher_only)]) == 3

    def test_divergent_training_is_exit_4(self, tmp_path):
        config, _ = write_config(tmp_path, dataset="synthetic:64/16",
                                 baseline_epochs=1, batch_size=16, lr=1e12)
        assert main(["train-teacher", "--config", str(config)]) == 4

    def test_finished_teacher_refuses_overwrite(self, pipeline, capsys):
        snapshot = pipeline / "config.snapshot"
        config = pipeline.parent / "again.json"
        config.write_text(snapshot.read_text())
        assert main(["train-teacher", "--config", str(config),
                     "--run-dir", str(pipeline)]) == 2

    def test_finished_prune_refuses_overwrite(self, pipeline):
        assert main(["prune", "--run-dir", str(pipeline)]) == 2
