import advprune


def test_version_is_exposed():
    assert advprune.__version__


def test_all_names_resolve():
    for name in advprune.__all__:
        assert getattr(advprune, name) is not None


def test_core_entry_points_exported():
    for name in ("build", "AdversarialIterativePruner", "TeacherTrainer",
                 "ScratchRetrainer", "ChannelImportance", "plan", "apply_plan",
                 "at_loss", "kd_loss", "RunConfig"):
        assert name in advprune.__all__
