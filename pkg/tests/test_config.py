import json

import pytest

from advprune.config import ConfigError, RunConfig


class TestDefaults:
    def test_default_document_round_trips(self):
        cfg = RunConfig()
        back = RunConfig.from_document(cfg.to_document())
        assert back == cfg

    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.pruning_factor == 0.3
        assert cfg.pruning_interval == 10
        assert cfg.prune_epochs == 30
        assert cfg.alpha == 0.3
        assert cfg.temperature == 4.0
        assert cfg.num_classes == 10
        assert cfg.loss_components is None

    def test_phase_defaults_for_components(self):
        cfg = RunConfig()
        assert cfg.components_for("prune") == ("at", "kd", "adv")
        assert cfg.components_for("retrain") == ("at", "kd")

    def test_explicit_components_override_phase(self):
        cfg = RunConfig(loss_components=("kd",))
        assert cfg.components_for("prune") == ("kd",)
        assert cfg.components_for("retrain") == ("kd",)


class TestDocumentParsing:
    def test_short_keys_map_to_fields(self):
        cfg = RunConfig.from_document({"k": 0.5, "s_p": 3, "N": 9, "t_emp": 2.0})
        assert cfg.pruning_factor == 0.5
        assert cfg.pruning_interval == 3
        assert cfg.prune_epochs == 9
        assert cfg.temperature == 2.0

    def test_unknown_keys_rejected_by_name(self):
        with pytest.raises(ConfigError, match="pruning_rate"):
            RunConfig.from_document({"pruning_rate": 0.5})

    def test_from_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"arch": "vgg_small", "k": 0.4}))
        cfg = RunConfig.from_file(path)
        assert cfg.pruning_factor == 0.4

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            RunConfig.from_file(tmp_path / "nope.json")

    def test_invalid_json_is_config_error(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            RunConfig.from_file(path)

    def test_non_object_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_document([1, 2, 3])


class TestValidation:
    @pytest.mark.parametrize("doc,key", [
        ({"k": 0.0}, "k"),
        ({"k": 1.0}, "k"),
        ({"s_p": 0}, "s_p"),
        ({"N": 0}, "N"),
        ({"alpha": 1.5}, "alpha"),
        ({"t_emp": 0.0}, "t_emp"),
        ({"lr": -0.1}, "lr"),
        ({"batch_size": 0}, "batch_size"),
        ({"arch": "mystery"}, "arch"),
        ({"dataset": "imagenet"}, "dataset"),
        ({"loss_components": []}, "loss_components"),
        ({"loss_components": ["at", "at"]}, "loss_components"),
        ({"loss_components": ["mystery"]}, "loss_components"),
        ({"num_classes": 0}, "num_classes"),
    ])
    def test_errors_name_the_offending_key(self, doc, key):
        with pytest.raises(ConfigError, match=key):
            RunConfig.from_document(doc)

    def test_dataset_size_suffix_accepted(self):
        cfg = RunConfig(dataset="synthetic:256/64")
        assert cfg.num_classes == 10

    def test_cifar_requires_data_dir(self):
        cfg = RunConfig(dataset="cifar10")
        assert cfg.needs_data_dir()
        assert not RunConfig(dataset="synthetic").needs_data_dir()


class TestSerialization:
    def test_json_round_trip_preserves_everything(self):
        cfg = RunConfig(arch="resnet_basic", dataset="synthetic:512/128",
                        pruning_factor=0.45, loss_components=("at", "kd"),
                        seed=11, out_dir="elsewhere")
        back = RunConfig.from_document(json.loads(cfg.to_json()))
        assert back == cfg

    def test_document_uses_short_keys(self):
        doc = RunConfig().to_document()
        assert set(doc) >= {"k", "s_p", "N", "t_emp", "arch", "dataset"}
        assert "pruning_factor" not in doc

    def test_components_serialize_as_list_or_null(self):
        assert RunConfig().to_document()["loss_components"] is None
        doc = RunConfig(loss_components=("kd", "adv")).to_document()
        assert doc["loss_components"] == ["kd", "adv"]
