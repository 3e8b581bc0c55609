import pytest

from utils.config import (
    ModelConfig,
    RunConfig,
    apply_overrides,
    emit_config,
    load_config,
    parse_config,
    validate_config,
)
from utils.errors import ConfigError


class TestParse:
    def test_defaults(self):
        config = parse_config("")
        assert config == RunConfig()
        assert config.model.heads == 4
        assert config.model.head_dim == 32
        assert config.model.hidden == 128
        assert config.optimizer.lr == 1e-3
        assert config.optimizer.batch_size == 32
        assert config.horizon.history == 12
        assert config.model.dropout == 0.3

    def test_emit_parse_round_trip(self):
        config = apply_overrides(RunConfig(), {
            "model.variant": "weighted_covariance",
            "optimizer.lr": 0.0123,
            "run.seeds": [3, 5, 8],
            "model.gru_bias": True,
            "dataset.val_fraction": 0.15,
        })
        assert parse_config(emit_config(config)) == config

    def test_sections_and_types(self):
        config = parse_config(
            "[model]\nheads = 2\nvariant = adjacency\ngru_bias = yes\n"
            "[optimizer]\nlambda_sparse = 1e-3\n"
            "[run]\nseeds = 0, 1, 2\n"
        )
        assert config.model.heads == 2
        assert config.model.variant == "adjacency"
        assert config.model.gru_bias is True
        assert config.optimizer.lambda_sparse == 1e-3
        assert config.run.seeds == [0, 1, 2]

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config("[model]\nlayers = 3\n")
        assert err.value.field == "model.layers"
        assert err.value.exit_code == 2

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            parse_config("[training]\nlr = 0.1\n")

    def test_unparsable_value(self):
        with pytest.raises(ConfigError, match="model.heads"):
            parse_config("[model]\nheads = four\n")

    def test_malformed_file(self):
        with pytest.raises(ConfigError):
            parse_config("heads = 4\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="file not found"):
            load_config(tmp_path / "absent.ini")

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[horizon]\nhorizon = 3\n", encoding="utf-8")
        assert load_config(path).horizon.horizon == 3


class TestValidate:
    @pytest.mark.parametrize("path, value", [
        ("model.variant", "gat"),
        ("model.heads", 0),
        ("optimizer.lr", -1.0),
        ("model.dropout", 1.0),
        ("dataset.train_ratio", 1.0),
        ("optimizer.lambda_sparse", -0.1),
        ("optimizer.teacher_forcing", "sometimes"),
        ("run.top_percent", 0.0),
        ("run.k_min", 1),
    ])
    def test_out_of_range(self, path, value):
        with pytest.raises(ConfigError) as err:
            apply_overrides(RunConfig(), {path: value})
        assert err.value.field == path

    def test_csv_source_needs_paths(self):
        with pytest.raises(ConfigError, match="csv source"):
            apply_overrides(RunConfig(), {"dataset.source": "csv", "dataset.speeds": "speeds.csv"})

    def test_empty_seed_list(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"run.seeds": ""})

    def test_valid_config_passes(self):
        config = RunConfig(model=ModelConfig(variant="spectral_block", clusters=5))
        assert validate_config(config) is config


class TestOverrides:
    def test_flags_beat_file(self):
        config = parse_config("[optimizer]\nepochs = 50\n[model]\nheads = 2\n")
        updated = apply_overrides(config, {"optimizer.epochs": 7, "model.variant": None})
        assert updated.optimizer.epochs == 7
        assert updated.model.heads == 2
        assert updated.model.variant == "learnable_sym"
        assert config.optimizer.epochs == 50

    def test_strings_are_coerced(self):
        updated = apply_overrides(RunConfig(), {"optimizer.lr": "0.5", "run.binarize": "true"})
        assert updated.optimizer.lr == 0.5
        assert updated.run.binarize is True

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"model.depth": 3})
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"trainer.lr": 3})
