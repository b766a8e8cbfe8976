"""Tests for experiment configuration parsing."""

from pathlib import Path

import pytest

from contractlab.config import (
    EXPERIMENT_KINDS,
    apply_overrides,
    load_config,
    load_raw,
    parse_config,
)
from contractlab.errors import ConfigError

CONFIG_DIR = Path(__file__).parent.parent / "configs"


class TestParseConfig:
    """Tests for validating raw mappings."""

    def test_minimal_contract_config(self, ou_contract_config):
        config = parse_config(ou_contract_config)
        assert config.kind == "contract-check"
        assert config.model.family == "ou"
        assert config.model.params == {"a": 1.0}
        assert config.run.times == [0.5, 1.0]
        assert config.run.bootstrap == 0
        assert config.profile.k1 == {"family": "constant", "value": 0.0}

    def test_defaults(self):
        config = parse_config({"kind": "psi-table", "run": {"seed": 0}})
        assert config.run.p == [2.0]
        assert config.run.dt == 1e-3
        assert config.run.bootstrap == 100
        assert config.output.directory == Path("results")
        assert config.profile is None

    def test_exponent_string_read_as_number(self):
        config = parse_config({"kind": "couple-run", "run": {"seed": 0, "dt": "1e-3"}})
        assert config.run.dt == 1e-3

    def test_scalar_promoted_to_list(self):
        config = parse_config({"kind": "couple-run", "run": {"seed": 0, "x": 0, "y": 2}})
        assert config.run.x == [0.0]
        assert config.run.y == [2.0]

    def test_seed_required(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"kind": "psi-table", "run": {}})
        assert excinfo.value.field == "run.seed"

    def test_seed_must_fit_64_bits(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"kind": "psi-table", "run": {"seed": 1 << 64}})
        assert excinfo.value.field == "run.seed"

    def test_unknown_kind(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"kind": "simulate", "run": {"seed": 0}})
        assert excinfo.value.field == "kind"

    def test_kind_mismatch_with_subcommand(self, ou_contract_config):
        with pytest.raises(ConfigError, match="declares 'contract-check'"):
            parse_config(ou_contract_config, kind="esm-run")

    def test_subcommand_supplies_kind(self):
        assert parse_config({"run": {"seed": 0}}, kind="validate").kind == "validate"

    def test_unknown_model_family(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"kind": "couple-run", "model": {"family": "heston"}, "run": {"seed": 0}})
        assert excinfo.value.field == "model.family"

    def test_negative_k1_rejected(self, ou_contract_config):
        ou_contract_config["profile"]["k1"]["value"] = -1
        with pytest.raises(ConfigError) as excinfo:
            parse_config(ou_contract_config)
        assert excinfo.value.field == "profile.k1.value"

    def test_missing_profile_field(self, ou_contract_config):
        del ou_contract_config["profile"]["r0"]
        with pytest.raises(ConfigError) as excinfo:
            parse_config(ou_contract_config)
        assert excinfo.value.field == "profile.r0"

    def test_p_below_one(self, ou_contract_config):
        ou_contract_config["run"]["p"] = [2, 0.5]
        with pytest.raises(ConfigError) as excinfo:
            parse_config(ou_contract_config)
        assert excinfo.value.field == "run.p"

    @pytest.mark.parametrize("replicates", [1, 50, 99])
    def test_small_bootstrap_rejected(self, ou_contract_config, replicates):
        ou_contract_config["run"]["bootstrap"] = replicates
        with pytest.raises(ConfigError) as excinfo:
            parse_config(ou_contract_config)
        assert excinfo.value.field == "run.bootstrap"

    def test_non_positive_dt(self, ou_contract_config):
        ou_contract_config["run"]["dt"] = 0
        with pytest.raises(ConfigError) as excinfo:
            parse_config(ou_contract_config)
        assert excinfo.value.field == "run.dt"

    def test_unknown_run_setting(self, ou_contract_config):
        ou_contract_config["run"]["steps"] = 10
        with pytest.raises(ConfigError) as excinfo:
            parse_config(ou_contract_config)
        assert excinfo.value.field == "run.steps"

    def test_boolean_is_not_a_number(self, ou_contract_config):
        ou_contract_config["run"]["paths"] = True
        with pytest.raises(ConfigError):
            parse_config(ou_contract_config)

    def test_bad_initial_law(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"kind": "esm-run", "run": {"seed": 0, "law_a": {"kind": "point", "params": [1, 2]}}})
        assert excinfo.value.field == "run.law_a"

    def test_unknown_test_function(self):
        with pytest.raises(ConfigError, match="unknown test function"):
            parse_config({"kind": "gradient-check", "run": {"seed": 0, "test_function": "cosh"}})

    def test_resolved_round_trips(self, ou_contract_config):
        config = parse_config(ou_contract_config)
        again = parse_config(config.resolved())
        assert again.resolved() == config.resolved()


class TestBuild:
    """Tests for building models and profiles from a config."""

    def test_model_and_profile(self, ou_contract_config):
        config = parse_config(ou_contract_config)
        model = config.build_model()
        profile = config.build_profile(model)
        assert model.label == "ou"
        assert profile.k2 == 1.0

    def test_profile_induced_by_linear_bound(self):
        config = parse_config({"kind": "harnack-check", "model": {"family": "ou", "a": 2}, "run": {"seed": 0}})
        profile = config.build_profile(config.build_model())
        assert profile.k2 == 2.0

    def test_profile_required_without_linear_bound(self):
        config = parse_config({"kind": "contract-check", "model": {"family": "double-well"}, "run": {"seed": 0}})
        with pytest.raises(ConfigError) as excinfo:
            config.build_profile(config.build_model())
        assert excinfo.value.field == "profile"

    def test_bad_model_parameter(self):
        config = parse_config({"kind": "couple-run", "model": {"family": "ou", "a": -1}, "run": {"seed": 0}})
        with pytest.raises(ConfigError) as excinfo:
            config.build_model()
        assert excinfo.value.field == "model"


class TestOverrides:
    """Tests for merging command-line overrides."""

    def test_override_run_values(self, ou_contract_config):
        merged = apply_overrides(ou_contract_config, seed=9, paths=50, dt=None)
        assert merged["run"]["seed"] == 9
        assert merged["run"]["paths"] == 50
        assert merged["run"]["dt"] == 0.01

    def test_original_untouched(self, ou_contract_config):
        apply_overrides(ou_contract_config, seed=9)
        assert ou_contract_config["run"]["seed"] == 1

    def test_output_directory(self, temp_dir):
        merged = apply_overrides({}, out=temp_dir)
        assert merged["output"]["directory"] == str(temp_dir)

    def test_null_run_section(self):
        merged = apply_overrides({"run": None}, seed=3)
        assert merged["run"] == {"seed": 3}

    def test_zero_bootstrap_override(self, ou_contract_config):
        ou_contract_config["run"]["bootstrap"] = 200
        merged = apply_overrides(ou_contract_config, bootstrap=0)
        assert parse_config(merged).run.bootstrap == 0


class TestLoadConfig:
    """Tests for reading YAML files."""

    def test_load_from_file(self, write_config, ou_contract_config, temp_dir):
        path = write_config(ou_contract_config)
        config = load_config(path, "contract-check", threads=2)
        assert config.run.threads == 2
        assert config.output.directory == temp_dir / "out"

    def test_missing_file(self, temp_dir):
        with pytest.raises(ConfigError, match="cannot read"):
            load_raw(temp_dir / "missing.yaml")

    def test_invalid_yaml(self, temp_dir):
        path = temp_dir / "bad.yaml"
        path.write_text("run: [unclosed\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_raw(path)

    def test_no_file_uses_overrides(self):
        config = load_config(None, "psi-table", seed=4)
        assert config.run.seed == 4

    @pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
    def test_shipped_configs_parse(self, path):
        config = load_config(path)
        assert config.kind in EXPERIMENT_KINDS
