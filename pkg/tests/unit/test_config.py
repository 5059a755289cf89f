"""Unit tests for scenario loading, overrides and validation."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest

from ucnp_core.config import (
    DEFAULTS,
    ConfigCache,
    Scenario,
    config_hash,
    deep_merge,
    load_config,
    parse_override,
    validate_against_schema,
)
from ucnp_core.errors import ConfigError


def test_defaults_validate() -> None:
    assert validate_against_schema(DEFAULTS) is True


def test_default_scenario_is_the_reference_cloud() -> None:
    scenario = Scenario.from_config(load_config())

    assert scenario.spec.N_i == 250_000.0
    assert scenario.spec.delta_N == 20_000.0
    assert scenario.r_t_mode == "sigma_multiple"
    assert scenario.r_t_value == 12.0
    assert scenario.physics.evaporation is True
    assert scenario.physics.tbr_heating is False


def test_cache_loads_yaml_and_json(tmp_path: Path) -> None:
    yml = tmp_path / "a.yaml"
    yml.write_text("plasma:\n  N_i: 1.0e5\n")
    js = tmp_path / "b.json"
    js.write_text(json.dumps({"seed": 3}))

    cache = ConfigCache()

    assert cache.load_config(str(yml)) == {"plasma": {"N_i": 1.0e5}}
    assert cache.load_config(str(js)) == {"seed": 3}
    assert set(cache.checksums) == {str(yml), str(js)}


def test_cache_returns_copies(tmp_path: Path) -> None:
    cfg = tmp_path / "a.yaml"
    cfg.write_text("seed: 1\n")
    cache = ConfigCache()

    first = cache.load_config(str(cfg))
    first["mutated"] = True

    assert "mutated" not in cache.load_config(str(cfg))


def test_cache_keeps_the_first_read(tmp_path: Path) -> None:
    cfg = tmp_path / "a.yaml"
    cfg.write_text("seed: 1\n")
    cache = ConfigCache()
    cache.load_config(str(cfg))

    cfg.write_text("seed: 2\n")

    assert cache.load_config(str(cfg)) == {"seed": 1}


def test_unreadable_file_raises(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="Error reading"):
        ConfigCache().load_config(str(tmp_path / "absent.yaml"))


def test_non_mapping_file_raises(tmp_path: Path) -> None:
    cfg = tmp_path / "list.yaml"
    cfg.write_text("- 1\n- 2\n")

    with pytest.raises(ConfigError, match="top level must be a mapping"):
        ConfigCache().load_config(str(cfg))


def test_files_then_overrides_win(tmp_path: Path) -> None:
    cfg = tmp_path / "a.yaml"
    cfg.write_text("plasma:\n  sigma_m: 3.0e-4\nscenario:\n  eta0: 5.0\n")

    merged = load_config([str(cfg)], [parse_override("scenario.eta0=6.0")])

    assert merged["plasma"]["sigma_m"] == 3.0e-4
    assert merged["plasma"]["N_i"] == DEFAULTS["plasma"]["N_i"]
    assert merged["scenario"]["eta0"] == 6.0


def test_deep_merge_replaces_leaves_and_keeps_siblings() -> None:
    base = {"a": {"b": 1, "c": [1, 2]}, "d": 0}

    merged = deep_merge(base, {"a": {"c": [3]}})

    assert merged == {"a": {"b": 1, "c": [3]}, "d": 0}
    assert base["a"]["c"] == [1, 2]


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("seed=4", {"seed": 4}),
        ("scenario.physics.tbr_heating=true", {"scenario": {"physics": {"tbr_heating": True}}}),
        ("scenario.duration_s=1e-7", {"scenario": {"duration_s": 1e-7}}),
        ("constants.heating_weighting=uniform", {"constants": {"heating_weighting": "uniform"}}),
    ],
)
def test_parse_override(text: str, expected: dict[str, Any]) -> None:
    assert parse_override(text) == expected


@pytest.mark.parametrize("text", ["seed", "=4"])
def test_malformed_override_raises(text: str) -> None:
    with pytest.raises(ConfigError, match="override"):
        parse_override(text)


def test_unknown_key_fails_validation() -> None:
    with pytest.raises(ConfigError, match="Schema validation failed"):
        load_config(overrides=[{"plasma": {"bogus": 1}}])


def test_bad_value_fails_validation() -> None:
    with pytest.raises(ConfigError, match="Schema validation failed"):
        load_config(overrides=[parse_override("scenario.truncation.mode=nowhere")])


def test_missing_schema_file_raises(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="Schema validation failed"):
        validate_against_schema({}, str(tmp_path / "absent.json"))


def test_more_electrons_than_ions_is_invalid() -> None:
    data = load_config(overrides=[{"plasma": {"N_e": 3.0e5}}])

    with pytest.raises(ConfigError, match="Invalid scenario"):
        Scenario.from_config(data)


def test_unknown_constant_is_invalid() -> None:
    data = deep_merge(DEFAULTS, {"constants": {"not_a_constant": 1.0}})

    with pytest.raises(ConfigError, match="Unknown constants"):
        Scenario.from_config(data)


def test_field_truncation_mode() -> None:
    data = load_config(overrides=[parse_override("scenario.truncation.mode=field")])

    scenario = Scenario.from_config(data)

    assert scenario.r_t_mode == "field"
    assert scenario.r_t_value == 1.0


def test_config_hash_is_canonical() -> None:
    a = {"x": 1, "y": {"z": 2.0}}
    b = {"y": {"z": 2.0}, "x": 1}

    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"x": 2, "y": {"z": 2.0}})


def test_scenario_hash_follows_the_config() -> None:
    first = Scenario.from_config(load_config())
    second = Scenario.from_config(load_config(overrides=[{"seed": 9}]))

    assert first.hash == config_hash(load_config())
    assert first.hash != second.hash


@pytest.mark.parametrize("name", ["reference.yaml", "isolated.yaml"])
def test_bundled_scenarios_validate(name: str) -> None:
    path = Path(__file__).resolve().parents[2] / "scenarios" / name

    scenario = Scenario.from_config(load_config([str(path)]))

    assert scenario.duration > 0
