"""Scenario configuration: file cache, layered merge and schema validation."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import jsonschema
import yaml

from .errors import ConfigError, InvalidInputError
from .plasma_params import CESIUM_MASS_U, Constants, PlasmaSpec, Species

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenario.schema.json")

DEFAULTS: dict[str, Any] = {
    "plasma": {
        "N_i": 250000.0,
        "N_e": 230000.0,
        "sigma_m": 250e-6,
        "T_e_K": 50.0,
        "T_e_gamma_K": 53.3,
        "ion_mass_u": CESIUM_MASS_U,
        "ion_charge": 1,
    },
    "scenario": {
        "eta0": 7.0,
        "truncation": {"mode": "sigma_multiple", "sigma_multiple": 12.0, "field_V_per_m": 1.0},
        "duration_s": 0.0,
        "snapshot_interval_s": 1e-7,
        "physics": {
            "tbr_heating": False,
            "evaporation": True,
            "expansion": True,
            "master_equation": False,
        },
    },
    "constants": {
        "C_tbr": 1.0,
        "loss_prefactor": 12.0 * math.pi,
        "n_star_prefactor": math.sqrt(math.pi / 2.0),
        "n_star_energy_factor": 1.5,
        "virial_coefficient": 0.44,
        "conductivity_C": 1.0,
        "heating_weighting": "density",
    },
    "numerics": {
        "n_energy": 300,
        "n_radial": 800,
        "n_shells": 400,
        "n_bound": 200,
        "king_tol": 1e-8,
        "recouple_tol": 1e-6,
        "recouple_max_iter": 50,
        "picard_tol": 1e-10,
        "picard_max_iter": 30,
        "dt_relaxation_fraction": 0.05,
        "dt_expansion_fraction": 0.02,
    },
    "extraction": {"gap_m": 0.01},
    "seed": 0,
}


class ConfigCache:
    """Cache parsed scenario files and their SHA-256 checksums."""

    def __init__(self) -> None:
        self._cache: dict[str, dict] = {}
        self._checksums: dict[str, str] = {}

    @property
    def checksums(self) -> dict[str, str]:
        return dict(self._checksums)

    def load_config(self, filepath: str, format_type: str | None = None) -> dict:
        """Load and cache a YAML or JSON file; the format follows the extension unless given."""
        if filepath not in self._cache:
            fmt = format_type or _format_for(filepath)
            try:
                with open(filepath, "r", encoding="utf-8") as f:
                    content = f.read()
                if fmt == "yaml":
                    data = yaml.safe_load(content) or {}
                elif fmt == "json":
                    data = json.loads(content) or {}
                else:
                    raise ValueError(f"Unsupported format: {fmt}")
                if not isinstance(data, dict):
                    raise ValueError("top level must be a mapping")
                self._cache[filepath] = data
                self._checksums[filepath] = hashlib.sha256(content.encode()).hexdigest()
            except Exception as exc:
                raise ConfigError(f"Error reading {filepath}: {exc}") from exc
        return copy.deepcopy(self._cache[filepath])


def _format_for(filepath: str) -> str:
    ext = os.path.splitext(filepath)[1].lower()
    return "json" if ext == ".json" else "yaml"


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    """Recursive merge where ``override`` wins key by key and lists replace."""
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text: str) -> dict[str, Any]:
    """Turn ``a.b.c=value`` into a nested mapping; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override must look like key.path=value, got {text!r}")
    path, raw = text.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override has an empty key path: {text!r}")
    try:
        value: Any = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    if isinstance(value, str):
        # YAML 1.1 reads 1e-7 as a string
        try:
            value = float(value)
        except ValueError:
            pass
    for key in reversed(keys):
        value = {key: value}
    return value


def validate_against_schema(data: Mapping[str, Any], schema_path: str = SCHEMA_PATH) -> bool:
    """Validate ``data`` against the JSON schema at ``schema_path``."""
    try:
        if not os.path.isfile(schema_path):
            raise ValueError(f"schema file not found or not a regular file: {schema_path}")
        with open(schema_path, "r", encoding="utf-8") as f:
            schema = json.load(f)
        jsonschema.validate(instance=dict(data), schema=schema)
        return True
    except Exception as exc:
        raise ConfigError(f"Schema validation failed: {exc}") from exc


def load_config(
    paths: Iterable[str] = (),
    overrides: Iterable[Mapping[str, Any]] = (),
    cache: ConfigCache | None = None,
) -> dict[str, Any]:
    """Defaults, then each file in order, then overrides; validated before return."""
    cache = cache or ConfigCache()
    merged = copy.deepcopy(DEFAULTS)
    for path in paths:
        merged = deep_merge(merged, cache.load_config(path))
    for override in overrides:
        merged = deep_merge(merged, override)
    validate_against_schema(merged)
    return merged


def config_hash(data: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a merged configuration."""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass(frozen=True)
class PhysicsToggles:
    tbr_heating: bool = False
    evaporation: bool = True
    expansion: bool = True
    master_equation: bool = False


@dataclass(frozen=True)
class Numerics:
    n_energy: int = 300
    n_radial: int = 800
    n_shells: int = 400
    n_bound: int = 200
    king_tol: float = 1e-8
    recouple_tol: float = 1e-6
    recouple_max_iter: int = 50
    picard_tol: float = 1e-10
    picard_max_iter: int = 30
    dt_relaxation_fraction: float = 0.05
    dt_expansion_fraction: float = 0.02


@dataclass(frozen=True)
class Scenario:
    """A fully resolved simulation request."""

    spec: PlasmaSpec
    eta0: float = 7.0
    r_t_mode: str = "sigma_multiple"
    r_t_value: float = 12.0
    duration: float = 0.0
    snapshot_interval: float = 1e-7
    physics: PhysicsToggles = field(default_factory=PhysicsToggles)
    constants: Constants = field(default_factory=Constants)
    numerics: Numerics = field(default_factory=Numerics)
    seed: int = 0
    gap: float = 0.01
    config: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.duration < 0:
            raise InvalidInputError(f"duration must be nonnegative, got {self.duration!r}")
        if not self.snapshot_interval > 0:
            raise InvalidInputError("snapshot interval must be positive")
        if self.r_t_mode not in {"field", "sigma_multiple", "isolated"}:
            raise InvalidInputError(f"Unknown truncation mode: {self.r_t_mode}")

    @property
    def hash(self) -> str:
        return config_hash(self.config) if self.config else config_hash({"spec": repr(self.spec)})

    @classmethod
    def from_config(cls, data: Mapping[str, Any]) -> Scenario:
        plasma = data["plasma"]
        scenario = data["scenario"]
        truncation = scenario["truncation"]
        mode = truncation["mode"]
        value = {
            "field": truncation.get("field_V_per_m", 1.0),
            "sigma_multiple": truncation.get("sigma_multiple", 12.0),
            "isolated": 0.0,
        }[mode]
        try:
            ion = Species.ion(mass_u=plasma["ion_mass_u"], charge_number=plasma["ion_charge"])
            spec = PlasmaSpec(
                N_i=float(plasma["N_i"]),
                N_e=float(plasma["N_e"]),
                sigma=float(plasma["sigma_m"]),
                T_e=float(plasma["T_e_K"]),
                T_e_gamma=float(plasma["T_e_gamma_K"]),
                ion=ion,
            )
            return cls(
                spec=spec,
                eta0=float(scenario["eta0"]),
                r_t_mode=mode,
                r_t_value=float(value),
                duration=float(scenario["duration_s"]),
                snapshot_interval=float(scenario["snapshot_interval_s"]),
                physics=PhysicsToggles(**scenario["physics"]),
                constants=Constants.from_mapping(data.get("constants")),
                numerics=Numerics(**data.get("numerics", {})),
                seed=int(data.get("seed", 0)),
                gap=float(data.get("extraction", {}).get("gap_m", 0.01)),
                config=copy.deepcopy(dict(data)),
            )
        except InvalidInputError as exc:
            raise ConfigError(f"Invalid scenario: {exc}") from exc
