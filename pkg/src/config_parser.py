"""Parse, validate, serialise and hash run configurations."""
import hashlib
import json
from pathlib import Path
from typing import Any, Union

import yaml
from pydantic import BaseModel, ValidationError

from .errors import ConfigError
from .models import (
    LOCALIZATION_MIN_SAMPLES,
    AcceptanceThresholds,
    ExperimentSettings,
    IRTestFunction,
    McmcSettings,
    ModelParams,
    PathConfig,
    RunConfig,
)

# flat key -> (section, field)
_SECTIONS: dict[str, type[BaseModel]] = {
    "model": ModelParams,
    "path": PathConfig,
    "test": IRTestFunction,
    "mcmc": McmcSettings,
    "experiments": ExperimentSettings,
    "acceptance": AcceptanceThresholds,
}
_RENAMED = {"gamma": "gammas"}
_FLAT_KEYS: dict[str, tuple[str, str]] = {}
for _section, _model in _SECTIONS.items():
    for _field in _model.model_fields:
        if _section == "path" and _field == "d":
            continue
        if _section == "model" and _field == "charge":
            continue
        _flat = next((k for k, v in _RENAMED.items() if v == _field), _field)
        _FLAT_KEYS[_flat] = (_section, _field)
_FLAT_KEYS["output_dir"] = ("", "output_dir")
_LIST_FIELDS = {"T_list", "t_list", "lags", "caps", "gammas"}


def _split_value(field: str, raw: Any) -> Any:
    if field in _LIST_FIELDS and isinstance(raw, str):
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def _collect(section: str, model: type[BaseModel], values: dict, violations: list) -> BaseModel | None:
    try:
        return model(**values)
    except ValidationError as e:
        reverse = {field: flat for flat, (sec, field) in _FLAT_KEYS.items() if sec == section}
        for err in e.errors():
            field = str(err["loc"][0]) if err["loc"] else section
            message = err["msg"].removeprefix("Value error, ")
            violations.append((reverse.get(field, field), message))
        return None


def build_config(flat: dict) -> RunConfig:
    """
    Build a RunConfig from flat key/value pairs.

    Raises:
        ConfigError: Carrying every violation found, keyed by the flat name
    """
    violations: list[tuple[str, str]] = []
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    output_dir = "output"
    for key, raw in flat.items():
        if key not in _FLAT_KEYS:
            violations.append((key, "unknown key"))
            continue
        section, field = _FLAT_KEYS[key]
        if not section:
            output_dir = str(raw)
            continue
        sections[section][field] = _split_value(field, raw)

    model = _collect("model", ModelParams, sections["model"], violations)
    if model is not None:
        sections["path"]["d"] = model.d
        sections["test"].setdefault("k_star", 0.5 / model.sigma)
    built = {"model": model}
    for name in ("path", "test", "mcmc", "experiments", "acceptance"):
        built[name] = _collect(name, _SECTIONS[name], sections[name], violations)

    if violations:
        raise ConfigError(violations)
    return RunConfig(output_dir=output_dir, **built)


def parse_config(text: str) -> RunConfig:
    """
    Parse flat `key = value` text ('#' comments, comma-separated lists).

    Raises:
        ConfigError: On malformed lines, unknown keys or invalid values
    """
    flat: dict[str, str] = {}
    violations = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            violations.append((f"line {number}", f"expected 'key = value', got '{line}'"))
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key in flat:
            violations.append((key, "duplicate key"))
        flat[key] = value
    if violations:
        raise ConfigError(violations)
    return build_config(flat)


def _format(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Write a config in the flat format; parse_config inverts it exactly."""
    lines = []
    for flat, (section, field) in _FLAT_KEYS.items():
        value = getattr(cfg, field) if not section else getattr(getattr(cfg, section), field)
        lines.append(f"{flat} = {_format(value)}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    """First 16 hex digits of SHA-256 over canonical JSON of the config."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class ConfigParser:
    """Handles loading and validation of run configuration files."""

    @staticmethod
    def parse(config_path: Union[str, Path]) -> RunConfig:
        """
        Parse a run configuration file.

        Args:
            config_path: Path to a flat `key = value` file or a YAML file with the same keys

        Returns:
            Validated RunConfig object

        Raises:
            FileNotFoundError: If the config file doesn't exist
            ConfigError: If the config is invalid
        """
        config_path = Path(config_path)

        if not config_path.exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")

        text = config_path.read_text(encoding="utf-8")
        if config_path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
            if not isinstance(data, dict):
                raise ConfigError([("<root>", "YAML config must be a mapping of flat keys")])
            return build_config(data)
        return parse_config(text)

    @staticmethod
    def validate_config(cfg: RunConfig) -> tuple[bool, list[str]]:
        """
        Check a config for regimes where results are not backed by theory.

        Args:
            cfg: RunConfig to check

        Returns:
            Tuple of (is_valid, list_of_warnings)
        """
        warnings = []

        if cfg.model.e > 1.0:
            warnings.append(f"Coupling e={cfg.model.e} > 1: existence of the Gibbs measure is only known for small e")
        if not cfg.model.potential().gibbs_admissible:
            warnings.append(f"pot_alpha={cfg.model.pot_alpha} <= 1: outside the confining class used for Gibbs runs")
        if cfg.mcmc.burn_in < 10 * cfg.mcmc.tune_interval:
            warnings.append("burn_in shorter than 10 tuning intervals; step sizes may be poorly tuned")
        if max(cfg.experiments.T_list) > cfg.path.T and cfg.path.T not in cfg.experiments.T_list:
            warnings.append(f"path T={cfg.path.T} is not in T_list; T_list entries override it per curve point")
        if cfg.mcmc.pooled_samples < LOCALIZATION_MIN_SAMPLES:
            warnings.append(f"chains x (steps - burn_in) / thin = {cfg.mcmc.pooled_samples} pooled samples; "
                            f"localization needs at least {LOCALIZATION_MIN_SAMPLES}")

        is_valid = cfg.mcmc.steps > cfg.mcmc.burn_in
        if not is_valid:
            warnings.append("steps must exceed burn_in to leave samples")
        return is_valid, warnings
