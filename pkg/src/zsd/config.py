"""
Batch configuration documents.

A configuration is a flat YAML mapping whose keys are BatchSpec field names.
List-valued keys accept a YAML sequence or a comma-separated string:

    sizes: 5, 10
    algorithms: [flbr, omwu]
    etas: 0.1
    xis: 20, 50, 100
    reps: 100
    stop: kl_to_ref:1e-10

Built-in presets live in the package's `configs` directory and can be named
by file stem (e.g. `table1_desk`).
"""
import dataclasses
import logging
from pathlib import Path

import yaml

from zsd.errors import ConfigError
from zsd.experiments import BatchSpec

logger = logging.getLogger(__name__)

CONFIG_FIELDS = tuple(f.name for f in dataclasses.fields(BatchSpec))
LIST_FIELDS = {"sizes": int, "algorithms": str, "etas": float, "xis": float}
SCALAR_FIELDS = {"reps": int, "base_seed": int, "t_max": int, "stop": str, "reference": str}
PRESET_SUFFIX = ".cfg"


def get_presets_dir() -> Path:
    return Path(__file__).parent / "configs"


def list_presets() -> list[str]:
    """Stems of the built-in configuration files, sorted."""
    return sorted(p.stem for p in get_presets_dir().glob(f"*{PRESET_SUFFIX}"))


def get_preset_config(preset_name: str) -> str | None:
    """
    Get the path to a built-in preset configuration.

    Args:
        preset_name: Name of the preset (e.g., 'table1_desk')

    Returns:
        Path to the preset configuration file, or None if not found
    """
    preset_path = get_presets_dir() / f"{preset_name}{PRESET_SUFFIX}"
    if preset_path.is_file():
        return str(preset_path)
    return None


def resolve_config_path(name_or_path: str) -> str:
    """
    An existing file path is returned as is; otherwise `name_or_path` is looked up as a preset.

    Raises:
        FileNotFoundError: If it is neither a file nor a preset name.
    """
    if Path(name_or_path).is_file():
        return name_or_path
    preset = get_preset_config(name_or_path)
    if preset:
        logger.debug("Using preset configuration %s", preset)
        return preset
    raise FileNotFoundError(
        f"Configuration file not found: {name_or_path} "
        f"(built-in presets: {', '.join(list_presets()) or 'none'})",
    )


def load_config(config_path: str) -> dict:
    """
    Load a configuration mapping from a YAML file.

    Raises:
        FileNotFoundError: If the configuration file does not exist.
        ValueError: If the file is empty or not valid YAML.
    """
    config_path_obj = Path(config_path)
    if not config_path_obj.is_file():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")
    try:
        with open(config_path_obj) as f:
            config = yaml.safe_load(f)
            if not config:
                raise ValueError("Configuration file is empty")
            return config
    except Exception as e:
        raise ValueError(f"Error loading configuration: {e}")


def validate_config(config: dict) -> None:
    """
    Validate the structure of a configuration mapping.

    Raises:
        ConfigError: If it is not a mapping or has unknown keys.
    """
    if not isinstance(config, dict):
        raise ConfigError("Configuration must be a mapping of BatchSpec fields")
    unknown = sorted(set(config) - set(CONFIG_FIELDS))
    if unknown:
        raise ConfigError(
            f"Unknown configuration keys: {', '.join(map(str, unknown))}; "
            f"expected a subset of {', '.join(CONFIG_FIELDS)}",
        )


def _split_list(value: object) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _convert(key: str, value: object, kind: type) -> object:
    if kind is int and isinstance(value, float) and value.is_integer():
        value = int(value)
    if kind is int and isinstance(value, str):
        # YAML reads 2e6 as a string
        try:
            as_float = float(value)
        except ValueError:
            as_float = None
        if as_float is not None and as_float.is_integer():
            value = int(as_float)
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Configuration key '{key}' has an invalid value {value!r}")


def batch_spec_from_config(config: dict) -> BatchSpec:
    """
    Build a BatchSpec from a configuration mapping; missing keys take BatchSpec defaults.

    Raises:
        ConfigError: If a key is unknown or a value is invalid.
    """
    validate_config(config)
    kwargs = {}
    for key, kind in LIST_FIELDS.items():
        if key in config:
            kwargs[key] = tuple(_convert(key, item, kind) for item in _split_list(config[key]))
    for key, kind in SCALAR_FIELDS.items():
        if key in config:
            if config[key] is None:
                raise ConfigError(f"Configuration key '{key}' has no value")
            kwargs[key] = _convert(key, config[key], kind)
    return BatchSpec(**kwargs)


def load_batch_spec(name_or_path: str) -> BatchSpec:
    """Resolve, load and validate a configuration file or preset into a BatchSpec."""
    return batch_spec_from_config(load_config(resolve_config_path(name_or_path)))
