"""Configuration management for kanbench: experiment files and user settings."""

import os
import re
from pathlib import Path
from typing import Any, Optional, Union

import yaml
from pydantic import ValidationError

from kanbench.errors import ConfigError
from kanbench.models import CONFIG_VERSION, ExperimentConfig, Settings


def get_config_dir() -> Path:
    """Directory holding user settings and user experiments."""
    return Path(os.getenv("KANBENCH_CONFIG_DIR", Path.home() / ".config" / "kanbench"))


def get_settings_path() -> Path:
    return get_config_dir() / "config.yaml"


def expand_env_vars(value: str) -> str:
    """Expand ${VAR} references; unknown variables are left as written."""
    if not isinstance(value, str):
        return value

    def replace_env(match):
        return os.getenv(match.group(1), match.group(0))

    return re.sub(r'\$\{([^}]+)\}', replace_env, value)


def _expand_env(data: Any) -> Any:
    """Recursively expand environment variables in nested YAML data."""
    if isinstance(data, dict):
        return {key: _expand_env(value) for key, value in data.items()}
    if isinstance(data, list):
        return [_expand_env(item) for item in data]
    if isinstance(data, str):
        return expand_env_vars(data)
    return data


def _read_yaml(path: Path) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from e


def parse_experiment(data: Any, source: str = "<config>") -> ExperimentConfig:
    """Validate already-parsed YAML data into an ExperimentConfig."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: experiment config must be a mapping")
    data = _expand_env(data)
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"{source}: unsupported config version {version!r} (expected {CONFIG_VERSION})")
    data.setdefault("name", Path(source).stem)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """Load and validate an experiment YAML file."""
    path = Path(path)
    return parse_experiment(_read_yaml(path), str(path))


def load_settings(settings_path: Optional[Path] = None) -> Settings:
    """Load user settings, creating the file with defaults on first use."""
    if settings_path is None:
        settings_path = get_settings_path()

    if not settings_path.exists():
        return _create_default_settings(settings_path)

    data = _expand_env(_read_yaml(settings_path) or {})
    try:
        return Settings(**data)
    except (TypeError, ValidationError) as e:
        raise ConfigError(f"{settings_path}: {e}") from e


def _create_default_settings(settings_path: Path) -> Settings:
    settings = Settings()
    try:
        settings_path.parent.mkdir(parents=True, exist_ok=True)
        with open(settings_path, "w", encoding="utf-8") as f:
            yaml.dump(settings.model_dump(), f, default_flow_style=False, sort_keys=False)
    except OSError:
        pass
    return settings
