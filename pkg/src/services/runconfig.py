"""Run configuration files (TOML) into validated SimConfig objects"""

import tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Tuple, Union

from pydantic import BaseModel, ValidationError

from src.models import SimConfig
from src.utils import ConfigError, logger


def _dotted(loc: Tuple[Any, ...]) -> str:
    return ".".join(str(part) for part in loc if not isinstance(part, int)) or "<root>"


def _error_keys(exc: ValidationError) -> List[str]:
    keys = []
    for err in exc.errors():
        key = _dotted(err["loc"])
        if key not in keys:
            keys.append(key)
    return keys


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        key = _dotted(err["loc"])
        if err["type"] == "extra_forbidden":
            parts.append(f"{key}: unknown key")
        else:
            parts.append(f"{key}: {err['msg']}")
    return "; ".join(parts)


def validate_config(data: Dict[str, Any]) -> SimConfig:
    """SimConfig from a nested dict; errors name every offending dotted key"""
    try:
        return SimConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {_describe(exc)}", _error_keys(exc)) from exc


def parse_config(path: Union[str, Path]) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist", [])
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}", []) from exc
    config = validate_config(data)
    echo_config(config)
    return config


def _leaves(value: Any, prefix: str = "") -> Iterator[Tuple[str, Any]]:
    if isinstance(value, BaseModel):
        for name in type(value).model_fields:
            yield from _leaves(getattr(value, name), f"{prefix}{name}.")
    else:
        if isinstance(value, Enum):
            value = value.value
        yield prefix.rstrip("."), value


def echo_config(config: SimConfig) -> None:
    """Effective configuration, defaults included, one `key = value` per line"""
    for key, value in _leaves(config):
        logger.info(f"config {key} = {value}")


def with_overrides(config: SimConfig, **overrides: Any) -> SimConfig:
    """Copy of config with top-level fields replaced, revalidated"""
    data = config.model_dump()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return validate_config(data)
