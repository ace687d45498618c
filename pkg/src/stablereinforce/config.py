"""Flat ``key = value`` run configuration.

Resolution order, later wins: :class:`TrainConfig` defaults, the config file,
``STABLEREINFORCE_<KEY>`` environment variables, command-line overrides.

File syntax: one ``key = value`` per line, ``#`` starts a comment, blank lines
ignored.  Booleans accept ``true/false/1/0/yes/no``.  A ``.json`` file is read
as a run manifest and its ``config`` object is used.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping, Optional, Union

from .trainer import TrainConfig

ENV_PREFIX = "STABLEREINFORCE_"


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw, kind: type):
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind.__name__})") from None


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def read_config_file(path: Union[str, Path]) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
        return dict(data.get("config", data))
    return parse_config_text(text)


def resolve_config(path: Optional[Union[str, Path]] = None,
                   overrides: Optional[Mapping[str, object]] = None,
                   environ: Optional[Mapping[str, str]] = None) -> TrainConfig:
    types = TrainConfig.field_types()
    values: dict[str, object] = {}
    layers = []
    if path is not None:
        layers.append(read_config_file(path))
    environ = os.environ if environ is None else environ
    layers.append({k[len(ENV_PREFIX):].lower(): v for k, v in environ.items()
                   if k.startswith(ENV_PREFIX)})
    layers.append(dict(overrides or {}))
    for layer in layers:
        for key, raw in layer.items():
            if key not in types:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = _coerce(key, raw, types[key])
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_set_args(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.to_dict().items())
