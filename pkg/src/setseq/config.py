"""Config file handling for the CLI.

A run config is one JSON object with optional sections ("sim", "model",
"train", "sampler", "market", "cost", "recency") plus command-specific
top-level keys. Unknown keys anywhere are hard errors that list the valid
alternatives; parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .market import MarketConfig
from .model import SetSeqConfig
from .sim import DomainError, SimConfig
from .training import CostConfig, RecencyConfig, SamplerConfig, TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""


SECTIONS = {
    "sim": SimConfig,
    "model": SetSeqConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "market": MarketConfig,
    "cost": CostConfig,
    "recency": RecencyConfig,
}


def dataclass_from_dict(cls, data: dict, where: str = ""):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(
            f"unknown keys {sorted(unknown)} in {where or cls.__name__}; "
            f"valid keys: {sorted(valid)}")
    try:
        return cls(**data)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"bad {where or cls.__name__}: {exc}") from exc


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return obj


def dump_config(obj: dict) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


def section(cfg: dict, name: str, overrides: dict | None = None):
    """Instantiate a config section dataclass with optional overrides."""
    if name not in SECTIONS:
        raise ConfigError(f"unknown config section {name!r}; valid: {sorted(SECTIONS)}")
    data = dict(cfg.get(name, {}))
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return dataclass_from_dict(SECTIONS[name], data, where=f"section {name!r}")


def snapshot(**parts) -> dict:
    """Full config snapshot for manifests (dataclasses become dicts)."""
    out = {}
    for name, value in parts.items():
        if value is None:
            continue
        out[name] = dataclasses.asdict(value) if dataclasses.is_dataclass(value) else value
    return out
