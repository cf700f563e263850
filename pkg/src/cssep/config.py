"""Declarative YAML configuration with dotted-key CLI overrides."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .spatialsim import DatasetConfig, SimConfig
from .train import TrainConfig


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping")
    return data


def apply_overrides(config: dict, overrides) -> dict:
    """Apply "dotted.key=value" overrides; values are YAML-parsed."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = yaml.safe_load(raw)
    return config


def _build(cls, section: dict, **extra):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigurationError(
            f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}"
        )
    values = dict(section)
    values.update(extra)
    for f in dataclasses.fields(cls):
        if f.name in values and isinstance(values[f.name], list):
            values[f.name] = tuple(values[f.name])
    return cls(**values)


def train_config(section: dict, **extra) -> TrainConfig:
    return _build(TrainConfig, section, **extra)


def dataset_config(section: dict, **extra) -> DatasetConfig:
    section = dict(section)
    sim_section = section.pop("sim", {})
    sim = _build(SimConfig, sim_section) if not isinstance(sim_section, SimConfig) else sim_section
    return _build(DatasetConfig, section, sim=sim, **extra)
