"""Layered YAML configuration.

The packaged ``configs/default.yaml`` is the base layer; every file passed with
``--config`` is merged over it in order, then ``--set dotted.key=value``
overrides (values parsed as YAML scalars) are applied last.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import ParameterError

DEFAULT_CONFIG = "default.yaml"


def default_config_text() -> str:
    return resources.files("silentwave.configs").joinpath(DEFAULT_CONFIG).read_text(encoding="utf-8")


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(cfg: dict, assignment: str) -> dict:
    if "=" not in assignment:
        raise ParameterError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = yaml.safe_load(raw)
    return cfg


def load_config(paths=(), overrides=()) -> dict:
    cfg = yaml.safe_load(default_config_text()) or {}
    for p in paths:
        layer = yaml.safe_load(Path(p).read_text(encoding="utf-8")) or {}
        if not isinstance(layer, dict):
            raise ParameterError(f"config file {p} must hold a mapping")
        cfg = deep_merge(cfg, layer)
    for o in overrides:
        cfg = apply_override(cfg, o)
    return cfg


def config_hash(obj) -> str:
    """Stable content hash of any JSON-serialisable value."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class PipelineConfig:
    """Typed view over the merged mapping; sections stay plain dicts so they
    can be hashed and handed to each module's ``from_dict``."""

    raw: dict = field(default_factory=dict)

    @classmethod
    def load(cls, paths=(), overrides=()) -> "PipelineConfig":
        return cls(load_config(paths, overrides))

    def section(self, name: str) -> dict:
        return copy.deepcopy(self.raw.get(name) or {})

    @property
    def seeds(self) -> list:
        return [int(s) for s in self.raw.get("seeds", [0])]

    def with_overrides(self, *assignments) -> "PipelineConfig":
        cfg = copy.deepcopy(self.raw)
        for a in assignments:
            apply_override(cfg, a)
        return PipelineConfig(cfg)

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)
