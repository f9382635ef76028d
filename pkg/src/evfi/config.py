"""Command configs: JSON file merged onto defaults, then ``key.sub=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

from .dataset import DatasetConfig
from .errors import InvalidConfig
from .evaluation import GROUPS
from .model import ModelConfig
from .training import ProtocolConfig

# values under these keys are passed through without key checking
OPAQUE = {"dataset.simulator", "dataset.scenes"}


def _section(obj) -> dict:
    d = asdict(obj)
    d.pop("seed", None)  # a single top-level seed drives every command
    return d


def defaults(command: str) -> dict:
    model, protocol = _section(ModelConfig()), _section(ProtocolConfig())
    table = {
        "simulate": {"dataset": _section(DatasetConfig())},
        "train": {"data": None, "limit": None, "model": model, "protocol": protocol},
        "interpolate": {"data": None, "checkpoint": None, "limit": None,
                        "save_weights": False, "save_flows": False},
        "evaluate": {"data": None, "checkpoint": None, "predictor": "model", "limit": None},
        "ablate": {"data": None, "eval_data": None, "limit": None, "eval_limit": None,
                   "groups": list(GROUPS), "model": model, "protocol": protocol},
    }
    if command not in table:
        raise InvalidConfig(f"unknown command {command!r}")
    return {"seed": 0, **copy.deepcopy(table[command])}


def merge(base: dict, update: dict, prefix: str = "") -> dict:
    """Recursive merge that rejects keys absent from ``base``."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in out:
            raise InvalidConfig(f"unknown config key {path!r}")
        if isinstance(out[key], dict) and path not in OPAQUE:
            if not isinstance(value, dict):
                raise InvalidConfig(f"config key {path!r} expects an object")
            out[key] = merge(out[key], value, path + ".")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """``a.b=value`` -> ``{"a": {"b": value}}``; values parse as JSON, else as strings."""
    if "=" not in text:
        raise InvalidConfig(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def resolve(command: str, path: str | Path | None = None, overrides: Sequence[str] = (),
            seed: int | None = None) -> dict:
    cfg = defaults(command)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InvalidConfig(f"config file {p} not found")
        try:
            cfg = merge(cfg, json.loads(p.read_text()))
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"{p}: {e}") from None
    for o in overrides:
        cfg = merge(cfg, parse_override(o))
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def build(cls, section: dict, seed: int):
    try:
        return cls(**section, seed=seed)
    except TypeError as e:
        raise InvalidConfig(f"{cls.__name__}: {e}") from None
