"""Flat dotted-key run configuration.

One ``key = value`` per line, values are JSON literals, ``#`` starts a
comment. Sections: ``run.*``, ``paths.*``, ``model.*``, ``gen.*``,
``train.*``, ``eval.*``, ``lab.*``, ``bench.*``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

from .data import GeneratorConfig
from .model import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    rotate_test: float = 0.0  # degrees
    horizons: tuple = ()
    batch: int = 16


@dataclass
class LabConfig:
    k_theta: tuple = (4, 8, 16, 32)
    trials: int = 1000
    n_thetas: int = 20
    curve_k_theta: int = 16
    curve_points: int = 65
    curve_trials: int = 200
    mode: str = "nearest"


@dataclass
class BenchConfig:
    n: tuple = (250, 500, 1000)
    density: float = 0.02
    channels: int = 4
    repeats: int = 5
    max_ratio: float = 2.5


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    dataset: str = ""
    val: str = ""
    reference: str = ""
    checkpoint: str = ""
    out: str = "out"
    baseline: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    lab: LabConfig = field(default_factory=LabConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    overrides: tuple = ()


_RUN_KEYS = {"command": "command", "seed": "seed", "baseline": "baseline"}
_PATH_KEYS = {"dataset": "dataset", "val": "val", "reference": "reference", "checkpoint": "checkpoint", "out": "out"}
_SECTIONS = ("model", "gen", "train", "eval", "lab", "bench")


def _coerce(template, value, key):
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false")
        return value
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected an integer")
        return int(value)
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if isinstance(template, tuple):
        if not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(value)
    if isinstance(template, str) or template is None:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string")
        return value
    return value


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare words are strings


def apply_setting(cfg: RunConfig, key: str, value) -> RunConfig:
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"config keys look like section.name, got {key!r}")
    sec, name = parts
    if sec == "run" and name in _RUN_KEYS:
        return replace(cfg, **{name: _coerce(getattr(cfg, name), value, key)})
    if sec == "paths" and name in _PATH_KEYS:
        return replace(cfg, **{name: _coerce("", value, key)})
    if sec in _SECTIONS:
        sub = getattr(cfg, sec)
        names = {f.name for f in fields(sub)}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            new_sub = replace(sub, **{name: _coerce(getattr(sub, name), value, key)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        return replace(cfg, **{sec: new_sub})
    raise ConfigError(f"unknown config key {key!r}")


def parse_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig() if cfg is None else cfg
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        cfg = apply_setting(cfg, k, parse_value(v))
    return cfg


def load(path, cfg: RunConfig | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_text(fh.read(), cfg)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def apply_overrides(cfg: RunConfig, items) -> RunConfig:
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        k, v = item.split("=", 1)
        cfg = apply_setting(cfg, k, parse_value(v))
    return replace(cfg, overrides=tuple(cfg.overrides) + tuple(items))


def _fmt(v) -> str:
    if isinstance(v, tuple):
        v = list(v)
    return json.dumps(v)


def to_text(cfg: RunConfig) -> str:
    """Serialize every setting; :func:`parse_text` of the result rebuilds ``cfg``."""
    lines = [f"run.{k} = {_fmt(getattr(cfg, k))}" for k in _RUN_KEYS]
    lines += [f"paths.{k} = {_fmt(getattr(cfg, k))}" for k in _PATH_KEYS]
    for sec in _SECTIONS:
        sub = getattr(cfg, sec)
        lines += [f"{sec}.{f.name} = {_fmt(getattr(sub, f.name))}" for f in fields(sub)]
    return "\n".join(lines) + "\n"
