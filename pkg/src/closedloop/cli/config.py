"""Scenario configuration files (YAML) and their validation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..errors import ConfigurationError

TOP_KEYS = {"scenario", "params", "problem", "grid", "solver", "hbar", "sweep", "tolerances", "output", "route"}


class ConfigError(ConfigurationError):
    """Validation failure pointing at a config key (and its line when known)."""

    def __init__(self, message: str, key: str = "", line: Optional[int] = None):
        where = ""
        if line is not None:
            where += f"line {line}: "
        if key:
            where += f"{key}: "
        super().__init__(where + message)
        self.key = key
        self.line = line


@dataclass
class ScenarioConfig:
    scenario: str
    raw: dict
    source: str = "<memory>"
    lines: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        v = self.raw.get(name) or {}
        if not isinstance(v, dict):
            raise self.error(f"'{name}' must be a mapping", name)
        return v

    def error(self, message: str, key: str) -> ConfigError:
        return ConfigError(message, key, self.lines.get(key))

    def echo(self) -> dict:
        return copy.deepcopy(self.raw)


def _line_index(node, prefix="", out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_index(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            key = f"{prefix}[{i}]"
            out[key] = v.start_mark.line + 1
            _line_index(v, key, out)
    return out


def parse_config(text: str, source: str = "<memory>") -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    lines = _line_index(node)
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown key (allowed: {', '.join(sorted(TOP_KEYS))})", unknown[0], lines.get(unknown[0]))
    scen = raw.get("scenario")
    if not isinstance(scen, str) or not scen:
        raise ConfigError("missing scenario id", "scenario", lines.get("scenario"))
    return ScenarioConfig(scenario=scen, raw=raw, source=source, lines=lines)


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    return parse_config(text, str(p))


def take(cfg: ScenarioConfig, section: str, defaults: dict) -> dict:
    """Merge a config section over ``defaults``; unknown keys are errors."""
    given = cfg.section(section)
    extra = sorted(set(given) - set(defaults))
    if extra:
        key = f"{section}.{extra[0]}"
        raise cfg.error(f"unknown key for scenario '{cfg.scenario}' (allowed: {', '.join(sorted(defaults))})", key)
    out = dict(defaults)
    for k, v in given.items():
        d = defaults[k]
        key = f"{section}.{k}"
        try:
            if isinstance(d, bool):
                if not isinstance(v, bool):
                    raise ValueError
                out[k] = v
            elif isinstance(d, int):
                if isinstance(v, bool) or int(v) != v:
                    raise ValueError
                out[k] = int(v)
            elif isinstance(d, float):
                if isinstance(v, bool):
                    raise ValueError
                out[k] = float(v)
            elif isinstance(d, (list, tuple)):
                if not isinstance(v, (list, tuple)):
                    raise ValueError
                out[k] = list(v)
            else:
                out[k] = v
        except (TypeError, ValueError):
            raise cfg.error(f"expected {type(d).__name__}, got {v!r}", key) from None
    return out


def number_list(cfg: ScenarioConfig, key: str, value: Any, min_len: int = 1) -> list:
    if not isinstance(value, (list, tuple)) or len(value) < min_len:
        raise cfg.error(f"expected a list of at least {min_len} numbers", key)
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise cfg.error("list entries must be numbers", key) from None
