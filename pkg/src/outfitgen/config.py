"""Run configuration: INI file sections layered over built-in defaults.

Precedence is command-line overrides, then the file, then defaults.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .model import TGNNConfig
from .synth import SynthConfig
from .training import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass
class PartitionConfig:
    phi: int = 50


@dataclass
class EvalConfig:
    n_c: int = 3
    n_r: int = 5
    seed_len: int = 1
    include_stop: bool = True
    cp_negatives: int = 3


@dataclass
class RunConfig:
    model: TGNNConfig = field(default_factory=TGNNConfig)
    train: TrainerConfig = field(default_factory=TrainerConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    SECTIONS = ("model", "train", "partition", "eval", "synth")

    def to_dict(self):
        return {s: asdict(getattr(self, s)) for s in self.SECTIONS}

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_value(text):
    """JSON scalars where possible (numbers, true/false, null), else the raw
    string."""
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(cls, name, value):
    types = {f.name: f.type for f in fields(cls)}
    if name not in types:
        raise ConfigError(f"unknown key {name!r} for {cls.__name__}")
    t = str(types[name])
    if value is None:
        return None
    if "bool" in t:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} expects true/false, got {value!r}")
        return value
    if "int" in t and "float" not in t:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{name} expects an integer, got {value!r}")
        return int(value)
    if "float" in t:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} expects a number, got {value!r}")
        return float(value)
    return value


def _apply(run, section, key, value):
    if section not in RunConfig.SECTIONS:
        raise ConfigError(f"unknown section {section!r}")
    current = getattr(run, section)
    d = asdict(current)
    d[key] = _coerce(type(current), key, value)
    try:
        setattr(run, section, type(current)(**d))
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


_FLAT = "__flat__"


def _apply_flat(run, key, value):
    """``section.key`` or a bare key, which sets every section defining it."""
    if "." in key:
        section, name = key.split(".", 1)
        _apply(run, section, name, value)
        return
    hits = [s for s in RunConfig.SECTIONS if key in {f.name for f in fields(type(getattr(run, s)))}]
    if not hits:
        raise ConfigError(f"unknown key {key!r}")
    for s in hits:
        _apply(run, s, key, value)


def load_config(path=None, overrides=()):
    """Build a :class:`RunConfig`.

    ``overrides`` are ``section.key=value`` strings applied after the file.
    """
    run = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
            # bare key=value lines before any header form an implicit section
            parser.read_string(f"[{_FLAT}]\n" + text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                if section == _FLAT:
                    _apply_flat(run, key, parse_value(raw))
                else:
                    _apply(run, section, key, parse_value(raw))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _apply(run, section, key.strip(), parse_value(raw))
    return run


def dump_config(run):
    lines = []
    for s in RunConfig.SECTIONS:
        lines.append(f"[{s}]")
        for k, v in asdict(getattr(run, s)).items():
            lines.append(f"{k} = {json.dumps(v)}")
        lines.append("")
    return "\n".join(lines)
