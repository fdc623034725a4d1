"""Experiment configuration in flat ``key = value`` text.

One assignment per line, ``#`` starts a comment, keys are dotted
(``model.width = 64``).  Values are parsed as bool, int, float, or a
comma-separated list, falling back to a bare string.

Sections map to the dataclasses below: ``model.*`` to ``ModelConfig``,
``optim.*``, ``schedule.*``, ``data.*`` and ``train.*`` to the fields of
the same-named config classes.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .models import ModelConfig


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if not text:
        return ""
    if "," in text:
        return [parse_value(t) for t in text.split(",") if t.strip()]
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_config(text: str) -> dict:
    """Flat ``{dotted.key: value}`` dict; duplicate keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or any(c.isspace() for c in key):
            raise ConfigError(f"line {lineno}: invalid key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v) + ("," if len(v) == 1 else "")
    return str(v)


def dump_config(flat: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(flat.items()))


@dataclass
class OptimConfig:
    lr: float = 0.003
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    clip: float = 1.0


@dataclass
class ScheduleConfig:
    epochs: int = 50
    warmup: int = 5
    batch_size: int = 50
    patience: int = 0


@dataclass
class DataConfig:
    """Either ``path`` to an S2GR file or a generator task with its knobs."""

    path: str = ""
    task: str = ""
    count: int = 100
    seed: int = 0
    scale: float = 1.0


@dataclass
class TrainConfig:
    seed: int = 0
    checkpoint: str = ""
    log_every: int = 0


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        s = self.schedule
        if s.epochs < 0 or s.warmup < 0 or s.batch_size < 1 or s.patience < 0:
            raise ConfigError("schedule values must be nonnegative and batch_size positive")
        if self.optim.lr <= 0 or self.optim.weight_decay < 0 or self.optim.clip < 0:
            raise ConfigError("optimizer needs lr > 0 and nonnegative weight_decay and clip")
        if len(self.optim.betas) != 2 or not all(0 <= b < 1 for b in self.optim.betas):
            raise ConfigError("betas must be two values in [0, 1)")

    @classmethod
    def from_flat(cls, flat: dict, check_files: bool = True) -> "ExperimentConfig":
        sections = {f.name: {} for f in dataclasses.fields(cls)}
        for key, value in flat.items():
            head, _, rest = key.partition(".")
            if head not in sections or not rest or "." in rest:
                raise ConfigError(f"unknown config key {key!r}")
            sections[head][rest] = value
        built = {}
        for f in dataclasses.fields(cls):
            sub_cls = f.default_factory
            known = {x.name: x for x in dataclasses.fields(sub_cls)}
            kwargs = {}
            for name, value in sections[f.name].items():
                if name not in known:
                    raise ConfigError(f"unknown config key '{f.name}.{name}'")
                kwargs[name] = _coerce(value, known[name], sub_cls, f"{f.name}.{name}")
            try:
                built[f.name] = sub_cls(**kwargs)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {f.name} section: {exc}") from exc
        cfg = cls(**built)
        if check_files and cfg.data.path and not Path(cfg.data.path).exists():
            raise ConfigError(f"dataset file {cfg.data.path!r} does not exist")
        if not cfg.data.path and not cfg.data.task:
            raise ConfigError("set data.path or data.task")
        return cfg

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None, check_files: bool = True):
        flat = parse_config(text)
        flat.update(overrides or {})
        return cls.from_flat(flat, check_files)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, overrides)

    def to_flat(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            for x in dataclasses.fields(sub):
                v = getattr(sub, x.name)
                out[f"{f.name}.{x.name}"] = list(v) if isinstance(v, tuple) else v
        return out


def _coerce(value, fld: dataclasses.Field, owner, key: str):
    default = fld.default if fld.default is not dataclasses.MISSING else None
    if default is None and fld.default_factory is not dataclasses.MISSING:
        default = fld.default_factory()
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                return tuple(v.strip() for v in value.split(",") if v.strip())
            items = value if isinstance(value, (list, tuple)) else [value]
            return tuple(items)
        if isinstance(default, str):
            if isinstance(value, list):
                return ",".join(str(v) for v in value)
            return "" if value is None else str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot use {value!r} (expected {type(default).__name__})") from None
    return value
