"""Model, training and data configuration with a canonical ``key=value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or violated invariants."""


@dataclass
class ModelConfig:
    vocab_size: int = 16
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    gate_dim: int = 16
    chunk_factor: int = 1
    max_seq_len: int = 64
    dropout_rate: float = 0.0
    ff_mult: int = 4
    precision: str = "narrow"

    def __post_init__(self):
        self.validate()

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_ff(self) -> int:
        return self.ff_mult * self.d_model

    def validate(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "gate_dim", "chunk_factor", "ff_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.gate_dim * self.chunk_factor != self.d_head:
            raise ConfigError(
                f"gate_dim*chunk_factor must equal d_head: {self.gate_dim}*{self.chunk_factor} != {self.d_head}"
            )
        if self.max_seq_len < 2:
            raise ConfigError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.precision not in ("wide", "narrow"):
            raise ConfigError(f"precision must be 'wide' or 'narrow', got {self.precision!r}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 1.0
    batch_size: int = 16
    max_steps: int = 1000
    warmup_steps: int = 0
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch_size and checkpoint_every must be positive")
        if self.max_steps < 0 or self.warmup_steps < 0 or self.seed < 0:
            raise ConfigError("max_steps, warmup_steps and seed must be non-negative")


@dataclass
class DataConfig:
    min_count: int = 1
    lowercase: bool = False

    def __post_init__(self):
        if self.min_count < 1:
            raise ConfigError(f"min_count must be >= 1, got {self.min_count}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, kind):
    try:
        if kind is bool or kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "1")
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def to_text(*configs) -> str:
    """Canonical form: one ``key=value`` per line, keys sorted."""
    items = {}
    for cfg in configs:
        for f in fields(cfg):
            items[f.name] = _format(getattr(cfg, f.name))
    return "".join(f"{k}={items[k]}\n" for k in sorted(items))


def parse_pairs(text: str) -> dict:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"duplicate key: {key}")
        pairs[key] = value
    return pairs


def from_text(text: str, *classes, allow=()):
    """Parse ``text`` into one instance per dataclass in ``classes``.

    Keys not belonging to any class (or listed in ``allow``) are rejected.
    """
    pairs = parse_pairs(text)
    known = {f.name: (cls, f) for cls in classes for f in fields(cls)}
    for key in pairs:
        if key not in known and key not in allow:
            raise ConfigError(f"unknown config key: {key}")
    out = []
    for cls in classes:
        kwargs = {}
        for f in fields(cls):
            if f.name in pairs:
                kwargs[f.name] = _coerce(f.name, pairs[f.name], f.type)
        try:
            out.append(cls(**kwargs))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    return tuple(out)


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes)
