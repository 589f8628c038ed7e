"""Unidirectional ordered-attention language model and its checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .attention import AttentionConfig, init_layer_params, ordered_attention_forward
from .config import ConfigError, DataConfig, ModelConfig, from_text, to_text
from .tensor import Tensor

MAGIC = b"OTLM"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelWeights:
    config: ModelConfig
    token_embedding: Tensor
    positional_table: Tensor
    layers: list
    data: DataConfig = field(default_factory=DataConfig)

    def named_parameters(self) -> dict:
        """All trainable tensors by checkpoint name. The output head is the embedding."""
        named = {"token_embedding": self.token_embedding, "positional_table": self.positional_table}
        for i, layer in enumerate(self.layers):
            for name, t in layer.items():
                named[f"layers.{i}.{name}"] = t
        return named

    def with_precision(self, precision) -> "ModelWeights":
        cast = {k: Tensor(v.data, requires_grad=True, precision=precision, name=k) for k, v in self.named_parameters().items()}
        cfg = ModelConfig(**{**vars(self.config), "precision": tn.PrecisionMode.of(precision).value})
        return _assemble(cfg, cast, self.data)


def _assemble(cfg: ModelConfig, named: dict, data: DataConfig | None = None) -> ModelWeights:
    layers = []
    for i in range(cfg.n_layers):
        prefix = f"layers.{i}."
        layers.append({k[len(prefix):]: v for k, v in named.items() if k.startswith(prefix)})
    return ModelWeights(cfg, named["token_embedding"], named["positional_table"], layers, data or DataConfig())


def init_weights(cfg: ModelConfig, rng: np.random.Generator, data: DataConfig | None = None) -> ModelWeights:
    scale = cfg.d_model**-0.5
    precision = cfg.precision
    emb = Tensor(rng.normal(0.0, scale, (cfg.vocab_size, cfg.d_model)), requires_grad=True, precision=precision)
    pos = Tensor(rng.normal(0.0, scale, (cfg.max_seq_len, cfg.d_model)), requires_grad=True, precision=precision)
    att = AttentionConfig.from_model(cfg)
    layers = [init_layer_params(att, cfg.d_ff, rng, precision) for _ in range(cfg.n_layers)]
    return ModelWeights(cfg, emb, pos, layers, data or DataConfig())


@dataclass
class ForwardTrace:
    per_layer: list
    logits: Tensor


def _as_ids(tokens, cfg: ModelConfig) -> np.ndarray:
    ids = np.asarray(tokens)
    if ids.ndim not in (1, 2):
        raise ValueError(f"tokens must be a sequence or a batch of sequences, got shape {ids.shape}")
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("token ids must be integers")
    ids = ids.astype(np.int64)
    t = ids.shape[-1]
    if t < 1:
        raise ValueError("empty token sequence")
    if t > cfg.max_seq_len:
        raise ValueError(f"sequence length {t} exceeds max_seq_len={cfg.max_seq_len}")
    bad = ids[(ids < 0) | (ids >= cfg.vocab_size)]
    if bad.size:
        raise ValueError(f"unknown token id {int(bad[0])} (vocab size {cfg.vocab_size})")
    return ids


def lm_forward(tokens, weights: ModelWeights, capture_gates: bool = False, *, rng=None, gate_override=None) -> ForwardTrace:
    """Run the model; ``logits[t]`` scores the token at position ``t + 1``.

    ``tokens`` is one id sequence ``[T]`` or a right-padded batch ``[B, T]``.
    Dropout is active only when an ``rng`` is supplied.
    """
    cfg = weights.config
    ids = _as_ids(tokens, cfg)
    t = ids.shape[-1]
    att = AttentionConfig.from_model(cfg)
    h = tn.add(tn.embedding_lookup(weights.token_embedding, ids), tn.slice_(weights.positional_table, slice(0, t)))
    per_layer = []
    rate = cfg.dropout_rate if rng is not None else 0.0
    for layer in weights.layers:
        h, gates = ordered_attention_forward(h, layer, att, gate_override=gate_override, dropout_rate=rate, rng=rng)
        if capture_gates:
            per_layer.append(gates)
    logits = tn.matmul(h, tn.transpose_last_two(weights.token_embedding))
    return ForwardTrace(per_layer, logits)


def lm_loss(trace: ForwardTrace, targets, pad_mask=None) -> Tensor:
    """Mean next-token cross-entropy over positions where ``pad_mask`` is false."""
    logits = trace.logits
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits positions {logits.shape[:-1]}")
    keep = np.ones(targets.shape, dtype=bool) if pad_mask is None else ~np.asarray(pad_mask, dtype=bool)
    if not keep.any():
        raise ValueError("lm_loss: every position is padding")
    v = logits.shape[-1]
    flat = tn.reshape(logits, (-1, v))
    return tn.cross_entropy(flat, targets.reshape(-1), keep.reshape(-1).astype(logits.data.dtype))


def greedy_next(tokens, weights: ModelWeights) -> int:
    trace = lm_forward(tokens, weights)
    return int(np.argmax(trace.logits.data[-1]))


# ---------------------------------------------------------------------------
# Checkpoints


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _lp(text: str) -> bytes:
    raw = text.encode("utf-8")
    return _u32(len(raw)) + raw


def save_checkpoint(weights: ModelWeights, config: ModelConfig | None, path) -> Path:
    """Write weights as float32 little-endian; the config travels as key=value text."""
    cfg = config or weights.config
    named = weights.named_parameters()
    parts = [MAGIC, _u32(FORMAT_VERSION), _lp(to_text(cfg, weights.data)), _u32(len(named))]
    for name, t in named.items():
        parts.append(_lp(name))
        parts.append(_u32(t.data.ndim))
        parts.extend(_u32(d) for d in t.data.shape)
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}, file has {len(self.raw)}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"invalid UTF-8 in checkpoint: {exc}") from None


def _expected_shapes(cfg: ModelConfig) -> dict:
    d, g, ff = cfg.d_model, cfg.n_heads * cfg.gate_dim, cfg.d_ff
    per_layer = {
        "W_q": (d, d), "W_k": (d, d), "W_v": (d, d), "W_o": (d, d),
        "W_i": (d, g), "b_i": (g,), "W_f": (d, g), "b_f": (g,),
        "W_1": (d, ff), "b_1": (ff,), "W_2": (ff, d), "b_2": (d,),
        "ln1_g": (d,), "ln1_b": (d,), "ln2_g": (d,), "ln2_b": (d,),
    }  # fmt: skip
    shapes = {"token_embedding": (cfg.vocab_size, d), "positional_table": (cfg.max_seq_len, d)}
    for i in range(cfg.n_layers):
        shapes.update({f"layers.{i}.{k}": v for k, v in per_layer.items()})
    return shapes


def load_checkpoint(path, precision=None):
    """Read a checkpoint; returns ``(weights, config)``.

    ``precision`` overrides the stored mode ("wide" or "narrow").
    """
    reader = _Reader(Path(path).read_bytes())
    magic = reader.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    try:
        cfg, data = from_text(reader.text(), ModelConfig, DataConfig)
    except ConfigError as exc:
        raise CheckpointError(f"bad embedded config: {exc}") from None
    if precision is not None:
        cfg = ModelConfig(**{**vars(cfg), "precision": tn.PrecisionMode.of(precision).value})
    expected = _expected_shapes(cfg)
    count = reader.u32()
    if count != len(expected):
        raise CheckpointError(f"checkpoint holds {count} tensors, config implies {len(expected)}")
    named = {}
    for _ in range(count):
        name = reader.text()
        dims = tuple(reader.u32() for _ in range(reader.u32()))
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if dims != expected[name]:
            raise CheckpointError(f"tensor {name!r} has dims {dims}, config implies {expected[name]}")
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(dims)
        named[name] = Tensor(values.astype(tn.PrecisionMode.of(cfg.precision).dtype), requires_grad=True, name=name)
    if reader.pos != len(reader.raw):
        raise CheckpointError(f"{len(reader.raw) - reader.pos} trailing bytes after last tensor")
    return _assemble(cfg, named, data), cfg
