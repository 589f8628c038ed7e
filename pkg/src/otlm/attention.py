"""Causal self-attention with ordered (cumax) input and forget gates.

For each head, value vectors are scaled by a monotone non-increasing input
gate of their source position, summed with the causal attention weights, and
the aggregate is scaled by a monotone non-decreasing forget gate of the target
position. A forget gate near ``[0, .., 0, 1, .., 1]`` wipes the low-index
neurons, so short-timescale content lives low and long-timescale content high.
Each of the ``gate_dim`` gate coordinates covers ``chunk_factor`` consecutive
value neurons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int
    gate_dim: int
    chunk_factor: int

    def __post_init__(self):
        if min(self.d_model, self.n_heads, self.gate_dim, self.chunk_factor) < 1:
            raise ValueError(f"attention sizes must be positive: {self}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.gate_dim * self.chunk_factor != self.d_head:
            raise ValueError(f"gate_dim*chunk_factor={self.gate_dim * self.chunk_factor} != d_head={self.d_head}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def from_model(cls, cfg) -> "AttentionConfig":
        return cls(cfg.d_model, cfg.n_heads, cfg.gate_dim, cfg.chunk_factor)


@dataclass
class GateActivations:
    """Gate values captured from one layer (numpy arrays, detached).

    ``input_gates`` and ``forget_gates`` are ``[T, n_heads, gate_dim]``,
    ``attn_weights`` is ``[n_heads, T, T]``; batched forwards add a leading
    batch axis to each.
    """

    input_gates: np.ndarray
    forget_gates: np.ndarray
    attn_weights: np.ndarray

    def to_dict(self) -> dict:
        return {
            "input_gates": self.input_gates.tolist(),
            "forget_gates": self.forget_gates.tolist(),
            "attn_weights": self.attn_weights.tolist(),
        }


LAYER_PARAM_NAMES = (
    "W_q", "W_k", "W_v", "W_o",
    "W_i", "b_i", "W_f", "b_f",
    "W_1", "b_1", "W_2", "b_2",
    "ln1_g", "ln1_b", "ln2_g", "ln2_b",
)  # fmt: skip


def init_layer_params(cfg: AttentionConfig, d_ff: int, rng: np.random.Generator, precision="wide") -> dict:
    d, g = cfg.d_model, cfg.n_heads * cfg.gate_dim

    def dense(n_in, n_out):
        return rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))

    raw = {
        "W_q": dense(d, d),
        "W_k": dense(d, d),
        "W_v": dense(d, d),
        "W_o": dense(d, d),
        "W_i": dense(d, g),
        "b_i": np.zeros(g),
        "W_f": dense(d, g),
        "b_f": np.zeros(g),
        "W_1": dense(d, d_ff),
        "b_1": np.zeros(d_ff),
        "W_2": dense(d_ff, d),
        "b_2": np.zeros(d),
        "ln1_g": np.ones(d),
        "ln1_b": np.zeros(d),
        "ln2_g": np.ones(d),
        "ln2_b": np.zeros(d),
    }
    return {k: Tensor(raw[k], requires_grad=True, precision=precision, name=k) for k in LAYER_PARAM_NAMES}


def _causal_mask(t: int) -> np.ndarray:
    return np.triu(np.ones((t, t), dtype=bool), k=1)


def causal_weights(q, k) -> Tensor:
    """Masked softmax of scaled dot products; row ``t`` covers positions ``j <= t``."""
    q, k = tn._as_tensor(q), tn._as_tensor(k)
    t = q.shape[-2]
    if t == 0:
        raise ShapeError("causal_weights: empty sequence (T == 0)")
    if k.shape != q.shape:
        raise ShapeError(f"causal_weights: q {q.shape} and k {k.shape} differ")
    scores = tn.scale(tn.matmul(q, tn.transpose_last_two(k)), 1.0 / math.sqrt(q.shape[-1]))
    return tn.softmax(tn.mask_fill(scores, _causal_mask(t)))


def _gate_logits(h: Tensor, weight: Tensor, bias: Tensor, cfg: AttentionConfig) -> Tensor:
    x = h if h.data.ndim > 1 else tn.reshape(h, (1, -1))
    z = tn.add(tn.matmul(x, weight), bias)
    return tn.reshape(z, h.shape[:-1] + (cfg.n_heads, cfg.gate_dim))


def input_gate(h, params: dict, cfg: AttentionConfig) -> Tensor:
    """``1 - cumax(W_i h + b_i)`` per head: ``[..., n_heads, gate_dim]``, non-increasing."""
    z = _gate_logits(tn._as_tensor(h), params["W_i"], params["b_i"], cfg)
    return tn.add(tn.scale(tn.cumax(z), -1.0), 1.0)


def forget_gate(h, params: dict, cfg: AttentionConfig) -> Tensor:
    """``cumax(W_f h + b_f)`` per head: ``[..., n_heads, gate_dim]``, non-decreasing."""
    z = _gate_logits(tn._as_tensor(h), params["W_f"], params["b_f"], cfg)
    return tn.cumax(z)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    return tn.permute(tn.reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return tn.reshape(tn.permute(x, (0, 2, 1, 3)), (b, t, h * dh))


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if not rate or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return tn.mul(x, Tensor(keep.astype(x.data.dtype)))


def _check_params(params: dict, cfg: AttentionConfig):
    d, g = cfg.d_model, cfg.n_heads * cfg.gate_dim
    expected = {"W_q": (d, d), "W_k": (d, d), "W_v": (d, d), "W_o": (d, d), "W_i": (d, g), "b_i": (g,), "W_f": (d, g), "b_f": (g,)}
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"ordered_attention: {name} has shape {params[name].shape}, config expects {shape}")


def ordered_attention_forward(
    h,
    params: dict,
    cfg: AttentionConfig,
    *,
    gate_override=None,
    dropout_rate: float = 0.0,
    rng=None,
):
    """One post-norm transformer block with ordered gating inside attention.

    ``h`` is ``[T, d_model]`` or ``[B, T, d_model]``. ``gate_override`` may be a
    pair of arrays ``(input_gates, forget_gates)`` broadcastable to
    ``[B, T, n_heads, gate_dim]`` that replace the computed gates (used to pin
    gates at saturation). Returns ``(out, GateActivations)``.
    """
    h = tn._as_tensor(h)
    single = h.data.ndim == 2
    if h.data.ndim not in (2, 3) or h.shape[-1] != cfg.d_model:
        raise ShapeError(f"ordered_attention: input shape {h.shape} does not match d_model={cfg.d_model}")
    if h.shape[-2] == 0:
        raise ShapeError("ordered_attention: empty sequence (T == 0)")
    _check_params(params, cfg)
    x = tn.reshape(h, (1,) + h.shape) if single else h
    n_heads, c = cfg.n_heads, cfg.chunk_factor

    q = _split_heads(tn.matmul(x, params["W_q"]), n_heads)
    k = _split_heads(tn.matmul(x, params["W_k"]), n_heads)
    v = _split_heads(tn.matmul(x, params["W_v"]), n_heads)
    attn = causal_weights(q, k)  # [B, H, T, T]

    if gate_override is None:
        i_gate = input_gate(x, params, cfg)  # [B, T, H, Dg]
        f_gate = forget_gate(x, params, cfg)
    else:
        shape = x.shape[:2] + (n_heads, cfg.gate_dim)
        i_gate, f_gate = (
            Tensor(np.broadcast_to(np.asarray(g, dtype=x.data.dtype), shape).copy()) for g in gate_override
        )

    def expand(gate):
        return tn.permute(tn.repeat_lastdim(gate, c), (0, 2, 1, 3))  # [B, H, T, d_head]

    context = tn.matmul(attn, tn.mul(expand(i_gate), v))
    gated = tn.mul(expand(f_gate), context)
    mixed = tn.matmul(_merge_heads(gated), params["W_o"])

    y = tn.layer_norm(tn.add(x, _dropout(mixed, dropout_rate, rng)), params["ln1_g"], params["ln1_b"])
    ff = tn.add(tn.matmul(tn.relu(tn.add(tn.matmul(y, params["W_1"]), params["b_1"])), params["W_2"]), params["b_2"])
    out = tn.layer_norm(tn.add(y, _dropout(ff, dropout_rate, rng)), params["ln2_g"], params["ln2_b"])

    gates = GateActivations(i_gate.data, f_gate.data, attn.data)
    if single:
        out = tn.reshape(out, out.shape[1:])
        gates = GateActivations(gates.input_gates[0], gates.forget_gates[0], gates.attn_weights[0])
    return out, gates
