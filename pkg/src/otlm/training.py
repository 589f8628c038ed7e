"""Seeded mini-batch training: Adam, global-norm clipping, warmup, checkpoints.

A single ``numpy.random.Generator`` seeded from ``TrainConfig.seed`` is drawn
from in a fixed order: weight initialisation first, then for every epoch the
batch shuffle followed by the dropout masks of that epoch's steps.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .config import DataConfig, ModelConfig, TrainConfig
from .model import ModelWeights, init_weights, lm_forward, lm_loss, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: OptimizerState, cfg: TrainConfig, lr: float | None = None) -> None:
    """Apply one bias-corrected Adam update in place.

    Every gradient is checked before any parameter moves, so a NaN leaves the
    whole model untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    lr = cfg.learning_rate if lr is None else lr
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        p.data = (p.data - update).astype(p.data.dtype)


def global_norm(grads) -> float:
    values = grads.values() if isinstance(grads, dict) else grads
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in values))


def clip_gradients(grads, clip_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``clip_norm``."""
    norm = global_norm(grads)
    if norm <= clip_norm:
        return 1.0
    factor = clip_norm / norm
    items = grads.items() if isinstance(grads, dict) else enumerate(grads)
    for key, g in list(items):
        grads[key] = (g * factor).astype(g.dtype)
    return factor


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Linear warmup over ``warmup_steps`` then constant."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    return cfg.learning_rate


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    pad: np.ndarray

    @property
    def n_tokens(self) -> int:
        return int((~self.pad).sum())


def pad_batch(sentences, pad_id: int = 0) -> Batch:
    """Right-pad eos-terminated id sequences into next-token inputs and targets."""
    width = max(len(s) for s in sentences) - 1
    inputs = np.full((len(sentences), width), pad_id, dtype=np.int64)
    targets = np.full_like(inputs, pad_id)
    pad = np.ones_like(inputs, dtype=bool)
    for row, s in enumerate(sentences):
        n = len(s) - 1
        inputs[row, :n] = s[:-1]
        targets[row, :n] = s[1:]
        pad[row, :n] = False
    return Batch(inputs, targets, pad)


def bucket_batches(sentences, batch_size: int, rng: np.random.Generator | None = None) -> list:
    """Group sentences of similar length; order within ties and of batches is shuffled by ``rng``."""
    order = np.arange(len(sentences)) if rng is None else rng.permutation(len(sentences))
    order = sorted(order, key=lambda i: len(sentences[i]))
    batches = [pad_batch([sentences[i] for i in order[k : k + batch_size]]) for k in range(0, len(order), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def _usable(corpus, max_len: int) -> list:
    kept, clipped = [], 0
    for s in corpus.sentences:
        s = list(s)
        if len(s) < 2:
            continue
        if len(s) > max_len + 1:
            s, clipped = s[: max_len + 1], clipped + 1
        kept.append(s)
    if clipped:
        log.warning("truncated %d sentences longer than max_seq_len=%d", clipped, max_len)
    return kept


def train(
    corpus,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir,
    *,
    data_cfg: DataConfig | None = None,
    metrics_name: str = "metrics.jsonl",
) -> Path:
    """Train from scratch and return the final checkpoint path.

    Writes ``metrics.jsonl`` (one record per step) and ``step-XXXXXX.otlm``
    checkpoints every ``checkpoint_every`` steps plus ``final.otlm``.
    """
    sentences = _usable(corpus, model_cfg.max_seq_len)
    if not sentences:
        raise ValueError("training corpus is empty")
    top = max(max(s) for s in sentences)
    if top >= model_cfg.vocab_size:
        raise ValueError(f"corpus id {top} exceeds vocab_size={model_cfg.vocab_size}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(train_cfg.seed)
    weights = init_weights(model_cfg, rng, data_cfg)
    params = weights.named_parameters()
    state = OptimizerState()
    final = out / "final.otlm"
    last_good = None

    with open(out / metrics_name, "w") as metrics:
        if train_cfg.max_steps == 0:
            return save_checkpoint(weights, model_cfg, final)
        queue = []
        for step in range(train_cfg.max_steps):
            if not queue:
                queue = bucket_batches(sentences, train_cfg.batch_size, rng)
            batch = queue.pop()
            with tn.Tape() as tape:
                loss = lm_loss(lm_forward(batch.inputs, weights, rng=rng), batch.targets, batch.pad)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingDiverged(f"loss became {value} at step {step}", last_good)
                tn.backward(loss, tape)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            scale = clip_gradients(grads, train_cfg.clip_norm)
            lr = learning_rate(step, train_cfg)
            try:
                adam_step(params, grads, state, train_cfg, lr)
            except NonFiniteGradientError as exc:
                raise TrainingDiverged(str(exc), last_good) from exc
            record = {"step": step + 1, "loss": value, "ppl": math.exp(min(value, 700.0)), "lr": lr, "grad_scale": scale}
            metrics.write(json.dumps(record) + "\n")
            if (step + 1) % train_cfg.checkpoint_every == 0:
                last_good = save_checkpoint(weights, model_cfg, out / f"step-{step + 1:06d}.otlm")
    return save_checkpoint(weights, model_cfg, final)


def corpus_cross_entropy(weights: ModelWeights, corpus, batch_size: int = 64) -> float:
    """Token-weighted mean next-token cross-entropy (nats) over a corpus."""
    sentences = _usable(corpus, weights.config.max_seq_len)
    if not sentences:
        raise ValueError("cannot evaluate an empty corpus")
    total, count = 0.0, 0
    for batch in bucket_batches(sentences, batch_size):
        n = batch.n_tokens
        total += float(lm_loss(lm_forward(batch.inputs, weights), batch.targets, batch.pad).data) * n
        count += n
    return total / count


def evaluate_perplexity(checkpoint, corpus) -> float:
    """``exp`` of the mean next-token cross-entropy; ``checkpoint`` is a path or weights."""
    weights = checkpoint if isinstance(checkpoint, ModelWeights) else load_checkpoint(checkpoint)[0]
    return math.exp(corpus_cross_entropy(weights, corpus))
