"""Trained model + sentences -> induced binary trees."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocab
from .induction import BinaryParseTree, DistanceSequence, gate_distances, greedy_tree, leaf
from .model import ModelWeights, lm_forward


def default_layer(n_layers: int) -> int:
    return n_layers // 2


@dataclass
class ParseResult:
    tokens: list
    tree: BinaryParseTree
    distances: DistanceSequence | None


def parse_tokens(tokens, weights: ModelWeights, vocab: Vocab, layer: int | None = None, agg: str = "mean") -> ParseResult:
    """Induce a tree for one tokenised sentence from its forget-gate distances."""
    if not tokens:
        raise ValueError("cannot parse an empty sentence")
    if len(tokens) > weights.config.max_seq_len:
        raise ValueError(f"sentence of {len(tokens)} words exceeds max_seq_len={weights.config.max_seq_len}")
    if len(tokens) == 1:
        return ParseResult(list(tokens), leaf(0), None)
    layer = default_layer(weights.config.n_layers) if layer is None else layer
    if not 0 <= layer < weights.config.n_layers:
        raise IndexError(f"layer {layer} out of range for a {weights.config.n_layers}-layer model")
    ids = np.array([vocab.lookup(t) for t in tokens])
    trace = lm_forward(ids, weights, capture_gates=True)
    dist = gate_distances(trace, layer, agg)
    return ParseResult(list(tokens), greedy_tree(len(tokens), dist), dist)


def parse_corpus(sentences, weights: ModelWeights, vocab: Vocab, layer: int | None = None, agg: str = "mean") -> list:
    return [parse_tokens(s, weights, vocab, layer, agg) for s in sentences]
