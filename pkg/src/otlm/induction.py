"""Syntactic distances from forget gates and greedy top-down binary trees."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

AGGREGATIONS = ("mean_heads", "max_heads")


@dataclass(frozen=True)
class BinaryParseTree:
    """A leaf (``index`` set) or an internal node with two subtrees."""

    index: Optional[int] = None
    left: Optional["BinaryParseTree"] = None
    right: Optional["BinaryParseTree"] = None

    @property
    def is_leaf(self) -> bool:
        return self.index is not None

    def leaves(self) -> list:
        if self.is_leaf:
            return [self.index]
        return self.left.leaves() + self.right.leaves()

    @property
    def n_words(self) -> int:
        return len(self.leaves())

    def internal_count(self) -> int:
        return 0 if self.is_leaf else 1 + self.left.internal_count() + self.right.internal_count()

    def all_spans(self) -> list:
        """Inclusive spans of every internal node, outermost first."""
        if self.is_leaf:
            return []
        leaves = self.leaves()
        return [(leaves[0], leaves[-1])] + self.left.all_spans() + self.right.all_spans()

    @property
    def spans(self) -> frozenset:
        return tree_to_brackets(self)


def leaf(i: int) -> BinaryParseTree:
    return BinaryParseTree(index=i)


def node(left: BinaryParseTree, right: BinaryParseTree) -> BinaryParseTree:
    return BinaryParseTree(left=left, right=right)


@dataclass
class DistanceSequence:
    """``values[k]`` scores the boundary between words ``k`` and ``k + 1``."""

    values: np.ndarray
    layer_index: int = 0
    aggregation: str = "mean_heads"

    def __len__(self):
        return len(self.values)


def _normalize_agg(agg: str) -> str:
    name = {"mean": "mean_heads", "max": "max_heads"}.get(agg, agg)
    if name not in AGGREGATIONS:
        raise ValueError(f"unknown head aggregation {agg!r}; choose mean or max")
    return name


def gate_distances(trace, layer: int, agg: str = "mean_heads") -> DistanceSequence:
    """Expected number of wiped low-order neurons before each word after the first.

    Per head the distance at position ``t`` is ``gate_dim - sum(forget_gate[t])``;
    heads are combined by mean or max.
    """
    agg = _normalize_agg(agg)
    if not 0 <= layer < len(trace.per_layer):
        raise IndexError(f"layer {layer} out of range for {len(trace.per_layer)} captured layers")
    forget = np.asarray(trace.per_layer[layer].forget_gates, dtype=np.float64)
    if forget.ndim != 3:
        raise ValueError(f"expected forget gates shaped [T, heads, gate_dim], got {forget.shape}")
    if forget.shape[0] < 2:
        raise ValueError("need at least two positions to form a boundary")
    per_head = forget.shape[-1] - forget[1:].sum(axis=-1)
    values = per_head.mean(axis=-1) if agg == "mean_heads" else per_head.max(axis=-1)
    return DistanceSequence(values, layer, agg)


def greedy_tree(n_words: int, d) -> BinaryParseTree:
    """Split each span before its highest-distance word (leftmost on ties) and recurse."""
    values = np.asarray(d.values if isinstance(d, DistanceSequence) else d, dtype=np.float64).reshape(-1)
    if n_words < 1:
        raise ValueError("a tree needs at least one word")
    if len(values) != n_words - 1:
        raise ValueError(f"{n_words} words need {n_words - 1} distances, got {len(values)}")

    def build(lo: int, hi: int) -> BinaryParseTree:
        if lo == hi:
            return leaf(lo)
        split = lo + 1 + int(np.argmax(values[lo:hi]))
        return node(build(lo, split - 1), build(split, hi))

    return build(0, n_words - 1)


def tree_to_brackets(tree: BinaryParseTree) -> frozenset:
    """Spans of width >= 2, excluding the whole sentence."""
    whole = (0, tree.n_words - 1)
    return frozenset(s for s in tree.all_spans() if s[1] > s[0] and s != whole)


def tree_to_string(tree: BinaryParseTree, tokens) -> str:
    if tree.is_leaf:
        return str(tokens[tree.index])
    return f"({tree_to_string(tree.left, tokens)} {tree_to_string(tree.right, tokens)})"
