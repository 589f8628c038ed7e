"""Unlabeled bracket F1 and deterministic comparison baselines."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .induction import BinaryParseTree, greedy_tree, leaf, node

log = logging.getLogger(__name__)

STRATEGIES = ("right_branching", "left_branching", "balanced", "random")


def _check_spans(spans, what: str) -> frozenset:
    spans = frozenset(tuple(s) for s in spans)
    for s in spans:
        if len(s) != 2 or s[1] <= s[0]:
            raise ValueError(f"malformed {what} span {s}: end must exceed start")
    return spans


def _ratio(matched: int, size: int, other: int) -> float:
    if size == 0:
        return 1.0 if other == 0 else 0.0
    return matched / size


def _harmonic(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def span_f1(pred, gold) -> tuple:
    """Precision, recall and F1 of two span sets.

    An empty side scores 1.0 when the other side is empty as well, else 0.0.
    """
    pred, gold = _check_spans(pred, "predicted"), _check_spans(gold, "gold")
    matched = len(pred & gold)
    p = _ratio(matched, len(pred), len(gold))
    r = _ratio(matched, len(gold), len(pred))
    return p, r, _harmonic(p, r)


@dataclass
class F1Report:
    per_sentence: list = field(default_factory=list)
    micro_precision: float = 0.0
    micro_recall: float = 0.0
    micro_f1: float = 0.0
    macro_f1: float = 0.0
    n_sentences: int = 0
    n_pred_spans: int = 0
    n_gold_spans: int = 0
    n_matched: int = 0
    n_excluded: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> dict:
        out = self.to_dict()
        out.pop("per_sentence")
        return out


def corpus_f1(pairs) -> F1Report:
    """Score ``(pred, gold)`` pairs; each side needs ``n_words`` and ``spans``.

    Micro counts skip sentences whose gold span set is empty; the macro mean
    keeps every sentence.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot score an empty corpus")
    report = F1Report(n_sentences=len(pairs))
    f1s = []
    for i, (pred, gold) in enumerate(pairs):
        if pred.n_words != gold.n_words:
            raise ValueError(f"sentence {i}: prediction has {pred.n_words} words, gold has {gold.n_words}")
        ps, gs = _check_spans(pred.spans, "predicted"), _check_spans(gold.spans, "gold")
        p, r, f = span_f1(ps, gs)
        matched = len(ps & gs)
        report.per_sentence.append({"precision": p, "recall": r, "f1": f, "n_pred": len(ps), "n_gold": len(gs), "n_matched": matched})
        f1s.append(f)
        if not gs:
            report.n_excluded += 1
            continue
        report.n_pred_spans += len(ps)
        report.n_gold_spans += len(gs)
        report.n_matched += matched
    if report.n_excluded:
        log.info("%d sentences with no gold spans excluded from micro counts", report.n_excluded)
    report.micro_precision = _ratio(report.n_matched, report.n_pred_spans, report.n_gold_spans)
    report.micro_recall = _ratio(report.n_matched, report.n_gold_spans, report.n_pred_spans)
    report.micro_f1 = _harmonic(report.micro_precision, report.micro_recall)
    report.macro_f1 = float(np.mean(f1s))
    return report


def _right(lo, hi):
    return leaf(lo) if lo == hi else node(leaf(lo), _right(lo + 1, hi))


def _left(lo, hi):
    return leaf(hi) if lo == hi else node(_left(lo, hi - 1), leaf(hi))


def _balanced(lo, hi):
    if lo == hi:
        return leaf(lo)
    mid = lo + (hi - lo + 2) // 2  # first word of the right half; left half gets the extra word
    return node(_balanced(lo, mid - 1), _balanced(mid, hi))


def baseline_trees(strategy: str, n_words: int, seed=None) -> BinaryParseTree:
    """A baseline tree; ``random`` pushes a random distance permutation through ``greedy_tree``.

    ``seed`` may be an int or a ``numpy.random.Generator`` (consumed in place).
    """
    if n_words < 1:
        raise ValueError("a tree needs at least one word")
    if strategy == "right_branching":
        return _right(0, n_words - 1)
    if strategy == "left_branching":
        return _left(0, n_words - 1)
    if strategy == "balanced":
        return _balanced(0, n_words - 1)
    if strategy == "random":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return greedy_tree(n_words, rng.permutation(n_words - 1).astype(float))
    raise ValueError(f"unknown baseline strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")


def baseline_report(strategy: str, golds, seed: int = 0) -> F1Report:
    rng = np.random.default_rng(seed)
    return corpus_f1((baseline_trees(strategy, g.n_words, rng), g) for g in golds)
