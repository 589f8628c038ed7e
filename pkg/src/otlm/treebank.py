"""Penn Treebank bracketed trees: reading, punctuation stripping, WSJ10 filtering.

Gold trees are reduced to unlabeled span sets: inclusive ``(start, end)``
word-index pairs with ``end > start``, the whole-sentence span excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

PUNCT_TAGS = frozenset({".", ",", ":", "``", "''", "-LRB-", "-RRB-", "#", "$"})
EMPTY_TAG = "-NONE-"


class TreebankError(ValueError):
    pass


class _Skip:
    """Result for a tree with no words left after stripping."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "SKIP"

    def __bool__(self):
        return False


SKIP = _Skip()


@dataclass
class Node:
    label: str
    children: list = field(default_factory=list)

    @property
    def is_preterminal(self) -> bool:
        return len(self.children) == 1 and isinstance(self.children[0], str)

    def leaves(self) -> list:
        out = []
        for c in self.children:
            out.extend([c] if isinstance(c, str) else c.leaves())
        return out

    def __str__(self):
        inner = " ".join(str(c) for c in self.children)
        return f"({self.label} {inner})" if self.label else f"({inner})"


@dataclass
class GoldTree:
    tokens: list
    spans: frozenset
    labels: dict = field(default_factory=dict)
    tags: list = field(default_factory=list)

    @property
    def n_words(self) -> int:
        return len(self.tokens)


# ---------------------------------------------------------------------------
# s-expression reading


def _scan(text: str):
    """Yield ``(kind, value, char_index)`` with kind in ``( ) atom``."""
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            yield ch, ch, i
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            yield "atom", text[i:j], i
            i = j


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def read_sexprs(text: str, labeled: bool = True) -> list:
    """Parse every top-level bracketed expression in ``text``.

    With ``labeled`` the first atom after ``(`` is the node label (PTB style);
    otherwise every atom is a leaf and nodes carry an empty label.
    """
    stack, opened, roots = [], [], []
    expect_label = False
    for kind, value, pos in _scan(text):
        if kind == "(":
            node = Node("")
            if stack:
                stack[-1].children.append(node)
            stack.append(node)
            opened.append(pos)
            expect_label = labeled
        elif kind == ")":
            if not stack:
                raise TreebankError(f"unbalanced ')' at byte offset {_byte_offset(text, pos)}")
            node = stack.pop()
            opened.pop()
            if not stack:
                roots.append(node)
            expect_label = False
        else:
            if not stack:
                raise TreebankError(f"token {value!r} outside brackets at byte offset {_byte_offset(text, pos)}")
            if expect_label:
                stack[-1].label = value
            else:
                stack[-1].children.append(value)
            expect_label = False
    if stack:
        raise TreebankError(f"unclosed '(' at byte offset {_byte_offset(text, opened[-1])}")
    return roots


def _base_label(label: str) -> str:
    if label.startswith("-"):
        return label
    return label.split("=")[0].split("-")[0]


def strip_tree(node: Node, keep_currency: bool = True):
    """Drop empty elements and punctuation leaves; prune nodes left childless.

    Returns a new tree or ``None`` when nothing survives.
    """
    drop = PUNCT_TAGS - ({"$"} if keep_currency else set())
    if node.is_preterminal:
        return None if node.label == EMPTY_TAG or node.label in drop else Node(node.label, list(node.children))
    kept = []
    for c in node.children:
        if isinstance(c, str):
            kept.append(c)
            continue
        s = strip_tree(c, keep_currency)
        if s is not None:
            kept.append(s)
    return Node(node.label, kept) if kept else None


def _collect(node: Node, start: int, spans: dict, tags: list) -> int:
    """Record labeled spans of ``node`` starting at word ``start``; return next index."""
    if node.is_preterminal:
        tags.append(node.label)
        return start + 1
    i = start
    for c in node.children:
        if isinstance(c, str):
            tags.append("")
            i += 1
        else:
            i = _collect(c, i, spans, tags)
    spans.setdefault((start, i - 1), []).append(_base_label(node.label))
    return i


def gold_from_node(node: Node, keep_currency: bool = True):
    stripped = strip_tree(node, keep_currency)
    if stripped is None:
        return SKIP
    tokens = stripped.leaves()
    labeled, tags = {}, []
    _collect(stripped, 0, labeled, tags)
    n = len(tokens)
    labels = {s: v for s, v in labeled.items() if s[1] > s[0] and s != (0, n - 1)}
    return GoldTree(tokens, frozenset(labels), labels, tags)


def parse_ptb(text: str, keep_currency: bool = True):
    """Parse one PTB tree into a :class:`GoldTree` (or ``SKIP`` if no words remain)."""
    roots = read_sexprs(text)
    if len(roots) != 1:
        raise TreebankError(f"expected exactly one tree, found {len(roots)}")
    return gold_from_node(roots[0], keep_currency)


def read_treebank(text: str, keep_currency: bool = True) -> list:
    """All trees in a PTB-format string, in order; empty trees become ``SKIP``."""
    return [gold_from_node(r, keep_currency) for r in read_sexprs(text)]


def load_treebank(path, keep_currency: bool = True) -> list:
    return read_treebank(Path(path).read_text(encoding="utf-8"), keep_currency)


def wsj10_filter(trees, max_len: int = 10) -> list:
    """Keep non-skipped trees with at most ``max_len`` words."""
    return [t for t in trees if t is not SKIP and t.n_words <= max_len]


def parse_bracketed(text: str) -> GoldTree:
    """Read an unlabeled tree such as ``(a ((b c) d))`` or a bare word."""
    text = text.strip()
    if not text:
        raise TreebankError("empty tree line")
    if not text.startswith("("):
        words = text.split()
        if len(words) != 1:
            raise TreebankError(f"unbracketed line must hold one word, got {len(words)}")
        return GoldTree(words, frozenset())
    roots = read_sexprs(text, labeled=False)
    if len(roots) != 1:
        raise TreebankError(f"expected exactly one tree, found {len(roots)}")
    root = roots[0]
    tokens = root.leaves()
    spans = {}
    _collect(root, 0, spans, [])
    n = len(tokens)
    return GoldTree(tokens, frozenset(s for s in spans if s[1] > s[0] and s != (0, n - 1)))
