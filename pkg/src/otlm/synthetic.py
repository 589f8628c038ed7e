"""Synthetic corpora: a toy phrase-structure language and a memorisation task."""

from __future__ import annotations

import numpy as np

from .treebank import Node, gold_from_node

LEXICON = {
    "DT": ("the", "a"),
    "NN": ("dog", "cat", "bird", "man"),
    "JJ": ("big", "old"),
    "VBZ": ("sees", "likes"),
    "VBI": ("sleeps", "runs"),
    "IN": ("near", "with"),
    "WDT": ("that",),
}
# plural forms used when number agreement is switched on
PLURAL = {
    "a": "some", "dog": "dogs", "cat": "cats", "bird": "birds", "man": "men",
    "sees": "see", "likes": "like", "sleeps": "sleep", "runs": "run",
}  # fmt: skip


class ToyGrammar:
    """English-like PCFG with recursion through PP and relative clauses.

    ``max_depth`` bounds how many NP/VP/PP/SBAR phrases may nest inside one
    another below the sentence node.
    """

    def __init__(
        self,
        max_depth: int = 4,
        p_adj: float = 0.3,
        p_pp: float = 0.3,
        p_rel: float = 0.15,
        agreement: bool = False,
    ):
        self.max_depth = max_depth
        self.p_adj, self.p_pp, self.p_rel = p_adj, p_pp, p_rel
        self.agreement = agreement

    @property
    def vocabulary(self) -> list:
        words = [w for ws in LEXICON.values() for w in ws]
        if self.agreement:
            words += [PLURAL[w] for w in words if w in PLURAL]
        return words

    def _word(self, tag: str, rng, plural: bool = False) -> Node:
        words = LEXICON[tag]
        word = words[rng.integers(len(words))]
        if plural:
            word = PLURAL.get(word, word)
        return Node("VBZ" if tag == "VBI" else tag, [word])

    def _number(self, rng) -> bool:
        return bool(self.agreement and rng.random() < 0.5)

    def np_(self, depth: int, rng, plural: bool = False) -> Node:
        base = [self._word("DT", rng, plural)]
        if rng.random() < self.p_adj:
            base.append(self._word("JJ", rng))
        base.append(self._word("NN", rng, plural))
        phrase = Node("NP", base)
        room = depth + 1 < self.max_depth
        if room and rng.random() < self.p_rel:
            rel = Node("SBAR", [self._word("WDT", rng), self.vp(depth + 1, rng, plural)])
            return Node("NP", [phrase, rel])
        if room and rng.random() < self.p_pp:
            return Node("NP", [phrase, self.pp(depth + 1, rng)])
        return phrase

    def pp(self, depth: int, rng) -> Node:
        return Node("PP", [self._word("IN", rng), self.np_(depth + 1, rng, self._number(rng))])

    def vp(self, depth: int, rng, plural: bool = False) -> Node:
        if depth + 1 < self.max_depth and rng.random() < 0.6:
            head = Node("VP", [self._word("VBZ", rng, plural), self.np_(depth + 1, rng, self._number(rng))])
        else:
            head = Node("VP", [self._word("VBI", rng, plural)])
        if depth + 1 < self.max_depth and rng.random() < self.p_pp:
            return Node("VP", [head, self.pp(depth + 1, rng)])
        return head

    def sentence(self, rng) -> Node:
        plural = self._number(rng)
        return Node("S", [self.np_(0, rng, plural), self.vp(0, rng, plural)])

    def sample(self, n: int, seed: int = 0, max_words: int | None = None) -> list:
        """``n`` labeled trees; sentences longer than ``max_words`` are redrawn."""
        rng = np.random.default_rng(seed)
        out = []
        while len(out) < n:
            tree = self.sentence(rng)
            if max_words is None or len(tree.leaves()) <= max_words:
                out.append(tree)
        return out


def generate_treebank(n: int, seed: int = 0, max_depth: int = 4, max_words: int | None = None, agreement: bool = False):
    """Return ``(ptb_lines, gold_trees)`` for ``n`` sampled sentences."""
    trees = ToyGrammar(max_depth=max_depth, agreement=agreement).sample(n, seed=seed, max_words=max_words)
    return [str(t) for t in trees], [gold_from_node(t) for t in trees]


def memorisation_corpus(n_sentences: int = 100, prefix_len: int = 4, seed: int = 0) -> list:
    """Copy-task lines ``k x1 .. xm = x1 .. xm`` with a distinct key ``k`` per line.

    The key determines the rest of the line, so a model that memorises the
    corpus can drive its cross-entropy towards zero.
    """
    rng = np.random.default_rng(seed)
    alphabet = [f"s{i}" for i in range(n_sentences)]
    keys = rng.permutation(n_sentences)
    lines = []
    for key in keys:
        body = [alphabet[j] for j in rng.integers(0, n_sentences, size=prefix_len)]
        lines.append(" ".join([f"s{key}"] + body + ["="] + body))
    return lines
