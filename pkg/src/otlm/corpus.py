"""Whitespace tokenisation, vocabularies and id encoding for LM corpora."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD, UNK, EOS = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<eos>")


@dataclass
class Vocab:
    itos: list
    min_count: int = 1
    lowercase: bool = False
    stoi: dict = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.itos[:3]) != RESERVED:
            raise ValueError(f"vocabulary must start with the reserved tokens {RESERVED}")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.itos)

    def normalize(self, token: str) -> str:
        return token.lower() if self.lowercase else token

    def lookup(self, token: str) -> int:
        tok = self.normalize(token)
        if tok in RESERVED:
            return UNK
        return self.stoi.get(tok, UNK)

    def save(self, path) -> None:
        """Write ``token<TAB>id`` lines."""
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.itos):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path, lowercase: bool = False, min_count: int = 1) -> "Vocab":
        pairs = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            try:
                tok, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), tok))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'token<TAB>id'") from None
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError(f"{path}: ids are not contiguous from 0")
        return cls([tok for _, tok in pairs], min_count=min_count, lowercase=lowercase)


@dataclass
class TokenizedCorpus:
    sentences: list
    vocab: Vocab

    def __len__(self):
        return len(self.sentences)

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)


def tokenize(line: str) -> list:
    return line.split()


def build_vocab(lines, min_count: int = 1, lowercase: bool = False) -> Vocab:
    """Ids ordered by frequency (descending) then token text; rare tokens become unk."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    for line in lines:
        counts.update(t.lower() if lowercase else t for t in tokenize(line))
    if not counts:
        raise ValueError("cannot build a vocabulary from empty input")
    kept = sorted((tok for tok, c in counts.items() if c >= min_count and tok not in RESERVED), key=lambda t: (-counts[t], t))
    return Vocab(list(RESERVED) + kept, min_count=min_count, lowercase=lowercase)


def encode(sentences, vocab: Vocab) -> TokenizedCorpus:
    """Map each sentence to ids and append eos. Blank lines are skipped."""
    out = []
    for s in sentences:
        toks = tokenize(s) if isinstance(s, str) else list(s)
        if toks:
            out.append([vocab.lookup(t) for t in toks] + [EOS])
    return TokenizedCorpus(out, vocab)


def decode(ids, vocab: Vocab) -> str:
    return " ".join(vocab.itos[i] for i in ids if i != EOS)


def read_lines(path) -> list:
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
