from collections import defaultdict

import pytest

from otlm.corpus import EOS, PAD, UNK, Vocab, build_vocab, decode, encode, read_lines

SAMPLE = [
    "the dog sees the cat",
    "a cat sleeps",
    "the old man likes a bird",
    "a bird runs near the dog",
    "The dog runs",
    "some dogs see a cat",
    "the cat that sleeps likes the man",
    "a big dog sleeps",
    "the bird sees a big cat",
    "men run",
    "a man runs with the dog",
    "the cat sees the bird",
    "a dog likes the old cat",
    "birds sleep",
    "the man near the dog sleeps",
    "a cat runs",
    "the big bird likes a man",
    "the dog that runs sees a cat",
    "a old man sleeps",
    "cats run with dogs",
]


def count_sort_oracle(lines, min_count):
    counts = defaultdict(int)
    for line in lines:
        for tok in line.split(" "):
            counts[tok] += 1
    buckets = defaultdict(list)
    for tok, c in counts.items():
        if c >= min_count:
            buckets[c].append(tok)
    order = []
    for c in sorted(buckets, reverse=True):
        order.extend(sorted(buckets[c]))
    return {tok: 3 + i for i, tok in enumerate(order)}


class TestVocab:
    def test_min_count(self):
        v = build_vocab(["a a b"], min_count=2)
        assert v.lookup("a") == 3
        assert v.lookup("b") == UNK

    def test_every_token_kept(self):
        v = build_vocab(["x y z", "z"])
        assert len(v) == 6 and {v.lookup(t) for t in "xyz"} == {3, 4, 5}

    @pytest.mark.parametrize("min_count", [1, 2, 3])
    def test_matches_count_sort_oracle(self, min_count):
        v = build_vocab(SAMPLE, min_count=min_count)
        expected = count_sort_oracle(SAMPLE, min_count)
        assert {tok: v.lookup(tok) for tok in expected} == expected
        assert len(v) == 3 + len(expected)

    def test_reserved_ids(self):
        v = build_vocab(["q"])
        assert v.itos[:3] == ["<pad>", "<unk>", "<eos>"]
        assert (PAD, UNK, EOS) == (0, 1, 2)
        assert v.lookup("<eos>") == UNK

    def test_lowercase(self):
        v = build_vocab(["The the THE"], lowercase=True)
        assert len(v) == 4 and v.lookup("tHe") == 3

    def test_empty_input(self):
        with pytest.raises(ValueError, match="empty"):
            build_vocab(["", "   "])

    def test_bad_min_count(self):
        with pytest.raises(ValueError, match="min_count"):
            build_vocab(["a"], min_count=0)

    def test_save_load(self, tmp_path):
        v = build_vocab(SAMPLE)
        v.save(tmp_path / "vocab.tsv")
        assert (tmp_path / "vocab.tsv").read_text().splitlines()[3] == f"{v.itos[3]}\t3"
        assert Vocab.load(tmp_path / "vocab.tsv").itos == v.itos

    def test_load_rejects_gaps(self, tmp_path):
        (tmp_path / "v.tsv").write_text("<pad>\t0\n<unk>\t1\n<eos>\t2\nx\t5\n")
        with pytest.raises(ValueError, match="contiguous"):
            Vocab.load(tmp_path / "v.tsv")


class TestEncode:
    def test_known(self):
        v = Vocab(["<pad>", "<unk>", "<eos>", "a", "b"])
        assert encode(["a b"], v).sentences == [[3, 4, 2]]

    def test_unseen(self):
        v = Vocab(["<pad>", "<unk>", "<eos>", "a"])
        assert encode(["zzz"], v).sentences == [[1, 2]]

    def test_round_trip(self):
        v = build_vocab(SAMPLE)
        corpus = encode(SAMPLE, v)
        assert [decode(s, v) for s in corpus.sentences] == SAMPLE
        assert all(s[-1] == EOS and max(s) < len(v) for s in corpus.sentences)

    def test_blank_lines_skipped(self):
        v = build_vocab(["a"])
        assert len(encode(["a", "", "a a"], v)) == 2

    def test_read_lines(self, tmp_path):
        (tmp_path / "c.txt").write_text("a b\n\n  \nc\n", encoding="utf-8")
        assert read_lines(tmp_path / "c.txt") == ["a b", "c"]
