import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otlm.attention import GateActivations
from otlm.induction import (
    DistanceSequence,
    gate_distances,
    greedy_tree,
    leaf,
    node,
    tree_to_brackets,
    tree_to_string,
)
from otlm.model import ForwardTrace
from otlm.treebank import parse_bracketed


def brute_force(words, d):
    """Nested-tuple tree by exhaustive scan for the leftmost largest boundary."""
    if len(words) == 1:
        return words[0]
    best = 0
    for k in range(1, len(d)):
        if d[k] > d[best]:
            best = k
    return (brute_force(words[: best + 1], d[:best]), brute_force(words[best + 1 :], d[best + 1 :]))


def as_tuple(tree):
    return tree.index if tree.is_leaf else (as_tuple(tree.left), as_tuple(tree.right))


def fake_trace(forget_per_layer):
    layers = [GateActivations(None, np.asarray(f, dtype=float), None) for f in forget_per_layer]
    return ForwardTrace(layers, None)


class TestDistances:
    def test_all_ones(self):
        trace = fake_trace([np.ones((3, 2, 4))])
        assert gate_distances(trace, 0).values.tolist() == [0.0, 0.0]

    def test_half_deleted(self):
        trace = fake_trace([np.tile([0.0, 0.0, 1.0, 1.0], (2, 1, 1))])
        assert gate_distances(trace, 0).values.tolist() == [2.0]

    def test_random_trace_oracle(self):
        rng = np.random.default_rng(0)
        f = np.sort(rng.uniform(size=(6, 3, 5)), axis=-1)
        trace = fake_trace([rng.uniform(size=(6, 3, 5)), f])
        mean = gate_distances(trace, 1, "mean")
        mx = gate_distances(trace, 1, "max_heads")
        for t in range(1, 6):
            per_head = [5 - sum(f[t, h]) for h in range(3)]
            assert abs(mean.values[t - 1] - sum(per_head) / 3) <= 1e-10
            assert abs(mx.values[t - 1] - max(per_head)) <= 1e-10
        assert len(mean) == 5 and mean.layer_index == 1 and mean.aggregation == "mean_heads"

    def test_bounds(self):
        f = np.sort(np.random.default_rng(1).uniform(size=(9, 2, 4)), axis=-1)
        v = gate_distances(fake_trace([f]), 0).values
        assert v.min() >= 0 and v.max() <= 4

    def test_layer_out_of_range(self):
        with pytest.raises(IndexError, match="layer 1"):
            gate_distances(fake_trace([np.ones((3, 1, 2))]), 1)
        with pytest.raises(IndexError):
            gate_distances(fake_trace([np.ones((3, 1, 2))]), -1)

    def test_needs_two_positions(self):
        with pytest.raises(ValueError, match="two positions"):
            gate_distances(fake_trace([np.ones((1, 1, 2))]), 0)

    def test_unknown_aggregation(self):
        with pytest.raises(ValueError, match="aggregation"):
            gate_distances(fake_trace([np.ones((3, 1, 2))]), 0, "median")


class TestGreedy:
    def test_two_words(self):
        assert as_tuple(greedy_tree(2, [0.3])) == (0, 1)

    def test_single_word(self):
        assert greedy_tree(1, []).is_leaf

    def test_hand_example(self):
        tree = greedy_tree(4, [3, 1, 2])
        assert tree_to_string(tree, ["w1", "w2", "w3", "w4"]) == "(w1 ((w2 w3) w4))"
        assert tree_to_brackets(tree) == {(1, 2), (1, 3)}

    def test_monotone_distances(self):
        n = 6
        right = greedy_tree(n, [5, 4, 3, 2, 1])
        left = greedy_tree(n, [1, 2, 3, 4, 5])
        assert right.spans == {(i, n - 1) for i in range(1, n - 1)}
        assert left.spans == {(0, j) for j in range(1, n - 1)}

    def test_ties_leftmost(self):
        assert as_tuple(greedy_tree(3, [1.0, 1.0])) == (0, (1, 2))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="distances"):
            greedy_tree(4, [1, 2])

    def test_accepts_distance_sequence(self):
        d = DistanceSequence(np.array([3.0, 1.0, 2.0]))
        assert greedy_tree(4, d) == greedy_tree(4, [3, 1, 2])

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_exhaustive_against_brute_force(self, n):
        words = list(range(n))
        orderings = set(itertools.permutations(range(n - 1)))
        # include tied orderings as well
        orderings |= set(itertools.product(range(2), repeat=n - 1))
        for d in orderings:
            assert as_tuple(greedy_tree(n, list(d))) == brute_force(words, list(d)), d


class TestBrackets:
    def test_two_word_tree_has_no_spans(self):
        assert tree_to_brackets(node(leaf(0), leaf(1))) == frozenset()

    def test_string_round_trip(self):
        tree = greedy_tree(5, [0.2, 0.9, 0.1, 0.5])
        text = tree_to_string(tree, ["a", "b", "c", "d", "e"])
        assert parse_bracketed(text).spans == tree_to_brackets(tree)


# a 1/64 grid keeps 2d+1 and exp(d/5) strictly monotone in floating point
grid = st.integers(-320, 320).map(lambda k: k / 64)
distances = st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(grid, min_size=n - 1, max_size=n - 1))
)


@settings(max_examples=200)
@given(distances)
def test_tree_properties(case):
    n, d = case
    tree = greedy_tree(n, d)
    assert tree.internal_count() == n - 1
    assert tree.leaves() == list(range(n))
    spans = tree.all_spans()
    for (a, b), (c, e) in itertools.combinations(spans, 2):
        assert not (a < c <= b < e or c < a <= e < b)
    assert as_tuple(tree) == brute_force(list(range(n)), d)


@settings(max_examples=200)
@given(distances)
def test_monotone_transform_invariance(case):
    n, d = case
    d = np.asarray(d)
    assert greedy_tree(n, d) == greedy_tree(n, 2 * d + 1)
    assert greedy_tree(n, d) == greedy_tree(n, np.exp(d / 5))
