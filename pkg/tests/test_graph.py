"""Second-order projective decoding, partition functions and marginals."""
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_trees, brute_force, contains, factored_score, random_partial, random_projective
from pardep.corpus import DepTree, PartialTree
from pardep.features import sibling_pairs
from pardep.graph import (ConstraintMask, FactorScores, UnsatisfiableError, decode, decode_heads,
                          feasible_arcs, forest_log_prob, inside_outside, log_partition,
                          mask_is_satisfiable, score_tree)


def brute_sib_marginals(factors, partial=None):
    n = factors.n
    trees = [t for t in all_trees(n) if partial is None or contains(t, partial)]
    scores = np.array([factored_score(factors, t) for t in trees])
    p = np.exp(scores - scores.max())
    p /= p.sum()
    mu = np.zeros((n + 1, n + 1, n + 1))
    for t, pp in zip(trees, p):
        for h, m, s in sibling_pairs(t):
            mu[h, m, h if s is None else s] += pp
    return mu


class TestTreeCounts:
    @pytest.mark.parametrize("n,count", [(1, 1), (2, 2), (3, 7), (4, 30), (5, 143), (6, 728)])
    def test_zero_scores_count_trees(self, n, count):
        assert len(all_trees(n)) == count
        z = log_partition(FactorScores.zeros(n), ConstraintMask.trivial(n))
        assert z == pytest.approx(math.log(count), abs=1e-12)

    def test_feasible_arcs_unconstrained(self):
        f = feasible_arcs(ConstraintMask.trivial(4))
        used = np.zeros((5, 5), dtype=bool)
        for t in all_trees(4):
            for m, h in enumerate(t, 1):
                used[h, m] = True
        assert (f == used).all()


class TestScoreTree:
    def test_hand_example(self):
        # heads 1->0, 2->1, 3->1: arcs (0,1) (1,2) (1,3); siblings: 2 first right child, 3 after 2
        f = FactorScores.zeros(3)
        f.arc[0, 1], f.arc[1, 2], f.arc[1, 3] = 1.0, 2.0, 4.0
        f.sib[0, 1, 0], f.sib[1, 2, 1], f.sib[1, 3, 2] = 0.5, 0.25, 0.125
        f.sib[1, 3, 1] = 100.0  # would apply only if 3 were the first child
        assert score_tree(f, DepTree((0, 1, 1))) == 7.875

    def test_masked_arc_gives_minus_inf(self):
        f = FactorScores.random(3, np.random.default_rng(0))
        mask = ConstraintMask.from_partial(PartialTree(3, {2: 3}))
        assert score_tree(f, DepTree((2, 0, 2)), mask) == float("-inf")
        assert math.isfinite(score_tree(f, DepTree((0, 3, 1)), mask))


class TestExactness:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.booleans())
    def test_matches_brute_force(self, seed, n, constrained):
        rng = np.random.default_rng(seed)
        f = FactorScores.random(n, rng, scale=2.0)
        partial = random_partial(n, random.Random(seed))[0] if constrained else None
        mask = ConstraintMask.from_partial(partial) if partial else ConstraintMask.trivial(n)
        best, logz, marg = brute_force(f, partial)

        heads, score = decode_heads(f, mask)
        assert score == pytest.approx(factored_score(f, best), abs=1e-9)
        assert factored_score(f, tuple(heads[1:])) == pytest.approx(score, abs=1e-9)
        assert partial is None or contains(tuple(heads[1:]), partial)

        assert log_partition(f, mask) == pytest.approx(logz, abs=1e-9)
        io = inside_outside(f, mask)
        assert io.log_partition == pytest.approx(logz, abs=1e-9)
        assert np.allclose(io.arc_marginal, marg, atol=1e-9)
        assert np.allclose(io.sib_marginal, brute_sib_marginals(f, partial), atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 7))
    def test_marginals_are_finite_difference_of_logz(self, seed, n):
        rng = np.random.default_rng(seed)
        f = FactorScores.random(n, rng)
        mask = ConstraintMask.trivial(n)
        io = inside_outside(f, mask)
        m = int(rng.integers(1, n + 1))
        h = int(rng.choice([x for x in range(n + 1) if x != m]))
        eps = 1e-6
        up, down = FactorScores(f.arc.copy(), f.sib), FactorScores(f.arc.copy(), f.sib)
        up.arc[h, m] += eps
        down.arc[h, m] -= eps
        fd = (log_partition(up, mask) - log_partition(down, mask)) / (2 * eps)
        assert io.arc_marginal[h, m] == pytest.approx(fd, abs=1e-6)


class TestInvariants:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_marginals_normalize(self, seed, n):
        rng = np.random.default_rng(seed)
        io = inside_outside(FactorScores.random(n, rng, scale=3.0))
        col = io.arc_marginal.sum(axis=0)
        assert np.allclose(col[1:], 1.0, atol=1e-9)
        assert io.arc_marginal[0].sum() == pytest.approx(1.0, abs=1e-9)  # single root
        assert np.all(io.arc_marginal >= -1e-12) and np.all(io.arc_marginal <= 1 + 1e-9)
        assert np.allclose(io.sib_marginal.sum(axis=2), io.arc_marginal, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 10))
    def test_constraint_monotonicity(self, seed, n):
        """Adding constraints never raises the best score or the partition function."""
        rng = random.Random(seed)
        f = FactorScores.random(n, np.random.default_rng(seed))
        tree = DepTree(random_projective(n, rng))
        keep = sorted(rng.sample(range(1, n + 1), rng.randint(0, n)))
        small = PartialTree(n, {m: tree.heads[m - 1] for m in keep[: len(keep) // 2]})
        big = PartialTree(n, {m: tree.heads[m - 1] for m in keep})
        masks = [ConstraintMask.trivial(n), ConstraintMask.from_partial(small),
                 ConstraintMask.from_partial(big), ConstraintMask.from_tree(tree)]
        bests = [decode_heads(f, m)[1] for m in masks]
        logzs = [log_partition(f, m) for m in masks]
        for a, b in zip(bests, bests[1:]):
            assert b <= a + 1e-9
        for a, b in zip(logzs, logzs[1:]):
            assert b <= a + 1e-9
        # a fully specified tree has exactly one completion
        assert logzs[-1] == pytest.approx(score_tree(f, tree), abs=1e-9)
        assert bests[-1] == pytest.approx(score_tree(f, tree), abs=1e-9)
        assert forest_log_prob(f, masks[2]) <= 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 10))
    def test_decode_consistent_with_scoring(self, seed, n):
        f = FactorScores.random(n, np.random.default_rng(seed))
        tree = decode(f)
        tree.validate()
        assert score_tree(f, tree) == pytest.approx(decode_heads(f, ConstraintMask.trivial(n))[1], abs=1e-9)

    @pytest.mark.parametrize("n", [30, 60])
    def test_numerics_long_sentence(self, n):
        rng = np.random.default_rng(n)
        f = FactorScores(rng.uniform(-50, 50, (n + 1, n + 1)), rng.uniform(-50, 50, (n + 1, n + 1, n + 1)))
        io = inside_outside(f)
        assert math.isfinite(io.log_partition)
        assert np.all(np.isfinite(io.arc_marginal))
        assert np.allclose(io.arc_marginal.sum(axis=0)[1:], 1.0, atol=1e-6)
        tree = decode(f)
        tree.validate()
        assert score_tree(f, tree) <= io.log_partition + 1e-9


class TestConstraints:
    def test_unsatisfiable_mask(self):
        mask = ConstraintMask.trivial(3)
        mask.allowed[:, 2] = False
        assert not mask_is_satisfiable(mask)
        with pytest.raises(UnsatisfiableError):
            decode(FactorScores.zeros(3), mask)
        with pytest.raises(UnsatisfiableError):
            log_partition(FactorScores.zeros(3), mask)

    def test_unsatisfiable_partial(self):
        with pytest.raises(UnsatisfiableError):
            ConstraintMask.from_partial(PartialTree(3, {3: 1, 2: 0}))

    def test_forest_log_prob_of_full_tree(self):
        f = FactorScores.random(4, np.random.default_rng(1))
        tree = DepTree((2, 0, 4, 2))
        lp = forest_log_prob(f, ConstraintMask.from_tree(tree))
        assert lp == pytest.approx(score_tree(f, tree) - log_partition(f, ConstraintMask.trivial(4)), abs=1e-12)

    def test_forest_log_prob_needs_subset(self):
        f = FactorScores.zeros(3)
        a = ConstraintMask.from_partial(PartialTree(3, {1: 2}))
        b = ConstraintMask.from_partial(PartialTree(3, {1: 3}))
        with pytest.raises(ValueError):
            forest_log_prob(f, a, b)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            log_partition(FactorScores.zeros(3), ConstraintMask.trivial(4))

    @pytest.mark.parametrize("n", range(1, 6))
    def test_feasible_arcs_match_enumeration(self, n):
        rng = random.Random(n)
        for _ in range(10):
            p, _ = random_partial(n, rng)
            got = feasible_arcs(ConstraintMask.from_partial(p))
            want = np.zeros((n + 1, n + 1), dtype=bool)
            for t in all_trees(n):
                if contains(t, p):
                    for m, h in enumerate(t, 1):
                        want[h, m] = True
            assert (got == want).all()
