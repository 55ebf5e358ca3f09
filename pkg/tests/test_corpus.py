"""Treebank I/O, tree validation, UAS and candidate heads."""
import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_trees, contains, random_partial, random_sentence
from pardep.corpus import (DepTree, EvalResult, PartialTree, Sentence, Token, TreebankError,
                           candidate_heads, evaluate_corpus, evaluate_uas, is_satisfiable,
                           read_treebank, write_treebank)


def _block(rows):
    return "".join(f"{i}\t{f}\t_\t{p}\t{p}\t_\t{h}\t_\n" for i, (f, p, h) in enumerate(rows, 1)) + "\n"


TELESCOPE = Sentence.from_words([("I", "PRP"), ("saw", "VBD"), ("Sarah", "NNP"), ("with", "IN"),
                                 ("a", "DT"), ("telescope", "NN")])


class TestTypes:
    def test_token_index_must_be_positive(self):
        with pytest.raises(ValueError):
            Token(0, "x", "NN")

    def test_token_form_non_empty(self):
        with pytest.raises(ValueError):
            Token(1, "", "NN")

    def test_sentence_indices_contiguous(self):
        with pytest.raises(ValueError):
            Sentence((Token(1, "a", "DT"), Token(3, "b", "NN")))

    def test_punct_from_tags(self):
        s = Sentence.from_words([("Hi", "UH"), (",", ","), ("$", "$"), (".", ".")])
        assert s.punct_mask() == [False, True, False, True]

    def test_custom_punct_tags(self):
        s = Sentence.from_words([("Hi", "UH"), ("!", "PUNCT")], punct_tags={"UH"})
        assert s.punct_mask() == [True, False]

    @pytest.mark.parametrize("heads", [
        (2, 3, 2),        # cycle 2 <-> 3, no root
        (0, 0),           # two root attachments
        (2, 0, 0),
        (0, 3, 1, 2, 1),  # arcs 1-3 and 2-4 cross
        (1,),             # self loop
    ])
    def test_invalid_trees_rejected(self, heads):
        with pytest.raises(TreebankError):
            DepTree(heads).validate()

    def test_crossing_rejected(self):
        # 1->3 and 2->4 cross
        with pytest.raises(TreebankError, match="crossing"):
            DepTree((0, 4, 1, 1)).validate()

    def test_partial_tree_checks(self):
        PartialTree(3, {2: 0}).validate()
        with pytest.raises(TreebankError):
            PartialTree(3, {1: 0, 2: 0}).validate()
        with pytest.raises(TreebankError):
            PartialTree(3, {1: 2, 2: 1}).validate()
        with pytest.raises(TreebankError):
            PartialTree(3, {1: 4}).validate()

    def test_unsatisfiable_partial_rejected(self):
        # 1->3 forces token 2 under 1 or 3 while 2->0 claims the root spot inside the span
        p = PartialTree(3, {3: 1, 2: 0})
        assert not is_satisfiable(p)
        with pytest.raises(TreebankError):
            p.validate()


class TestReadWrite:
    def test_read_complete(self):
        text = _block([("a", "DT", 2), ("b", "NN", 0), ("c", "NN", 2)])
        [(s, t)] = read_treebank(text.encode())
        assert s.forms == ["a", "b", "c"]
        assert t == DepTree((2, 0, 2))

    def test_read_partial(self):
        text = _block([("a", "DT", "_"), ("b", "NN", 0), ("c", "NN", "_")])
        [(s, t)] = read_treebank(text, mode="partial")
        assert t == PartialTree(3, {2: 0})

    def test_cycle_rejected_with_diagnostic(self):
        text = _block([("a", "DT", 2), ("b", "NN", 3), ("c", "NN", 2)])
        with pytest.raises(TreebankError, match="cycle"):
            read_treebank(text)

    def test_unannotated_in_full_mode_rejected(self):
        with pytest.raises(TreebankError):
            read_treebank(_block([("a", "DT", "_"), ("b", "NN", 0)]))

    def test_wrong_column_count(self):
        with pytest.raises(TreebankError, match="columns"):
            read_treebank("1\ta\tDT\t0\n\n")

    def test_head_out_of_range(self):
        with pytest.raises(TreebankError, match="out of range"):
            read_treebank(_block([("a", "DT", 5), ("b", "NN", 0)]))

    def test_ten_columns_accepted(self):
        line = "1\ta\ta\tDT\tDT\t_\t0\troot\t_\t_\n\n"
        [(s, t)] = read_treebank(line)
        assert t.heads == (0,)

    def test_skip_mode_collects_diagnostics(self):
        text = _block([("a", "DT", 2), ("b", "NN", 3), ("c", "NN", 2)]) + _block([("x", "NN", 0)])
        diags = []
        items = read_treebank(text, on_error="skip", diagnostics=diags)
        assert len(items) == 1 and len(diags) == 1 and diags[0].sentence_index == 0

    def test_write_empty(self):
        assert write_treebank([]) == b""

    def test_write_partial_marker(self):
        s = Sentence.from_words([("a", "DT"), ("b", "NN"), ("c", "NN")])
        out = write_treebank([(s, PartialTree(3, {2: 0}))]).decode()
        assert [line.split("\t")[6] for line in out.strip().split("\n")] == ["_", "0", "_"]
        assert out.endswith("\n\n")

    def test_write_to_sink(self):
        s = Sentence.from_words([("a", "NN")])
        buf = io.BytesIO()
        data = write_treebank([(s, DepTree((0,)))], buf)
        assert buf.getvalue() == data

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 4))
    def test_round_trip(self, seed, n, count):
        rng = random.Random(seed)
        items = []
        for _ in range(count):
            s = random_sentence(rng.randint(1, n), rng, tags=("NN", ",", "VB", "."))
            if rng.random() < 0.5:
                items.append((s, DepTree(rng.choice(all_trees(len(s))))))
            else:
                items.append((s, random_partial(len(s), rng)[0]))
        data = write_treebank(items)
        again = read_treebank(data, mode="partial")
        full_back = [(s, t.to_tree() if isinstance(orig, DepTree) else t)
                     for (s, t), (_, orig) in zip(again, items)]
        assert full_back == items
        assert write_treebank(again) == data


class TestUAS:
    def _sentence(self, tags):
        return Sentence.from_words([(f"w{i}", t) for i, t in enumerate(tags)])

    def test_identity(self):
        s = self._sentence(["NN", "VB", "DT", "NN"])
        t = DepTree((2, 0, 4, 2))
        assert evaluate_uas(t, t, s).uas == 1.0

    def test_one_error_of_four(self):
        s = self._sentence(["NN", "VB", "DT", "NN"])
        r = evaluate_uas(DepTree((2, 0, 2, 2)), DepTree((2, 0, 4, 2)), s)
        assert (r.correct_heads, r.scored_tokens, r.uas) == (3, 4, 0.75)

    def test_punctuation_excluded(self):
        s = self._sentence(["NN", "VB", "."])
        r = evaluate_uas(DepTree((2, 0, 1)), DepTree((2, 0, 2)), s)
        assert (r.correct_heads, r.scored_tokens) == (2, 2)

    def test_all_punct_sentence_skipped_in_corpus(self):
        s1 = self._sentence([".", ","])
        s2 = self._sentence(["NN", "VB"])
        total = evaluate_corpus([(DepTree((0, 1)), DepTree((2, 0)), s1),
                                 (DepTree((2, 0)), DepTree((2, 0)), s2)])
        assert (total.correct_heads, total.scored_tokens) == (2, 2)

    def test_empty_result(self):
        assert EvalResult().uas == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_uas(DepTree((0,)), DepTree((2, 0)), self._sentence(["NN", "VB"]))

    def test_corpus_sums_counts(self):
        # ratio of sums, not mean of ratios
        a = self._sentence(["NN"])
        b = self._sentence(["NN", "VB", "NN"])
        total = evaluate_corpus([(DepTree((0,)), DepTree((0,)), a),
                                 (DepTree((2, 0, 1)), DepTree((2, 0, 2)), b)])
        assert total.uas == 3 / 4  # the mean of ratios would be 5/6

    def test_permutation_invariant(self):
        rng = random.Random(3)
        triples = []
        for _ in range(20):
            n = rng.randint(1, 5)
            s = random_sentence(n, rng, tags=("NN", ".", "VB"))
            triples.append((DepTree(rng.choice(all_trees(n))), DepTree(rng.choice(all_trees(n))), s))
        base = evaluate_corpus(triples)
        rng.shuffle(triples)
        assert evaluate_corpus(triples) == base


class TestCandidateHeads:
    def test_telescope_example(self):
        cand = candidate_heads(TELESCOPE, PartialTree(6, {2: 0, 4: 2}))
        assert cand[0] == {2}          # I
        assert cand[2] == {2, 4}       # Sarah
        assert cand[1] == {0} and cand[3] == {2}

    def test_full_tree_singletons(self):
        t = DepTree((2, 0, 2, 2, 6, 4))
        cand = candidate_heads(TELESCOPE, t.to_partial())
        assert [set(c) for c in cand] == [{h} for h in t.heads]

    def test_unsatisfiable_raises(self):
        s = random_sentence(3, random.Random(0))
        with pytest.raises(TreebankError):
            candidate_heads(s, PartialTree(3, {3: 1, 2: 0}))

    @pytest.mark.parametrize("n", range(1, 6))
    def test_matches_enumeration(self, n):
        """Trees whose arcs all lie in the candidate sets are exactly the trees containing the partial."""
        rng = random.Random(n)
        s = random_sentence(n, rng)
        for _ in range(15):
            p, _ = random_partial(n, rng)
            cand = candidate_heads(s, p)
            want = {t for t in all_trees(n) if contains(t, p)}
            within = {t for t in all_trees(n) if all(t[m] in cand[m] for m in range(n))}
            assert within == want
            used = [set() for _ in range(n)]
            for t in want:
                for m in range(n):
                    used[m].add(t[m])
            assert [set(c) for c in cand] == used
