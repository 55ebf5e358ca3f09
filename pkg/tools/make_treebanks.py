"""Generate the synthetic treebanks checked into data/synthetic/.

separable.conll
    20 short sentences over five tree shapes.  Every shape has its own
    words and tags at every position, so a linear model can fit it exactly.

train.conll, dev.conll, test.conll
    Sentences from a head-driven English-like grammar with PTB tags.  Most
    of the attachment ambiguity comes from lexical preferences that a
    parser has to learn word by word:

    * prepositional phrases (one to three in a row) attach to any node on
      the right frontier of the clause (the verb, its object, the nouns of
      earlier prepositional phrases), scored by preposition and head-word
      affinities plus noise;
    * noun compounds of three nouns bracket left or right by a pairwise
      preference;
    * clause-final adverbs attach to the main or an embedded verb;
    * noun phrase and clause coordination, relative and participial
      clauses, appositions, control and complement clauses.

Usage: python tools/make_treebanks.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from pardep.corpus import DepTree, Sentence, save_treebank

SEED = 20240611
_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "kl", "st", "tr", "gr", "pl", "sh", "ch", "w", "h"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea", "oo", "y"]


def _pseudo_words(rng, count, suffix, taken):
    out = []
    while len(out) < count:
        syl = rng.integers(1, 4)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syl)) + suffix
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


class Lexicon:
    def __init__(self, rng):
        taken = set()
        self.rng = rng
        self.nouns = _pseudo_words(rng, 600, "n", taken)
        self.names = [w.capitalize() for w in _pseudo_words(rng, 120, "x", taken)]
        self.adjs = _pseudo_words(rng, 150, "ic", taken)
        self.advs = _pseudo_words(rng, 40, "ly", taken)
        self.trans = _pseudo_words(rng, 150, "it", taken)
        self.intrans = _pseudo_words(rng, 60, "ar", taken)
        self.ditrans = _pseudo_words(rng, 10, "ove", taken)
        self.saying = _pseudo_words(rng, 12, "ink", taken)
        self.control = _pseudo_words(rng, 12, "ant", taken)
        self.nums = ["two", "three", "four", "ten", "100", "1990", "5", "million", "20", "half"]
        self.dets = ["the", "a", "this", "some", "every", "its", "their", "no", "that"]
        self.prons = ["he", "she", "it", "they", "we", "I", "you"]
        self.preps = ["of", "in", "on", "with", "at", "for", "from", "by", "about", "into",
                      "over", "under", "after", "against"]
        self.subords = ["because", "when", "if", "while", "although", "before"]
        self.modals = ["will", "can", "could", "would", "may", "should"]
        self.conjs = ["and", "or", "but"]
        self._zipf = {}
        # attachment preferences
        self.site_bias = {(kind, p): rng.normal(0, 1.0) for kind in ("V", "N") for p in self.preps}
        self.site_bias[("N", "of")] = 4.0
        self.site_bias[("V", "of")] = -4.0
        self.aff = {}
        self.compound = {}
        self.adv_aff = {v: rng.normal(0, 1.5) for v in self.advs}

    def affinity(self, word, prep):
        key = (word.rstrip("s").lower(), prep)
        if key not in self.aff:
            self.aff[key] = self.rng.normal(0, 1.6)
        return self.aff[key]

    def left_branching(self, a, b):
        key = (a, b)
        if key not in self.compound:
            self.compound[key] = self.rng.normal(0, 2.0)
        return self.compound[key]

    def pick(self, rng, words):
        key = id(words)
        if key not in self._zipf:
            p = 1.0 / np.arange(1, len(words) + 1, dtype=float) ** 0.9
            self._zipf[key] = p / p.sum()
        return words[rng.choice(len(words), p=self._zipf[key])]


class Builder:
    def __init__(self, rng, lex):
        self.rng = rng
        self.lex = lex
        self.toks = []  # [form, tag, head]

    def add(self, form, tag):
        self.toks.append([form, tag, None])
        return len(self.toks)

    def attach(self, dep, head):
        self.toks[dep - 1][2] = head

    def coin(self, p):
        return self.rng.random() < p

    def word(self, i):
        return self.toks[i - 1][0]

    def tag(self, i):
        return self.toks[i - 1][1]

    # noun phrases ------------------------------------------------------

    def noun(self, plural_p=0.3):
        n = self.lex.pick(self.rng, self.lex.nouns)
        if self.coin(plural_p):
            return self.add(n + "s", "NNS")
        return self.add(n, "NN")

    def noun_phrase(self, depth, pronoun_ok=True, postmod=True):
        lex, r = self.lex, self.rng.random()
        if pronoun_ok and r < 0.12:
            return self.add(self.rng.choice(lex.prons), "PRP")
        if r < 0.24:
            head = self.add(lex.pick(self.rng, lex.names), "NNP")
            while self.coin(0.3):
                nxt = self.add(lex.pick(self.rng, lex.names), "NNP")
                self.attach(head, nxt)
                head = nxt
        else:
            pre = []
            if self.coin(0.75):
                pre.append(self.add(self.rng.choice(lex.dets), "DT"))
            if self.coin(0.08):
                pre.append(self.add(self.rng.choice(lex.nums), "CD"))
            while len(pre) < 4 and self.coin(0.35):
                if self.coin(0.15):
                    adv = self.add(lex.pick(self.rng, lex.advs), "RB")
                    adj = self.add(lex.pick(self.rng, lex.adjs), "JJ")
                    self.attach(adv, adj)
                    pre.append(adj)
                else:
                    pre.append(self.add(lex.pick(self.rng, lex.adjs), "JJ"))
            r = self.rng.random()
            if r < 0.12:
                # three-noun compound, bracketed by preference
                a = self.add(lex.pick(self.rng, lex.nouns), "NN")
                b = self.add(lex.pick(self.rng, lex.nouns), "NN")
                head = self.noun()
                left = lex.left_branching(self.word(a), self.word(b)) + self.rng.normal(0, 0.7) > 0
                self.attach(a, b if left else head)
                self.attach(b, head)
            elif r < 0.3:
                a = self.add(lex.pick(self.rng, lex.nouns), "NN")
                head = self.noun()
                self.attach(a, head)
            else:
                head = self.noun()
            for d in pre:
                self.attach(d, head)
        if postmod and depth < 4:
            r = self.rng.random()
            if r < 0.06:
                self.attach(self.relative_clause(depth + 1), head)
            elif r < 0.09:
                self.attach(self.participial(depth + 1), head)
            elif r < 0.11 and depth < 2:
                c1 = self.add(",", ",")
                app = self.noun_phrase(depth + 1, pronoun_ok=False, postmod=False)
                c2 = self.add(",", ",")
                for d in (c1, app, c2):
                    self.attach(d, head)
            if self.coin(0.07):
                if self.coin(0.25):
                    self.attach(self.add(",", ","), head)
                cc = self.add(self.rng.choice(lex.conjs), "CC")
                other = self.noun_phrase(depth + 1, postmod=False)
                self.attach(cc, head)
                self.attach(other, head)
        return head

    def prep_phrase(self, depth, prep):
        p = self.add(prep, "IN")
        obj = self.noun_phrase(depth + 1, pronoun_ok=self.coin(0.3), postmod=self.coin(0.5))
        self.attach(obj, p)
        return p, obj

    def attach_pps(self, depth, sites, count):
        """Add prepositional phrases, each attached to a right-frontier site."""
        for _ in range(count):
            if len(self.toks) > 45:
                return sites
            prep = self.lex.pick(self.rng, self.lex.preps)
            scores = []
            for k, s in enumerate(sites):
                kind = "V" if self.tag(s).startswith("V") else "N"
                scores.append(self.lex.site_bias[(kind, prep)] + self.lex.affinity(self.word(s), prep)
                              - 0.6 * (len(sites) - 1 - k) + self.rng.gumbel() * 0.6)
            k = int(np.argmax(scores))
            p, obj = self.prep_phrase(depth, prep)
            self.attach(p, sites[k])
            sites = sites[:k + 1] + ([obj] if self.tag(obj) != "PRP" else [])
        return sites

    # clauses -----------------------------------------------------------

    def relative_clause(self, depth):
        lex = self.lex
        wdt = self.add(self.rng.choice(["that", "which", "who"]), "WDT")
        trans = self.coin(0.5)
        verb = self.add(lex.pick(self.rng, lex.trans if trans else lex.intrans), "VBD")
        self.attach(wdt, verb)
        sites = [verb]
        if trans:
            obj = self.noun_phrase(depth + 1, postmod=False)
            self.attach(obj, verb)
            sites.append(obj)
        if self.coin(0.3):
            self.attach_pps(depth, sites, 1)
        return verb

    def participial(self, depth):
        verb = self.add(self.lex.pick(self.rng, self.lex.trans) + "ed", "VBN")
        p, _ = self.prep_phrase(depth, "by")
        self.attach(p, verb)
        return verb

    def verb_phrase(self, depth, subj, clause_verbs):
        """Verb and its complements; returns the verb."""
        lex = self.lex
        pre = [subj]
        if self.coin(0.18):
            pre.append(self.add(self.rng.choice(lex.modals), "MD"))
            tag = "VB"
        else:
            tag = "VBD" if self.coin(0.7) else "VBZ"
        if self.coin(0.1):
            pre.append(self.add(lex.pick(self.rng, lex.advs), "RB"))
        r = self.rng.random()
        if depth >= 3:
            r = min(r, 0.8)
        kind = ("trans" if r < 0.5 else "intrans" if r < 0.72 else "ditrans" if r < 0.8
                else "saying" if r < 0.9 else "control")
        vword = lex.pick(self.rng, getattr(lex, kind))
        verb = self.add(vword if tag != "VBZ" else vword + "s", tag)
        clause_verbs.append(verb)
        for d in pre:
            self.attach(d, verb)
        sites = [verb]
        if kind in ("trans", "ditrans"):
            if kind == "ditrans":
                io = self.noun_phrase(depth + 1, postmod=False)
                self.attach(io, verb)
            obj = self.noun_phrase(depth + 1)
            self.attach(obj, verb)
            if self.tag(obj) != "PRP":
                sites.append(obj)
        if kind in ("trans", "intrans", "ditrans"):
            if self.coin(0.6):
                count = 1 + int(self.coin(0.4)) + int(self.coin(0.15))
                self.attach_pps(depth, sites, count)
        elif kind == "saying":
            that = self.add("that", "IN") if self.coin(0.5) else None
            comp = self.clause(depth + 1, clause_verbs)
            if that:
                self.attach(that, comp)
            self.attach(comp, verb)
        else:
            to = self.add("to", "TO")
            inf = self.add(lex.pick(self.rng, lex.trans), "VB")
            clause_verbs.append(inf)
            self.attach(to, inf)
            self.attach(inf, verb)
            obj = self.noun_phrase(depth + 1)
            self.attach(obj, inf)
            if self.coin(0.4):
                self.attach_pps(depth, [inf, obj], 1)
        return verb

    def clause(self, depth, clause_verbs):
        subj = self.noun_phrase(depth, postmod=depth < 2)
        verb = self.verb_phrase(depth, subj, clause_verbs)
        if depth < 2 and self.coin(0.12):
            sub = self.add(self.rng.choice(self.lex.subords), "IN")
            sverb = self.clause(depth + 2, clause_verbs)
            self.attach(sub, sverb)
            self.attach(sverb, verb)
        return verb

    def sentence(self):
        lex = self.lex
        verbs = []
        front = []
        if self.coin(0.12):
            sub = self.add(self.rng.choice(lex.subords), "IN")
            sverb = self.clause(2, verbs)
            self.attach(sub, sverb)
            front = [sverb, self.add(",", ",")]
        elif self.coin(0.08):
            p, _ = self.prep_phrase(2, lex.pick(self.rng, lex.preps))
            front = [p, self.add(",", ",")]
        start = len(self.toks) + 1
        root = self.clause(0, verbs)
        for d in front:
            self.attach(d, root)
        if self.coin(0.12) and len(self.toks) < 30:
            if self.coin(0.6):
                self.attach(self.add(",", ","), root)
            self.attach(self.add(self.rng.choice(lex.conjs), "CC"), root)
            self.attach(self.clause(1, verbs), root)
        if self.coin(0.1):
            # a final adverb modifies the main verb or the innermost open verb
            open_verbs = [v for v in verbs if v >= start and self._governs_end(v)]
            adv = self.add(lex.pick(self.rng, lex.advs), "RB")
            z = lex.adv_aff[self.word(adv)] + self.rng.normal(0, 0.8)
            self.attach(adv, open_verbs[-1] if z > 0 and open_verbs else root)
        self.attach(root, 0)
        self.attach(self.add(".", "."), root)
        return self.toks

    def _governs_end(self, v):
        """True when v dominates the last token added so far."""
        t = len(self.toks)
        while t and t != v:
            t = self.toks[t - 1][2]
        return t == v


def grammar_sentence(rng, lex, max_len=50):
    while True:
        toks = Builder(rng, lex).sentence()
        if 3 <= len(toks) <= max_len:
            sentence = Sentence.from_words([(f, t) for f, t, _ in toks])
            tree = DepTree(tuple(h for _, _, h in toks)).validate()
            return sentence, tree


def grammar_treebank(count, rng, lex):
    return [grammar_sentence(rng, lex) for _ in range(count)]


SEPARABLE_SHAPES = [
    (0,),
    (2, 0),
    (2, 0, 2),
    (0, 3, 1, 3),
    (2, 5, 2, 5, 0),
]


def separable_treebank(count=20):
    out = []
    for i in range(count):
        p = i % len(SEPARABLE_SHAPES)
        heads = SEPARABLE_SHAPES[p]
        words = [(f"s{p}p{k}v{i // len(SEPARABLE_SHAPES)}", f"S{p}P{k}") for k in range(len(heads))]
        out.append((Sentence.from_words(words), DepTree(heads).validate()))
    return out


def main(outdir="data/synthetic"):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    lex = Lexicon(rng)
    save_treebank(separable_treebank(), out / "separable.conll")
    save_treebank(grammar_treebank(2000, rng, lex), out / "train.conll")
    save_treebank(grammar_treebank(300, rng, lex), out / "dev.conll")
    save_treebank(grammar_treebank(300, rng, lex), out / "test.conll")


if __name__ == "__main__":
    main(*sys.argv[1:])
