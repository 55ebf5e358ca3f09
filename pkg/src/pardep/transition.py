"""Arc-eager transition system, static oracle and beam search.

The root (position 0) sits at the bottom of the stack.  Besides the usual
arc-eager preconditions, ``legal_actions`` bars the moves that can no
longer end in a projective single-root tree:

* RIGHT_ARC from the root once the root has a dependent,
* SHIFT of the last buffer token (it could never receive a head),
* RIGHT_ARC onto the last buffer token while some stack token still lacks
  a head,
* REDUCE of the root's dependent while the buffer is non-empty.

With these, every action sequence ends (buffer empty) in a valid tree, and
every projective single-root tree is reachable.

``constrained_legal_actions`` further keeps only moves that preserve every
arc of a partial tree (after Nivre et al.'s arc-constrained arc-eager
procedure).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import DepTree, PartialTree, Sentence, TreebankError
from .features import (SLOT_NONE, LinearModel, SentenceAtoms, conjoined_indices, context_hashes,
                       score_actions)


class Action(enum.IntEnum):
    SHIFT = 0
    LEFT_ARC = 1
    RIGHT_ARC = 2
    REDUCE = 3


class DeadlockError(RuntimeError):
    """A non-terminal configuration has no permitted action."""


class Configuration:
    """Parser state.  Treated as immutable: transitions return new objects.

    ``heads[i]`` is -1 while token i has no head.  ``ldep1``/``ldep2`` hold
    the leftmost and second leftmost dependents, ``rdep1``/``rdep2`` the
    rightmost ones (SLOT_NONE when absent).
    """

    __slots__ = ("n", "stack", "buffer", "heads", "ldep1", "ldep2", "rdep1", "rdep2",
                 "nleft", "nright", "headless", "root_dep")

    def __init__(self, n, stack, buffer, heads, ldep1, ldep2, rdep1, rdep2, nleft, nright,
                 headless, root_dep):
        self.n = n
        self.stack = stack
        self.buffer = buffer
        self.heads = heads
        self.ldep1 = ldep1
        self.ldep2 = ldep2
        self.rdep1 = rdep1
        self.rdep2 = rdep2
        self.nleft = nleft
        self.nright = nright
        self.headless = headless  # stack tokens other than the root still lacking a head
        self.root_dep = root_dep

    @classmethod
    def initial(cls, n: int) -> "Configuration":
        none = [SLOT_NONE] * (n + 1)
        return cls(n, (0,), 1, [-1] * (n + 1), none, none, none, none, [0] * (n + 1),
                   [0] * (n + 1), 0, 0)

    @property
    def terminal(self) -> bool:
        return self.buffer > self.n

    def arcs(self) -> dict[int, int]:
        return {m: h for m, h in enumerate(self.heads) if m >= 1 and h >= 0}

    def key(self):
        return self.stack, self.buffer, tuple(self.heads)

    def __eq__(self, other):
        return isinstance(other, Configuration) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Configuration(stack={list(self.stack)}, buffer={self.buffer}, arcs={self.arcs()})"

    def to_tree(self) -> DepTree:
        if not self.terminal:
            raise ValueError("configuration is not terminal")
        return DepTree(tuple(self.heads[1:]))

    def _attach(self, h: int, d: int) -> "Configuration":
        heads = list(self.heads)
        heads[d] = h
        ldep1, ldep2, rdep1, rdep2 = self.ldep1, self.ldep2, self.rdep1, self.rdep2
        nleft, nright = self.nleft, self.nright
        if d < h:
            ldep1, ldep2, nleft = list(ldep1), list(ldep2), list(nleft)
            ldep2[h] = ldep1[h]
            ldep1[h] = d
            nleft[h] += 1
        else:
            rdep1, rdep2, nright = list(rdep1), list(rdep2), list(nright)
            rdep2[h] = rdep1[h]
            rdep1[h] = d
            nright[h] += 1
        return Configuration(self.n, self.stack, self.buffer, heads, ldep1, ldep2, rdep1, rdep2,
                             nleft, nright, self.headless, self.root_dep if h else d)

    def apply(self, action: Action) -> "Configuration":
        s = self.stack[-1]
        b = self.buffer
        if action == Action.SHIFT:
            c = self._copy()
            c.stack = self.stack + (b,)
            c.buffer = b + 1
            c.headless += 1
        elif action == Action.LEFT_ARC:
            c = self._attach(b, s)
            c.stack = self.stack[:-1]
            c.headless -= 1
        elif action == Action.RIGHT_ARC:
            c = self._attach(s, b)
            c.stack = self.stack + (b,)
            c.buffer = b + 1
        elif action == Action.REDUCE:
            c = self._copy()
            c.stack = self.stack[:-1]
        else:
            raise ValueError(f"unknown action {action!r}")
        return c

    def _copy(self) -> "Configuration":
        return Configuration(self.n, self.stack, self.buffer, self.heads, self.ldep1, self.ldep2,
                             self.rdep1, self.rdep2, self.nleft, self.nright, self.headless,
                             self.root_dep)


def legal_actions(config: Configuration, sentence: Optional[Sentence] = None) -> list[Action]:
    """Permitted actions in a fixed order (SHIFT, LEFT_ARC, RIGHT_ARC, REDUCE)."""
    if config.terminal:
        return []
    s = config.stack[-1]
    b = config.buffer
    last = b == config.n
    out = []
    if not last:
        out.append(Action.SHIFT)
    if s != 0 and config.heads[s] < 0:
        out.append(Action.LEFT_ARC)
    if not (s == 0 and config.root_dep) and not (last and config.headless):
        out.append(Action.RIGHT_ARC)
    if s != 0 and config.heads[s] >= 0 and len(config.stack) > 2:
        out.append(Action.REDUCE)
    return out


class PartialConstraint:
    """Precomputed lookups over a partial tree for the action filter."""

    def __init__(self, partial: PartialTree):
        n = partial.n
        self.partial = partial
        self.head = [-1] * (n + 1)
        self.max_dep = [-1] * (n + 1)
        self.left_deps: list[list[int]] = [[] for _ in range(n + 1)]
        self.root_dep = 0
        for m, h in partial.heads.items():
            self.head[m] = h
            self.max_dep[h] = max(self.max_dep[h], m)
            if m < h:
                self.left_deps[h].append(m)
            if h == 0:
                self.root_dep = m
        # rightmost position of each token's constrained subtree
        self.reach = list(range(n + 1))
        for m in range(1, n + 1):
            h = self.head[m]
            seen = {m}
            while h > 0 and h not in seen:
                seen.add(h)
                self.reach[h] = max(self.reach[h], m)
                h = self.head[h]

    def permits(self, config: Configuration, action: Action) -> bool:
        s = config.stack[-1]
        b = config.buffer
        heads = config.heads
        if action == Action.SHIFT:
            ph = self.head[b]
            if 0 <= ph < b:
                return False
            # a shifted token needs a head further right than its subtree
            if self.reach[b] >= config.n:
                return False
            return all(heads[d] >= 0 for d in self.left_deps[b])
        if action == Action.LEFT_ARC:
            ph = self.head[s]
            return (ph < 0 or ph == b) and self.max_dep[s] < b
        if action == Action.RIGHT_ARC:
            ph = self.head[b]
            if ph >= 0 and ph != s:
                return False
            if s == 0 and self.root_dep not in (0, b):
                return False
            # headless stack tokens would be left without a head to their right
            if config.headless and self.reach[b] >= config.n:
                return False
            return all(heads[d] >= 0 for d in self.left_deps[b])
        return self.max_dep[s] < b


def constrained_legal_actions(config: Configuration, sentence: Optional[Sentence],
                              partial: "PartialTree | PartialConstraint") -> list[Action]:
    if not isinstance(partial, PartialConstraint):
        partial = PartialConstraint(partial)
    return [a for a in legal_actions(config) if partial.permits(config, a)]


def replay(n: int, actions: Sequence[Action]) -> list[Configuration]:
    """Configurations visited by an action sequence, initial one first."""
    configs = [Configuration.initial(n)]
    for a in actions:
        c = configs[-1]
        if a not in legal_actions(c):
            raise ValueError(f"illegal action {Action(a).name} in {c}")
        configs.append(c.apply(Action(a)))
    return configs


def static_oracle(sentence: Sentence, gold: DepTree) -> list[Action]:
    """The canonical arc-eager action sequence that rebuilds ``gold``."""
    n = len(sentence)
    if len(gold) != n:
        raise ValueError("tree and sentence lengths differ")
    gold.validate()
    heads = (-1,) + gold.heads
    config = Configuration.initial(n)
    actions = []
    while not config.terminal:
        s = config.stack[-1]
        b = config.buffer
        if s != 0 and heads[s] == b:
            a = Action.LEFT_ARC
        elif heads[b] == s:
            a = Action.RIGHT_ARC
        elif s != 0 and config.heads[s] >= 0 and any(
                heads[b] == k or heads[k] == b for k in config.stack[:-1]):
            a = Action.REDUCE
        else:
            a = Action.SHIFT
        if a not in legal_actions(config):
            raise TreebankError("gold tree is not reachable by the arc-eager system")
        actions.append(a)
        config = config.apply(a)
    if config.heads[1:] != list(gold.heads):
        raise TreebankError("static oracle failed to rebuild the gold tree")
    return actions


# ---------------------------------------------------------------------------
# beam search


@dataclass
class BeamItem:
    configuration: Configuration
    history: tuple
    score: float

    @property
    def terminal(self) -> bool:
        return self.configuration.terminal

    def tree(self) -> DepTree:
        return self.configuration.to_tree()


class _Search:
    def __init__(self, sentence: Sentence, model: LinearModel, atoms: Optional[SentenceAtoms] = None):
        self.n = len(sentence)
        self.atoms = atoms or SentenceAtoms(sentence)
        self.model = model
        self.templates = model.config.templates()

    def scores(self, configurations) -> np.ndarray:
        ctx = context_hashes(configurations, self.atoms, self.templates)
        return score_actions(ctx, self.model.weights, self.model.config)

    def step(self, beam: list[BeamItem], beam_size: int, constraint: Optional[PartialConstraint],
             flags: Optional[list[bool]] = None, reference: Optional[tuple] = None):
        active = [i for i, it in enumerate(beam) if not it.terminal]
        table = self.scores([beam[i].configuration for i in active])
        row = {i: r for r, i in enumerate(active)}
        candidates = []
        for i, item in enumerate(beam):
            if item.terminal:
                candidates.append((item.score, len(candidates), i, None))
                continue
            c = item.configuration
            actions = legal_actions(c)
            if constraint is not None:
                actions = [a for a in actions if constraint.permits(c, a)]
            if not actions:
                raise DeadlockError(f"no permitted action in {c}")
            for a in actions:
                candidates.append((item.score + table[row[i], a], len(candidates), i, a))
        candidates.sort(key=lambda x: (-x[0], x[1]))
        out = []
        out_flags = []
        for score, _, i, a in candidates[:beam_size]:
            parent = beam[i]
            if a is None:
                out.append(parent)
            else:
                out.append(BeamItem(parent.configuration.apply(a), parent.history + (a,), score))
            if flags is not None:
                on_ref = flags[i] and (a is None or (len(parent.history) < len(reference)
                                                     and reference[len(parent.history)] == a))
                out_flags.append(on_ref)
        return out, out_flags


def beam_decode(sentence: Sentence, model: LinearModel, beam_size: int,
                partial: Optional[PartialTree] = None, atoms: Optional[SentenceAtoms] = None) -> BeamItem:
    """Highest-scoring terminal item found by beam search.

    Finished items stay in the beam and compete by total score.  With
    ``partial`` only action sequences whose tree contains it are explored.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    n = len(sentence)
    constraint = None
    if partial is not None:
        if partial.n != n:
            raise ValueError("partial tree and sentence lengths differ")
        partial.validate()
        constraint = PartialConstraint(partial)
    search = _Search(sentence, model, atoms)
    beam = [BeamItem(Configuration.initial(n), (), 0.0)]
    while not all(it.terminal for it in beam):
        beam, _ = search.step(beam, beam_size, constraint)
    return beam[0]


def beam_decode_with_reference(sentence: Sentence, model: LinearModel, beam_size: int,
                               reference: Sequence[Action],
                               atoms: Optional[SentenceAtoms] = None) -> tuple[BeamItem, Optional[int]]:
    """Unconstrained beam search that stops as soon as ``reference`` leaves the beam.

    Returns the best item at that step and the step number (1-based), or the
    final best item and None when the reference survives to the end.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    reference = tuple(Action(a) for a in reference)
    search = _Search(sentence, model, atoms)
    beam = [BeamItem(Configuration.initial(len(sentence)), (), 0.0)]
    flags = [True]
    step = 0
    while not all(it.terminal for it in beam):
        beam, flags = search.step(beam, beam_size, None, flags, reference)
        step += 1
        if not any(flags):
            return beam[0], step
    return beam[0], None


def sequence_feature_indices(sentence: Sentence, actions: Sequence[Action], model_config,
                             atoms: Optional[SentenceAtoms] = None) -> np.ndarray:
    """Index multiset of the features scoring each action of a sequence."""
    if not actions:
        return np.zeros(0, dtype=np.int64)
    atoms = atoms or SentenceAtoms(sentence)
    configs = replay(len(sentence), actions)[:-1]
    ctx = context_hashes(configs, atoms, model_config.templates())
    return conjoined_indices(ctx, [int(a) for a in actions], model_config)


def score_sequence(sentence: Sentence, model: LinearModel, actions: Sequence[Action]) -> float:
    """Re-score a history from scratch, summing action scores in order."""
    if not actions:
        return 0.0
    configs = replay(len(sentence), actions)[:-1]
    table = _Search(sentence, model).scores(configs)
    total = 0.0
    for r, a in enumerate(actions):
        total += table[r, int(a)]
    return total
